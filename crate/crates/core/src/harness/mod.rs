//! Run orchestration: configuration loading, ablation variants, continual
//! prefix traces, randomized verifiers and report output.

mod pipeline;
mod report;
pub mod verify;

pub use pipeline::{
    load_config, load_inputs, run_ablation, run_cfp_trace, run_pipeline, Inputs, Run, Variant,
};
pub use report::{GridEntry, MetricSummary, PhaseTiming, PrefixEntry, Report};
