//! Filtered structural information.
//!
//! Per view, a few positive and negative partners are mined for every sample
//! ([`cluster_then_sample`] or one of the ablation strategies in
//! [`select_pairs`]). The pairs become a three-valued symmetric indicator
//! ([`build_indicator`]) that is folded into the running [`StructuralBuffer`]
//! with [`merge_buffer`]; pairs that the views disagree on are tombstoned.

mod bounds;
mod pairs;
mod store;

pub use bounds::{mean_bound_rhs, std_bound_rhs, verify_mean_bound, verify_std_bound};
pub use pairs::{
    cluster_then_sample, cosine_rows, select_pairs, AblationOptions, PairSelection, PairStrategy,
    SampleBudget,
};
pub use store::{build_indicator, merge_buffer, PairSign, StructuralBuffer};
