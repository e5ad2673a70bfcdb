use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::buffer::PairStrategy;
use crate::error::{Error, Result};
use crate::fusion::{run_continual_with, FusionState, RunConfig};
use crate::view::{generate_synthetic_stream, load_labels, load_view_csv, ViewMatrix};

use super::report::{GridEntry, Report};

/// Ablation variants: the full method, the fusion-only special case (λ = 0),
/// and the four alternative pair-selection strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Fsf,
    Imvc,
    Graph,
    SelfOnly,
    KMeans,
    Random,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Fsf,
        Variant::Imvc,
        Variant::Graph,
        Variant::SelfOnly,
        Variant::KMeans,
        Variant::Random,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Variant::Fsf => "FSF",
            Variant::Imvc => "IMVC",
            Variant::Graph => "G",
            Variant::SelfOnly => "S",
            Variant::KMeans => "K",
            Variant::Random => "RS",
        }
    }

    /// `config` with this variant's λ and strategy. Seeds are untouched so
    /// variants run on identical randomness.
    pub fn apply(self, config: &RunConfig) -> RunConfig {
        let mut c = config.clone();
        match self {
            Variant::Fsf => c.strategy = PairStrategy::ClusterThenSample,
            Variant::Imvc => {
                c.strategy = PairStrategy::ClusterThenSample;
                c.lambda = 0.0;
                c.lambda_grid = false;
            }
            Variant::Graph => c.strategy = PairStrategy::Graph,
            Variant::SelfOnly => c.strategy = PairStrategy::SelfOnly,
            Variant::KMeans => c.strategy = PairStrategy::KMeans,
            Variant::Random => c.strategy = PairStrategy::Random,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

/// Reads and validates a JSON run configuration.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// Views and optional labels of one run.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub views: Vec<ViewMatrix>,
    pub labels: Option<Vec<usize>>,
}

/// Loads view CSVs in the given order, or generates the configured synthetic
/// stream when no view files are given.
pub fn load_inputs(config: &RunConfig, view_paths: &[PathBuf], labels_path: Option<&Path>) -> Result<Inputs> {
    let (views, generated_labels) = if view_paths.is_empty() {
        let spec = config
            .synthetic
            .as_ref()
            .ok_or_else(|| Error::Config("no view files given and config has no `synthetic` section".into()))?;
        let (views, labels) = generate_synthetic_stream(spec)?;
        (views, Some(labels))
    } else {
        let mut views = Vec::with_capacity(view_paths.len());
        for (i, p) in view_paths.iter().enumerate() {
            let mut v = load_view_csv(p, config.has_header)?;
            v.view_index = i + 1;
            views.push(v);
        }
        (views, None)
    };
    let labels = match labels_path {
        Some(p) => Some(load_labels(p)?),
        None => generated_labels,
    };
    Ok(Inputs { views, labels })
}

/// A finished run: the report and the solver state after the last view.
#[derive(Clone, Debug)]
pub struct Run {
    pub report: Report,
    pub state: FusionState,
}

/// Runs the continual solver over `inputs`; in grid mode every λ in
/// 2^-10 … 2^0 is tried and the run with the best final ACC is reported
/// (ties go to the smaller λ).
pub fn run_pipeline(config: &RunConfig, inputs: &Inputs) -> Result<Run> {
    config.validate()?;
    if !config.lambda_grid {
        let (state, report) = run_continual_with(&inputs.views, inputs.labels.as_deref(), config, false)?;
        report.check()?;
        return Ok(Run { report, state });
    }
    if !config.metrics || inputs.labels.is_none() {
        return Err(Error::InvalidInput("lambda grid search needs labels to rank runs".into()));
    }
    let mut best: Option<Run> = None;
    let mut grid = Vec::new();
    for lambda in RunConfig::lambda_grid_values() {
        let run_config = RunConfig {
            lambda,
            lambda_grid: false,
            ..config.clone()
        };
        let (state, report) = run_continual_with(&inputs.views, inputs.labels.as_deref(), &run_config, false)?;
        report.check()?;
        let acc = report.final_metrics().map_or(0.0, |m| m.acc);
        grid.push(GridEntry {
            lambda,
            metrics: report.final_metrics(),
        });
        let better = best
            .as_ref()
            .is_none_or(|b| acc > b.report.final_metrics().map_or(0.0, |m| m.acc));
        if better {
            best = Some(Run { report, state });
        }
    }
    let mut run = best.expect("grid is non-empty");
    run.report.config.lambda_grid = true;
    run.report.lambda_grid = Some(grid);
    Ok(run)
}

pub fn run_ablation(config: &RunConfig, inputs: &Inputs, variant: Variant) -> Result<Run> {
    let mut run = run_pipeline(&variant.apply(config), inputs)?;
    run.report.variant = variant.code().to_string();
    Ok(run)
}

/// Prefix trace with each view's own ("Each") scores alongside the fused ones.
pub fn run_cfp_trace(config: &RunConfig, inputs: &Inputs) -> Result<Run> {
    let (state, report) = run_continual_with(&inputs.views, inputs.labels.as_deref(), config, true)?;
    report.check()?;
    Ok(Run { report, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::SyntheticSpec;

    fn small_config() -> RunConfig {
        RunConfig {
            kmeans_restarts: 3,
            synthetic: Some(SyntheticSpec::clean(60, 2, 2, 8.0, 1)),
            ..RunConfig::default()
        }
    }

    #[test]
    fn variants_parse_and_apply() {
        for v in Variant::ALL {
            assert_eq!(v.code().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("nope".parse::<Variant>(), Err(Error::UnknownStrategy(_))));
        let c = Variant::Imvc.apply(&RunConfig::default());
        assert_eq!(c.lambda, 0.0);
        assert_eq!(Variant::Random.apply(&c).strategy, PairStrategy::Random);
    }

    #[test]
    fn imvc_has_zero_contrastive_term() {
        let config = small_config();
        let inputs = load_inputs(&config, &[], None).unwrap();
        let report = run_ablation(&config, &inputs, Variant::Imvc).unwrap().report;
        assert_eq!(report.variant, "IMVC");
        assert!(report.traces.iter().all(|t| t.contrastive.iter().all(|&c| c == 0.0)));
    }

    #[test]
    fn cfp_trace_single_view_matches_each() {
        let mut config = small_config();
        config.synthetic = Some(SyntheticSpec::clean(60, 2, 1, 8.0, 1));
        config.lambda = 0.0;
        let inputs = load_inputs(&config, &[], None).unwrap();
        let report = run_cfp_trace(&config, &inputs).unwrap().report;
        assert_eq!(report.prefixes.len(), 1);
        let p = &report.prefixes[0];
        assert_eq!(p.metrics, p.each);
    }

    #[test]
    fn grid_mode_records_every_lambda() {
        let mut config = small_config();
        config.lambda_grid = true;
        let inputs = load_inputs(&config, &[], None).unwrap();
        let report = run_pipeline(&config, &inputs).unwrap().report;
        let grid = report.lambda_grid.as_ref().unwrap();
        assert_eq!(grid.len(), 11);
        let best = grid.iter().map(|g| g.metrics.unwrap().acc).fold(0.0, f64::max);
        assert_eq!(report.final_metrics().unwrap().acc, best);
    }

    #[test]
    fn missing_synthetic_section_is_a_config_error() {
        let config = RunConfig::default();
        assert!(matches!(load_inputs(&config, &[], None), Err(Error::Config(_))));
    }

    #[test]
    fn bad_config_json_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, "{\"lambda\": \"x\"}").unwrap();
        assert!(matches!(load_config(&p), Err(Error::Config(_))));
        fs::write(&p, "{\"unknown_field\": 1}").unwrap();
        assert!(matches!(load_config(&p), Err(Error::Config(_))));
        fs::write(&p, "{\"lambda\": 0.25, \"budget\": {\"fixed\": 12}}").unwrap();
        let c = load_config(&p).unwrap();
        assert_eq!(c.lambda, 0.25);
        assert_eq!(c.budget, crate::buffer::SampleBudget::Fixed(12));
    }
}
