use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::contrastive::contrastive_loss;
use super::partition::{PartitionMatrix, PartitionRole, RotationMatrix};
use super::procrustes::solve_rotation;
use super::stiefel::{solve_partition, InnerOptions};
use crate::buffer::{build_indicator, merge_buffer, select_pairs, AblationOptions, PairSign, PairStrategy, SampleBudget, StructuralBuffer};
use crate::error::{Error, Result};
use crate::harness::{MetricSummary, PhaseTiming, PrefixEntry, Report};
use crate::rng::{derive_seed, stream};
use crate::view::{check_stream, class_count, extract_partition_with, PartitionOptions, SyntheticSpec, ViewMatrix};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Every knob of a run. Missing fields in a JSON config take these defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Weight of the contrastive term.
    pub lambda: f64,
    /// Sweep λ over 2^-10 … 2^0 and keep the best final ACC.
    pub lambda_grid: bool,
    pub w_p: f64,
    pub w_n: f64,
    pub m_p: usize,
    pub m_n: usize,
    pub budget: SampleBudget,
    /// Relative objective change that ends the per-view loop.
    pub epsilon0: f64,
    pub max_outer_iters: usize,
    pub inner: InnerOptions,
    pub seed: u64,
    pub strategy: PairStrategy,
    pub ablation: AblationOptions,
    /// Restrict the contrastive term to contiguous batches of this size.
    pub batch_size: Option<usize>,
    /// k-means runs averaged for every reported metric.
    pub kmeans_restarts: usize,
    /// Cluster count; inferred from the labels when absent.
    pub clusters: Option<usize>,
    pub partition: PartitionOptions,
    /// Whether view CSV files start with a header row.
    pub has_header: bool,
    /// Score every prefix against ground-truth labels (which are then
    /// required).
    pub metrics: bool,
    /// Generate the views instead of reading files.
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            lambda: 1.0,
            lambda_grid: false,
            w_p: 1.0,
            w_n: 0.2,
            m_p: 5,
            m_n: 5,
            budget: SampleBudget::SqrtN,
            epsilon0: 1e-4,
            max_outer_iters: 200,
            inner: InnerOptions::default(),
            seed: 0,
            strategy: PairStrategy::ClusterThenSample,
            ablation: AblationOptions::default(),
            batch_size: None,
            kmeans_restarts: 50,
            clusters: None,
            partition: PartitionOptions::default(),
            has_header: false,
            metrics: true,
            synthetic: None,
        }
    }
}

impl RunConfig {
    /// λ values searched in grid mode.
    pub fn lambda_grid_values() -> Vec<f64> {
        (-10..=0).map(|e| 2f64.powi(e)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return fail(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.w_p > 0.0 && self.w_n > 0.0) {
            return fail("w_p and w_n must be positive".into());
        }
        if !(self.epsilon0 > 0.0) {
            return fail("epsilon0 must be positive".into());
        }
        if self.max_outer_iters == 0 || self.inner.max_iters == 0 {
            return fail("iteration limits must be positive".into());
        }
        if self.kmeans_restarts == 0 {
            return fail("kmeans_restarts must be positive".into());
        }
        if self.batch_size == Some(0) {
            return fail("batch_size must be positive".into());
        }
        if let Some(k) = self.clusters {
            if k < 2 {
                return fail("clusters must be at least 2".into());
            }
        }
        Ok(())
    }

    pub fn fusion_params(&self) -> FusionParams {
        FusionParams {
            lambda: self.lambda,
            epsilon0: self.epsilon0,
            max_outer_iters: self.max_outer_iters,
            inner: self.inner,
            batch_size: self.batch_size,
        }
    }
}

/// Parameters of one call to [`fuse_view`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionParams {
    pub lambda: f64,
    pub epsilon0: f64,
    pub max_outer_iters: usize,
    pub inner: InnerOptions,
    pub batch_size: Option<usize>,
}

impl Default for FusionParams {
    fn default() -> Self {
        RunConfig::default().fusion_params()
    }
}

/// Objective trace of one fused view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewTrace {
    pub view: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    /// Objective at the starting point, then after every outer iteration.
    pub objective: Vec<f64>,
    /// The `λ·Tr(CW)` part of each entry of `objective`.
    pub contrastive: Vec<f64>,
    /// `2k + λ‖W‖_F` for this view.
    pub upper_bound: f64,
}

/// Running state of the continual solver.
#[derive(Clone, Debug)]
pub struct FusionState {
    pub consensus: PartitionMatrix,
    pub buffer: StructuralBuffer,
    /// Views fused so far.
    pub t: usize,
    pub history: Vec<ViewTrace>,
}

impl FusionState {
    /// State before the first view: the consensus starts as the first view's
    /// partition and the buffer is empty.
    pub fn initial(first: &PartitionMatrix, w_p: f64, w_n: f64) -> Result<Self> {
        Ok(Self {
            consensus: first.clone().with_role(PartitionRole::Consensus),
            buffer: StructuralBuffer::empty(first.n(), w_p, w_n)?,
            t: 0,
            history: Vec::new(),
        })
    }
}

/// `Tr(H*ᵀ(H_prev + H_t M)) + λ·Tr(C W)`.
pub fn objective_value(
    h_star: &PartitionMatrix,
    h_prev: &PartitionMatrix,
    h_t: &PartitionMatrix,
    m: &RotationMatrix,
    lambda: f64,
    w: &StructuralBuffer,
) -> Result<f64> {
    Ok(fusion_term(h_star, h_prev, h_t, m) + contrastive_term(h_star, lambda, w)?)
}

fn fusion_term(h_star: &PartitionMatrix, h_prev: &PartitionMatrix, h_t: &PartitionMatrix, m: &RotationMatrix) -> f64 {
    h_star.values().dot(h_prev.values()) + h_star.values().dot(&(h_t.values() * m.values()))
}

fn contrastive_term(h_star: &PartitionMatrix, lambda: f64, w: &StructuralBuffer) -> Result<f64> {
    if lambda == 0.0 {
        return Ok(0.0);
    }
    Ok(lambda * contrastive_loss(h_star.values(), w)?)
}

const MONOTONE_TOL: f64 = 1e-9;

fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / new.abs().max(1e-12)
}

/// Fuses one view into the consensus.
///
/// `state.buffer` must already contain the view's own pairs. Starting from
/// `M = I` and the previous consensus, the partition and rotation subproblems
/// alternate until the relative objective change drops to `ε0`. A decrease
/// beyond 1e-9 or an objective above `2k + λ‖W‖_F` is reported as an invariant
/// violation.
pub fn fuse_view(state: &FusionState, h_t: &PartitionMatrix, params: &FusionParams) -> Result<FusionState> {
    let prev = &state.consensus;
    if h_t.n() != prev.n() || h_t.k() != prev.k() {
        return Err(Error::DimensionMismatch(format!(
            "view partition is {}×{}, consensus is {}×{}",
            h_t.n(),
            h_t.k(),
            prev.n(),
            prev.k()
        )));
    }
    if !(params.lambda >= 0.0) {
        return Err(Error::InvalidInput("lambda must be >= 0".into()));
    }
    let w = match params.batch_size {
        Some(b) => state.buffer.restrict_to_batches(b.min(prev.n()))?,
        None => state.buffer.clone(),
    };
    let k = prev.k() as f64;
    let lambda_tilde = params.lambda / k;
    let bound = 2.0 * k + params.lambda * w.frobenius_norm();

    let mut h_star = prev.clone();
    let mut m = RotationMatrix::identity(prev.k());
    let mut contrastive = vec![contrastive_term(&h_star, params.lambda, &w)?];
    let mut objective = vec![fusion_term(&h_star, prev, h_t, &m) + contrastive[0]];
    let mut converged = false;

    for _ in 0..params.max_outer_iters {
        let a = prev.values() + h_t.values() * m.values();
        let solved = solve_partition(&a, lambda_tilde, &w, Some(&h_star), &params.inner)?;
        h_star = solved.h;
        m = solve_rotation(h_t, &h_star)?;

        let c = contrastive_term(&h_star, params.lambda, &w)?;
        let value = fusion_term(&h_star, prev, h_t, &m) + c;
        let last = *objective.last().expect("trace starts non-empty");
        if value < last - MONOTONE_TOL {
            return Err(Error::Invariant(format!(
                "objective decreased from {last} to {value} while fusing view {}",
                state.t + 1
            )));
        }
        if value > bound + MONOTONE_TOL {
            return Err(Error::Invariant(format!("objective {value} exceeds its upper bound {bound}")));
        }
        objective.push(value);
        contrastive.push(c);
        if relative_change(value, last) <= params.epsilon0 {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("view {} did not converge in {} outer iterations", state.t + 1, params.max_outer_iters);
    }

    let mut history = state.history.clone();
    history.push(ViewTrace {
        view: state.t + 1,
        iterations: objective.len() - 1,
        converged,
        final_objective: *objective.last().unwrap(),
        objective,
        contrastive,
        upper_bound: bound,
    });
    Ok(FusionState {
        consensus: h_star,
        buffer: state.buffer.clone(),
        t: state.t + 1,
        history,
    })
}

/// [`run_continual_with`] without the per-view baseline.
pub fn run_continual(views: &[ViewMatrix], labels: Option<&[usize]>, config: &RunConfig) -> Result<(FusionState, Report)> {
    run_continual_with(views, labels, config, false)
}

/// Fuses `views` in order.
///
/// For each view: extract its partition, mine pairs with the configured
/// strategy, merge them into the buffer, then fuse. When labels are given,
/// every prefix consensus is scored by averaging ACC/NMI/purity over
/// `config.kmeans_restarts` k-means runs; `each_baseline` additionally scores
/// every view's own partition.
pub fn run_continual_with(
    views: &[ViewMatrix],
    labels: Option<&[usize]>,
    config: &RunConfig,
    each_baseline: bool,
) -> Result<(FusionState, Report)> {
    config.validate()?;
    let n = check_stream(views)?;
    if config.metrics && labels.is_none() {
        return Err(Error::InvalidInput("metrics requested but no labels were supplied".into()));
    }
    let labels = labels.filter(|_| config.metrics);
    let k = match (config.clusters, labels) {
        (Some(k), _) => k,
        (None, Some(labels)) => class_count(labels)?,
        (None, None) => return Err(Error::Config("cluster count unknown: set `clusters` or supply labels".into())),
    };
    if let Some(labels) = labels {
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!("{} labels for {n} samples", labels.len())));
        }
    }
    let params = config.fusion_params();
    let mut state: Option<FusionState> = None;
    let mut prefixes = Vec::with_capacity(views.len());
    let mut timing = Vec::with_capacity(views.len());

    for (idx, view) in views.iter().enumerate() {
        let t = idx + 1;
        let started = Instant::now();
        let h_t = extract_partition_with(view, k, &config.partition)?;
        let extract_ms = elapsed_ms(started);

        let started = Instant::now();
        let view_seed = derive_seed(config.seed, stream::PAIRS, t as u64);
        let pairs = select_pairs(config.strategy, &h_t, k, config.budget, config.m_p, config.m_n, view_seed, config.ablation)?;
        pairs.validate()?;
        let incoming = build_indicator(&pairs, config.w_p, config.w_n, n)?;
        let mut current = match state.take() {
            Some(s) => s,
            None => FusionState::initial(&h_t, config.w_p, config.w_n)?,
        };
        let conflicts_before = current.buffer.conflicts();
        current.buffer = merge_buffer(&current.buffer, &incoming)?;
        current.buffer.check_invariants()?;
        let pairs_ms = elapsed_ms(started);

        let started = Instant::now();
        let next = fuse_view(&current, &h_t, &params)?;
        let fuse_ms = elapsed_ms(started);

        let started = Instant::now();
        let metric_seed = derive_seed(config.seed, stream::METRICS, t as u64);
        let (fused, each) = match labels {
            Some(labels) => {
                let fused = MetricSummary::evaluate(next.consensus.values(), labels, k, config.kmeans_restarts, metric_seed)?;
                let each = if each_baseline {
                    Some(MetricSummary::evaluate(h_t.values(), labels, k, config.kmeans_restarts, metric_seed)?)
                } else {
                    None
                };
                (Some(fused), each)
            }
            None => (None, None),
        };
        let metrics_ms = elapsed_ms(started);

        let trace = next.history.last().expect("fuse_view appends a trace");
        prefixes.push(PrefixEntry {
            view: t,
            metrics: fused,
            each,
            iterations: trace.iterations,
            converged: trace.converged,
            final_objective: trace.final_objective,
            buffer_pairs: next.buffer.len(),
            positive_pairs: next.buffer.count(PairSign::Positive),
            negative_pairs: next.buffer.count(PairSign::Negative),
            conflicts_resolved: next.buffer.conflicts(),
            new_conflicts: next.buffer.conflicts() - conflicts_before,
            intra_view_dropped: incoming.intra_view_dropped(),
            selection_digest: pairs.digest(),
        });
        timing.push(PhaseTiming {
            view: t,
            extract_ms,
            pairs_ms,
            fuse_ms,
            metrics_ms,
        });
        log::info!(
            "view {t}: {} outer iterations, objective {:.6}, buffer {} pairs",
            trace.iterations,
            trace.final_objective,
            next.buffer.len()
        );
        state = Some(next);
    }

    let state = state.expect("stream has at least one view");
    let report = Report {
        schema_version: CONFIG_SCHEMA_VERSION,
        variant: if config.lambda == 0.0 { "IMVC".into() } else { config.strategy.code().into() },
        seed: config.seed,
        n,
        k,
        views: views.len(),
        config: config.clone(),
        prefixes,
        traces: state.history.clone(),
        lambda_grid: None,
        timing,
    };
    Ok((state, report))
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Late fusion without a contrastive term, written independently of
/// [`fuse_view`] to cross-check the `λ = 0` path.
#[cfg(test)]
pub(crate) fn pure_fusion_reference(
    prev: &nalgebra::DMatrix<f64>,
    h_t: &nalgebra::DMatrix<f64>,
    epsilon0: f64,
    max_iters: usize,
) -> nalgebra::DMatrix<f64> {
    use super::procrustes::polar_factor;
    let k = prev.ncols();
    let mut m = nalgebra::DMatrix::identity(k, k);
    let mut h = prev.clone();
    let mut last = h.dot(prev) + h.dot(&(h_t * &m));
    for _ in 0..max_iters {
        h = polar_factor(&(prev + h_t * &m)).unwrap();
        m = polar_factor(&(h_t.transpose() * &h)).unwrap();
        let value = h.dot(prev) + h.dot(&(h_t * &m));
        let done = (value - last).abs() / value.abs().max(1e-12) <= epsilon0;
        last = value;
        if done {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::{extract_partition, generate_synthetic_stream};

    fn stream(seed: u64) -> (Vec<ViewMatrix>, Vec<usize>) {
        generate_synthetic_stream(&SyntheticSpec::clean(90, 3, 3, 6.0, seed)).unwrap()
    }

    #[test]
    fn aligned_view_converges_immediately_at_2k() {
        let (views, _) = stream(1);
        let h = extract_partition(&views[0], 3).unwrap();
        let state = FusionState::initial(&h, 1.0, 0.2).unwrap();
        let next = fuse_view(&state, &h, &FusionParams::default()).unwrap();
        let trace = &next.history[0];
        assert!(trace.iterations <= 2);
        assert!((trace.final_objective - 6.0).abs() < 1e-9);
    }

    #[test]
    fn objective_hand_cases() {
        let h = PartitionMatrix::canonical(4, 2, PartitionRole::Consensus);
        let w = StructuralBuffer::empty(4, 1.0, 0.2).unwrap();
        let m = RotationMatrix::identity(2);
        assert!((objective_value(&h, &h, &h, &m, 0.5, &w).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn lambda_zero_matches_pure_fusion() {
        let (views, _) = stream(2);
        let h1 = extract_partition(&views[0], 3).unwrap();
        let h2 = extract_partition(&views[1], 3).unwrap();
        let state = FusionState::initial(&h1, 1.0, 0.2).unwrap();
        let params = FusionParams {
            lambda: 0.0,
            ..FusionParams::default()
        };
        let fused = fuse_view(&state, &h2, &params).unwrap();
        let reference = pure_fusion_reference(h1.values(), h2.values(), params.epsilon0, params.max_outer_iters);
        assert!((fused.consensus.values() - reference).amax() < 1e-9);
    }

    #[test]
    fn single_view_at_lambda_zero_keeps_first_partition() {
        let (views, labels) = stream(3);
        let config = RunConfig {
            lambda: 0.0,
            kmeans_restarts: 3,
            ..RunConfig::default()
        };
        let (state, report) = run_continual(&views[..1], Some(&labels), &config).unwrap();
        let h1 = extract_partition(&views[0], 3).unwrap();
        assert!((state.consensus.values() - h1.values()).amax() < 1e-12);
        assert_eq!(report.prefixes.len(), 1);
    }

    #[test]
    fn rejects_mismatched_streams() {
        let (mut views, labels) = stream(4);
        views[1].data = views[1].data.rows(0, 80).into_owned();
        assert!(matches!(
            run_continual(&views, Some(&labels), &RunConfig::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn needs_labels_or_a_cluster_count() {
        let (views, _) = stream(5);
        assert!(matches!(run_continual(&views, None, &RunConfig::default()), Err(Error::InvalidInput(_))));
        let no_metrics = RunConfig {
            metrics: false,
            ..RunConfig::default()
        };
        assert!(matches!(run_continual(&views, None, &no_metrics), Err(Error::Config(_))));
        let with_k = RunConfig {
            clusters: Some(3),
            ..no_metrics
        };
        let (_, report) = run_continual(&views, None, &with_k).unwrap();
        assert!(report.prefixes.iter().all(|p| p.metrics.is_none()));
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig {
            epsilon0: 0.0,
            ..RunConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let grid = RunConfig::lambda_grid_values();
        assert_eq!(grid.len(), 11);
        assert_eq!(grid[0], 2f64.powi(-10));
        assert_eq!(grid[10], 1.0);
    }
}
