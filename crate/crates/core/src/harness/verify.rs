//! Randomized verifiers for the solver's guarantees.
//!
//! Each verifier draws its instances from a seed, checks one property against
//! an independent computation and returns a [`VerifyOutcome`] that counts
//! violations instead of stopping at the first one.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::{
    build_indicator, select_pairs, verify_mean_bound, verify_std_bound, PairStrategy, SampleBudget, StructuralBuffer,
};
use crate::error::{Error, Result};
use crate::fusion::{
    contrastive_loss, fuse_view, inner_objective, orthonormality_error, polar_factor, similarity_matrix,
    solve_partition, sum_singular_values, FusionParams, FusionState, InnerOptions, PartitionMatrix, PartitionRole,
};
use crate::rng::{rng_for, stream, Rng};
use crate::view::{extract_partition, generate_synthetic_stream, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyKind {
    MeanBound,
    StdBound,
    CsBound,
    Procrustes,
    Monotone,
    Stiefel,
}

impl VerifyKind {
    pub const ALL: [VerifyKind; 6] = [
        VerifyKind::MeanBound,
        VerifyKind::StdBound,
        VerifyKind::CsBound,
        VerifyKind::Procrustes,
        VerifyKind::Monotone,
        VerifyKind::Stiefel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VerifyKind::MeanBound => "mean_bound",
            VerifyKind::StdBound => "std_bound",
            VerifyKind::CsBound => "cs_bound",
            VerifyKind::Procrustes => "procrustes",
            VerifyKind::Monotone => "monotone",
            VerifyKind::Stiefel => "stiefel",
        }
    }
}

impl fmt::Display for VerifyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VerifyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown verifier {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub kind: String,
    pub passed: bool,
    /// Instances, trials or iterates examined.
    pub checked: usize,
    pub violations: usize,
    /// The statistic compared against its threshold (a rate, or the worst gap).
    pub statistic: f64,
    pub threshold: f64,
    pub detail: String,
}

/// Overrides for the verifier defaults; `None` keeps the default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    pub seed: u64,
    pub instances: Option<usize>,
    pub trials: Option<usize>,
    pub samples: Option<usize>,
    pub r: Option<usize>,
    pub delta: Option<f64>,
    pub n: Option<usize>,
    pub k: Option<usize>,
}

pub fn run(kind: VerifyKind, p: &VerifyParams) -> Result<VerifyOutcome> {
    match kind {
        VerifyKind::MeanBound => mean_bound(
            p.n.unwrap_or(10_000),
            p.r.unwrap_or(100),
            p.delta.unwrap_or(0.05),
            p.trials.unwrap_or(10_000),
            p.seed,
        ),
        VerifyKind::StdBound => std_bound(
            p.n.unwrap_or(10_000),
            p.r.unwrap_or(400),
            p.delta.unwrap_or(0.05),
            p.trials.unwrap_or(10_000),
            p.seed,
        ),
        VerifyKind::CsBound => cs_bound(p.instances.unwrap_or(1000), p.n.unwrap_or(100), p.seed),
        VerifyKind::Procrustes => procrustes(p.instances.unwrap_or(100), p.k.unwrap_or(5), p.samples.unwrap_or(10_000), p.seed),
        VerifyKind::Monotone => monotone(p.instances.unwrap_or(50), p.seed),
        VerifyKind::Stiefel => stiefel(
            p.instances.unwrap_or(20),
            p.n.unwrap_or(20),
            p.k.unwrap_or(3),
            p.samples.unwrap_or(100_000),
            p.seed,
        ),
    }
}

fn uniform_population(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, stream::VERIFY, u64::MAX);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Violation rate of the sample-mean bound on a uniform `[0,1]` population;
/// passes when the rate is at most `δ`.
pub fn mean_bound(n: usize, r: usize, delta: f64, trials: usize, seed: u64) -> Result<VerifyOutcome> {
    let rate = verify_mean_bound(&uniform_population(n, seed), r, delta, trials, seed)?;
    Ok(VerifyOutcome {
        kind: VerifyKind::MeanBound.name().into(),
        passed: rate <= delta,
        checked: trials,
        violations: (rate * trials as f64).round() as usize,
        statistic: rate,
        threshold: delta,
        detail: format!("n={n} r={r} delta={delta}"),
    })
}

/// Violation rate of the sample standard-deviation bound; passes when the rate
/// is at most `2δ`.
pub fn std_bound(n: usize, r: usize, delta: f64, trials: usize, seed: u64) -> Result<VerifyOutcome> {
    let rate = verify_std_bound(&uniform_population(n, seed), r, delta, trials, seed)?;
    Ok(VerifyOutcome {
        kind: VerifyKind::StdBound.name().into(),
        passed: rate <= 2.0 * delta,
        checked: trials,
        violations: (rate * trials as f64).round() as usize,
        statistic: rate,
        threshold: 2.0 * delta,
        detail: format!("n={n} r={r} delta={delta}"),
    })
}

/// Random n×k matrix with orthonormal columns (Q factor of a Gaussian matrix).
pub fn random_orthonormal(n: usize, k: usize, rng: &mut Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// A random signed pair buffer: every sample picks `m_p` random positives and
/// `m_n` random negatives.
pub fn random_buffer(n: usize, m_p: usize, m_n: usize, w_p: f64, w_n: f64, seed: u64) -> Result<StructuralBuffer> {
    let h = PartitionMatrix::canonical(n, 1.min(n), PartitionRole::PerView);
    let pairs = select_pairs(PairStrategy::Random, &h, 2, SampleBudget::Full, m_p, m_n, seed, Default::default())?;
    build_indicator(&pairs, w_p, w_n, n)
}

/// `|Tr(CW)| ≤ ‖W‖_F` on random `(H, W)`, and the sparse loss against the dense
/// `Tr(CW)` to 1e-12.
pub fn cs_bound(instances: usize, n_max: usize, seed: u64) -> Result<VerifyOutcome> {
    let n_max = n_max.max(3);
    let results: Vec<(bool, f64)> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, stream::VERIFY, i as u64);
            let n = rng.random_range(3..=n_max);
            let k = rng.random_range(1..=n.min(6));
            let h = random_orthonormal(n, k, &mut rng);
            let m_p = rng.random_range(0..=4.min(n - 1));
            let m_n = rng.random_range(0..=(n - 1 - m_p).min(4));
            let w_p = rng.random_range(0.1..2.0);
            let w = random_buffer(n, m_p, m_n, w_p, w_p / 5.0, rng.random())?;
            let sparse = contrastive_loss(&h, &w)?;
            let dense = (similarity_matrix(&h) * w.to_dense()).trace();
            let within_bound = sparse.abs() <= w.frobenius_norm() + 1e-12;
            Ok((within_bound, (sparse - dense).abs()))
        })
        .collect::<Result<_>>()?;
    let bound_violations = results.iter().filter(|r| !r.0).count();
    let worst_gap = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let gap_violations = results.iter().filter(|r| r.1 > 1e-12).count();
    Ok(VerifyOutcome {
        kind: VerifyKind::CsBound.name().into(),
        passed: bound_violations == 0 && gap_violations == 0,
        checked: instances,
        violations: bound_violations + gap_violations,
        statistic: worst_gap,
        threshold: 1e-12,
        detail: format!("{bound_violations} bound violations, worst sparse/dense gap {worst_gap:.3e}"),
    })
}

/// Closed-form rotation on random `B`: `Tr(MᵀB) = Σσ_i(B)` to 1e-10 and no
/// sampled orthogonal `Q` does better.
pub fn procrustes(instances: usize, k_max: usize, samples: usize, seed: u64) -> Result<VerifyOutcome> {
    let k_max = k_max.max(1);
    let results: Vec<(f64, f64, f64)> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, stream::VERIFY, i as u64);
            let k = rng.random_range(1..=k_max);
            let b = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
            let m = polar_factor(&b)?;
            let attained = (m.transpose() * &b).trace();
            let sigma = sum_singular_values(&b);
            let best_sampled = (0..samples)
                .map(|_| {
                    let q = random_orthonormal(k, k, &mut rng);
                    (q.transpose() * &b).trace()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(((attained - sigma).abs(), best_sampled - attained, orthonormality_error(&m)))
        })
        .collect::<Result<_>>()?;
    let gap = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let beaten = results.iter().filter(|r| r.1 > 1e-10).count();
    let ortho = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let violations = results.iter().filter(|r| r.0 > 1e-10 || r.1 > 1e-10 || r.2 > 1e-10).count();
    Ok(VerifyOutcome {
        kind: VerifyKind::Procrustes.name().into(),
        passed: violations == 0,
        checked: instances,
        violations,
        statistic: gap,
        threshold: 1e-10,
        detail: format!("max |Tr(MᵀB) − Σσ| = {gap:.3e}, {beaten} instances beaten by a sample, max orthogonality error {ortho:.3e}"),
    })
}

/// Random Stiefel subproblems: the solver's objective against the best of
/// `samples` random orthonormal matrices, plus monotonicity of its trace.
pub fn stiefel(instances: usize, n: usize, k: usize, samples: usize, seed: u64) -> Result<VerifyOutcome> {
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("need 1 <= k <= n (n={n}, k={k})")));
    }
    let opts = InnerOptions {
        tol: 1e-12,
        max_iters: 1000,
        ..InnerOptions::default()
    };
    let results: Vec<(f64, bool)> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, stream::VERIFY, i as u64);
            let a = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
            let lambda_tilde = rng.random_range(0.05..1.0);
            let w = random_buffer(n, 2, 2, 1.0, 0.2, rng.random())?;
            let solved = solve_partition(&a, lambda_tilde, &w, None, &opts)?;
            let monotone = solved.trace.windows(2).all(|p| p[1] >= p[0] - 1e-9);
            let best_sampled = (0..samples)
                .map(|_| inner_objective(&random_orthonormal(n, k, &mut rng), &a, lambda_tilde, &w))
                .fold(f64::NEG_INFINITY, f64::max);
            Ok((solved.objective - best_sampled, monotone))
        })
        .collect::<Result<_>>()?;
    let margin = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let violations = results.iter().filter(|r| r.0 < -1e-9 || !r.1).count();
    Ok(VerifyOutcome {
        kind: VerifyKind::Stiefel.name().into(),
        passed: violations == 0,
        checked: instances,
        violations,
        statistic: margin,
        threshold: -1e-9,
        detail: format!("worst margin over random search {margin:.3e}"),
    })
}

/// Outcome of fusing one synthetic stream for [`monotone`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamCheck {
    pub n: usize,
    pub k: usize,
    pub lambda: f64,
    pub iterates: usize,
    pub max_iterations: usize,
    pub decreases: usize,
    pub bound_violations: usize,
    pub not_converged: usize,
    pub error: Option<String>,
}

impl StreamCheck {
    pub fn ok(&self, iteration_cap: usize) -> bool {
        self.error.is_none()
            && self.decreases == 0
            && self.bound_violations == 0
            && self.not_converged == 0
            && self.max_iterations <= iteration_cap
    }
}

/// Fuses one random 3-view stream (n in 200..=600, k in 3..=5, λ from the grid)
/// and checks every outer iterate for monotonicity and the `2k + λ‖W‖_F` bound.
pub fn check_stream(index: usize, seed: u64) -> StreamCheck {
    let mut rng = rng_for(seed, stream::VERIFY, index as u64);
    let n = rng.random_range(200..=600);
    let k = rng.random_range(3..=5);
    let grid = crate::fusion::RunConfig::lambda_grid_values();
    let lambda = grid[rng.random_range(0..grid.len())];
    let separation = rng.random_range(3.0..10.0);
    let mut spec = SyntheticSpec::clean(n, k, 3, separation, rng.random());
    if rng.random_bool(0.5) {
        spec = spec.with_corrupted([3], rng.random_range(1.0..5.0));
    }
    let mut check = StreamCheck {
        n,
        k,
        lambda,
        iterates: 0,
        max_iterations: 0,
        decreases: 0,
        bound_violations: 0,
        not_converged: 0,
        error: None,
    };
    let params = FusionParams {
        lambda,
        epsilon0: 1e-4,
        ..FusionParams::default()
    };
    let result = (|| -> Result<()> {
        let (views, _) = generate_synthetic_stream(&spec)?;
        let mut state: Option<FusionState> = None;
        for (t, view) in views.iter().enumerate() {
            let h_t = extract_partition(view, k)?;
            let pairs = crate::buffer::cluster_then_sample(&h_t, k, SampleBudget::SqrtN, 5, 5, spec.seed ^ t as u64)?;
            let incoming = build_indicator(&pairs, 1.0, 0.2, n)?;
            let mut current = match state.take() {
                Some(s) => s,
                None => FusionState::initial(&h_t, 1.0, 0.2)?,
            };
            current.buffer = crate::buffer::merge_buffer(&current.buffer, &incoming)?;
            let next = fuse_view(&current, &h_t, &params)?;
            let trace = next.history.last().expect("trace appended");
            // Recompute the bound from the dense buffer rather than trusting
            // the trace's own copy.
            let bound = 2.0 * k as f64 + lambda * next.buffer.to_dense().norm();
            check.iterates += trace.objective.len();
            check.max_iterations = check.max_iterations.max(trace.iterations);
            check.decreases += trace.objective.windows(2).filter(|p| p[1] < p[0] - 1e-9).count();
            check.bound_violations += trace.objective.iter().filter(|&&v| v > bound + 1e-9).count();
            check.not_converged += usize::from(!trace.converged);
            state = Some(next);
        }
        Ok(())
    })();
    if let Err(e) = result {
        check.error = Some(e.to_string());
    }
    check
}

/// Monotone ascent and the objective upper bound over `streams` random streams;
/// every view must also converge within 50 outer iterations.
pub fn monotone(streams: usize, seed: u64) -> Result<VerifyOutcome> {
    let checks: Vec<StreamCheck> = (0..streams).into_par_iter().map(|i| check_stream(i, seed)).collect();
    let failed = checks.iter().filter(|c| !c.ok(50)).count();
    let iterates: usize = checks.iter().map(|c| c.iterates).sum();
    let worst = checks.iter().map(|c| c.max_iterations).max().unwrap_or(0);
    let errors: Vec<&str> = checks.iter().filter_map(|c| c.error.as_deref()).collect();
    Ok(VerifyOutcome {
        kind: VerifyKind::Monotone.name().into(),
        passed: failed == 0,
        checked: iterates,
        violations: failed,
        statistic: worst as f64,
        threshold: 50.0,
        detail: format!(
            "{failed}/{streams} streams failed; max outer iterations {worst}; errors: {errors:?}"
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse() {
        for k in VerifyKind::ALL {
            assert_eq!(k.name().parse::<VerifyKind>().unwrap(), k);
        }
        assert!("bogus".parse::<VerifyKind>().is_err());
    }

    #[test]
    fn random_buffer_respects_budget() {
        let w = random_buffer(30, 2, 3, 1.0, 0.2, 9).unwrap();
        assert!(w.len() <= 30 * 5);
        assert!(w.len() > 0);
    }

    #[test]
    fn small_runs_pass() {
        let p = VerifyParams {
            seed: 3,
            instances: Some(20),
            trials: Some(500),
            samples: Some(200),
            ..Default::default()
        };
        for kind in [VerifyKind::CsBound, VerifyKind::Procrustes, VerifyKind::Stiefel, VerifyKind::MeanBound, VerifyKind::StdBound] {
            let out = run(kind, &p).unwrap();
            assert!(out.passed, "{out:?}");
        }
    }
}
