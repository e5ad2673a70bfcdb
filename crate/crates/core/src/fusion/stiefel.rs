//! Quadratic trace maximization on the Stiefel manifold,
//!
//! ```text
//! max  Tr(Hᵀ A) + λ̃ Tr(Hᵀ W H)   s.t. HᵀH = I_k,
//! ```
//!
//! by generalized power iteration: `K = 2λ̃ (W + αI) H + A`, `H ← polar(K)`.
//! `W` has negative entries, so it is shifted by the Gershgorin bound
//! `α = max_i Σ_j |W_ij|` to make `W + αI` positive semidefinite. On the
//! manifold the shift only adds the constant `λ̃αk`, and with a PSD quadratic
//! each step is a linearization-ascent step, so the objective cannot decrease.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::partition::{PartitionMatrix, PartitionRole};
use super::procrustes::polar_factor;
use crate::buffer::StructuralBuffer;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    /// Relative objective change at which iteration stops.
    pub tol: f64,
    pub max_iters: usize,
    /// Added to the Gershgorin shift. Only used to check that the shift does
    /// not move the maximizer.
    #[serde(default)]
    pub extra_shift: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 100,
            extra_shift: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PartitionSolve {
    pub h: PartitionMatrix,
    /// `Tr(HᵀA) + λ̃ Tr(HᵀWH)` at `h` (unshifted).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the starting point followed by one entry per iteration.
    pub trace: Vec<f64>,
}

/// `Tr(HᵀA) + λ̃ Tr(HᵀWH)`.
pub fn inner_objective(h: &DMatrix<f64>, a: &DMatrix<f64>, lambda_tilde: f64, w: &StructuralBuffer) -> f64 {
    let wh = w.mul_dense(h);
    h.dot(a) + lambda_tilde * h.dot(&wh)
}

fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / new.abs().max(1e-12)
}

/// Generalized power iteration for the consensus subproblem.
///
/// Starts from `init` when given, otherwise from the polar factor of `a` (the
/// exact maximizer when `λ̃ = 0`). When `a = 0` and `w` is empty the problem is
/// constant and the first `k` canonical columns are returned.
pub fn solve_partition(
    a: &DMatrix<f64>,
    lambda_tilde: f64,
    w: &StructuralBuffer,
    init: Option<&PartitionMatrix>,
    opts: &InnerOptions,
) -> Result<PartitionSolve> {
    let (n, k) = a.shape();
    if w.n() != n {
        return Err(Error::DimensionMismatch(format!("A has {n} rows, buffer covers {} samples", w.n())));
    }
    if !(lambda_tilde >= 0.0) || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("solve_partition needs finite A and λ̃ >= 0".into()));
    }
    if let Some(h0) = init {
        if h0.values().shape() != (n, k) {
            return Err(Error::DimensionMismatch("initial partition shape differs from A".into()));
        }
    }

    let mut h = match init {
        Some(h0) => h0.values().clone(),
        None if a.iter().all(|&v| v == 0.0) => DMatrix::identity(n, k),
        None => polar_factor(a)?,
    };
    if a.iter().all(|&v| v == 0.0) && w.is_empty() {
        let h = PartitionMatrix::new(h, PartitionRole::Consensus)?;
        return Ok(PartitionSolve {
            h,
            objective: 0.0,
            iterations: 0,
            converged: true,
            trace: vec![0.0],
        });
    }

    let shift = w.max_abs_row_sum() + opts.extra_shift;
    let mut wh = w.mul_dense(&h);
    let mut objective = h.dot(a) + lambda_tilde * h.dot(&wh);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let mut step = a.clone();
        if lambda_tilde > 0.0 {
            step += (&wh + &h * shift) * (2.0 * lambda_tilde);
        }
        if step.iter().all(|&v| v == 0.0) {
            converged = true;
            break;
        }
        let next = polar_factor(&step)?;
        let next_wh = w.mul_dense(&next);
        let next_objective = next.dot(a) + lambda_tilde * next.dot(&next_wh);
        iterations += 1;
        let change = relative_change(next_objective, objective);
        // A round-off-level decrease means the iterate has converged; keep the
        // better point.
        if next_objective >= objective {
            h = next;
            wh = next_wh;
            objective = next_objective;
        }
        trace.push(objective);
        if change <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("Stiefel subproblem stopped after {iterations} iterations without meeting tol {}", opts.tol);
    }
    Ok(PartitionSolve {
        h: PartitionMatrix::new(h, PartitionRole::Consensus)?,
        objective,
        iterations,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::{build_indicator, PairSelection};
    use crate::fusion::sum_singular_values;

    fn empty(n: usize) -> StructuralBuffer {
        StructuralBuffer::empty(n, 1.0, 0.2).unwrap()
    }

    #[test]
    fn no_contrastive_weight_is_one_procrustes_step() {
        let a = DMatrix::from_fn(6, 2, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let w = empty(6);
        let sol = solve_partition(&a, 0.0, &w, None, &InnerOptions::default()).unwrap();
        assert!((sol.objective - sum_singular_values(&a)).abs() < 1e-12);
        assert!(sol.iterations <= 1);
    }

    #[test]
    fn orthonormal_target_is_a_fixed_point() {
        let h0 = PartitionMatrix::canonical(5, 2, PartitionRole::Consensus);
        let sol = solve_partition(h0.values(), 0.0, &empty(5), None, &InnerOptions::default()).unwrap();
        assert!((sol.h.values() - h0.values()).amax() < 1e-12);
        assert!((sol.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_input_returns_canonical_columns() {
        let a = DMatrix::zeros(4, 2);
        let sol = solve_partition(&a, 1.0, &empty(4), None, &InnerOptions::default()).unwrap();
        assert_eq!(sol.h.values(), &DMatrix::identity(4, 2));
    }

    #[test]
    fn zero_step_keeps_previous_iterate() {
        let a = DMatrix::zeros(4, 1);
        let mut sel = PairSelection::empty(4);
        sel.positives[0].push(1);
        let w = build_indicator(&sel, 1.0, 0.2, 4).unwrap();
        // λ̃ = 0 and A = 0 make K = 0.
        let h0 = PartitionMatrix::new(DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0, 0.0]), PartitionRole::Consensus).unwrap();
        let sol = solve_partition(&a, 0.0, &w, Some(&h0), &InnerOptions::default()).unwrap();
        assert_eq!(sol.h.values(), h0.values());
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = DMatrix::zeros(4, 2);
        assert!(solve_partition(&a, -1.0, &empty(4), None, &InnerOptions::default()).is_err());
        assert!(solve_partition(&a, 1.0, &empty(5), None, &InnerOptions::default()).is_err());
    }
}
