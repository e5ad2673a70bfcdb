use nalgebra::{DMatrix, SVD};

use super::partition::{PartitionMatrix, RotationMatrix};
use crate::error::{Error, Result};

/// Orthonormal polar factor `U Vᵀ` of a thin SVD `K = U Σ Vᵀ`, i.e. the
/// maximizer of `Tr(Xᵀ K)` over matrices with orthonormal columns.
pub fn polar_factor(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("SVD input has non-finite entries".into()));
    }
    let svd = SVD::try_new(k.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return Vᵀ".into()))?;
    Ok(u * v_t)
}

/// Nuclear norm of `b`.
pub fn sum_singular_values(b: &DMatrix<f64>) -> f64 {
    b.singular_values().sum()
}

/// Rotation `M` maximizing `Tr(Mᵀ B)` with `B = H_tᵀ H*`.
///
/// With `B = S Σ Vᵀ`, `M = S Vᵀ` attains `Σ σ_i(B)`.
pub fn solve_rotation(h_t: &PartitionMatrix, h_star: &PartitionMatrix) -> Result<RotationMatrix> {
    if h_t.n() != h_star.n() || h_t.k() != h_star.k() {
        return Err(Error::DimensionMismatch(format!(
            "view partition is {}×{}, consensus is {}×{}",
            h_t.n(),
            h_t.k(),
            h_star.n(),
            h_star.k()
        )));
    }
    let b = h_t.values().transpose() * h_star.values();
    RotationMatrix::new(polar_factor(&b)?)
}
