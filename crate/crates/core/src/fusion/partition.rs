use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `‖HᵀH − I‖_max` for partitions produced by the solvers.
pub const PARTITION_ORTHO_TOL: f64 = 1e-8;
/// Tolerance on `‖MᵀM − I‖_max` for rotations.
pub const ROTATION_ORTHO_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionRole {
    /// Extracted from a single view.
    PerView,
    /// Fused across the views seen so far.
    Consensus,
}

/// n×k soft partition matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionMatrix {
    values: DMatrix<f64>,
    role: PartitionRole,
}

/// `max |AᵀA − I|` over all entries.
pub fn orthonormality_error(a: &DMatrix<f64>) -> f64 {
    let gram = a.transpose() * a;
    let k = gram.nrows();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

impl PartitionMatrix {
    /// Wraps `values`, checking the column-orthonormality invariant.
    pub fn new(values: DMatrix<f64>, role: PartitionRole) -> Result<Self> {
        if values.ncols() == 0 || values.nrows() < values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "partition matrix must be n×k with n >= k >= 1, got {}×{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("partition matrix has non-finite entries".into()));
        }
        let err = orthonormality_error(&values);
        if err > PARTITION_ORTHO_TOL {
            return Err(Error::Invariant(format!(
                "partition matrix columns not orthonormal (max |HᵀH - I| = {err:.3e})"
            )));
        }
        Ok(Self { values, role })
    }

    /// First `k` columns of the n×n identity.
    pub fn canonical(n: usize, k: usize, role: PartitionRole) -> Self {
        Self {
            values: DMatrix::identity(n, k),
            role,
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn role(&self) -> PartitionRole {
        self.role
    }

    pub fn with_role(mut self, role: PartitionRole) -> Self {
        self.role = role;
        self
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.values)
    }
}

/// k×k orthogonal matrix aligning a view's partition to the consensus.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationMatrix(DMatrix<f64>);

impl RotationMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::DimensionMismatch("rotation must be square".into()));
        }
        let err = orthonormality_error(&values);
        if !(err <= ROTATION_ORTHO_TOL) {
            return Err(Error::Invariant(format!("rotation not orthogonal (max |MᵀM - I| = {err:.3e})")));
        }
        Ok(Self(values))
    }

    pub fn identity(k: usize) -> Self {
        Self(DMatrix::identity(k, k))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }
}
