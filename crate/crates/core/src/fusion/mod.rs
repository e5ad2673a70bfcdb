//! Consensus fusion.
//!
//! The consensus `H*` maximizes
//!
//! ```text
//! Tr(H*ᵀ(H*_prev + H_t M)) + λ·Tr(C W),   C = H* H*ᵀ / ‖H*‖_F²
//! ```
//!
//! over orthonormal `H*` and orthogonal `M`, alternating a generalized power
//! iteration for `H*` ([`solve_partition`]) with a closed-form Procrustes
//! rotation for `M` ([`solve_rotation`]).

mod continual;
mod contrastive;
mod partition;
mod procrustes;
mod stiefel;

pub use continual::{
    fuse_view, objective_value, run_continual, run_continual_with, FusionParams, FusionState, RunConfig,
    ViewTrace, CONFIG_SCHEMA_VERSION,
};
pub use contrastive::{contrastive_loss, contrastive_loss_batched, similarity_matrix};
pub use partition::{
    orthonormality_error, PartitionMatrix, PartitionRole, RotationMatrix, PARTITION_ORTHO_TOL, ROTATION_ORTHO_TOL,
};
pub use procrustes::{polar_factor, solve_rotation, sum_singular_values};
pub use stiefel::{inner_objective, solve_partition, InnerOptions, PartitionSolve};
