//! Continual multi-view clustering with filtered structural fusion.
//!
//! Views arrive one at a time. Each view is reduced to an orthonormal soft
//! partition matrix, a handful of positive/negative sample pairs are mined from
//! it with a cluster-then-sample strategy, and the pairs are merged into a
//! sparse signed buffer. The consensus partition is then updated by
//! alternating a Stiefel-manifold ascent step (with the buffer acting as a
//! contrastive regularizer) and a closed-form rotation that aligns the new view.
//!
//! Module map:
//!
//! - [`view`]: CSV ingestion, synthetic streams, partition extraction
//! - [`buffer`]: pair selection, the signed pair buffer, sampling bound checks
//! - [`fusion`]: contrastive loss, the two subproblem solvers, the per-view loop
//! - [`clustering`]: k-means and external metrics (ACC, NMI, purity)
//! - [`harness`]: run configuration, reports, ablations and verifiers

pub mod buffer;
pub mod clustering;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod rng;
pub mod view;

pub use error::{Error, Result};
