//! Co-clustering through entropic optimal transport.
//!
//! Rows and columns of a data matrix are treated as two empirical measures.
//! The entropic transport plan between them factors as
//! `diag(alpha) * exp(-lambda * M) * diag(beta)`, and the sorted scaling
//! vectors are step functions whose jumps separate row and column clusters.
//! The crate provides:
//!
//! - [`sinkhorn`]: Sinkhorn-Knopp solver exposing the scaling vectors,
//! - [`gromov`]: entropic Gromov-Wasserstein couplings and two-input barycenters,
//! - [`jumps`]: multiscale jump detection on sorted vectors,
//! - [`coclust`]: the sampling pipeline ([`coclust::ccot`]) and the barycenter
//!   pipeline ([`coclust::ccot_gw`]),
//! - [`simulate`]: Gaussian latent block model generator and evaluation metrics.

pub mod coclust;
pub mod data;
pub mod error;
pub mod gromov;
pub mod jumps;
pub mod simulate;
pub mod sinkhorn;

pub use data::{
    pairwise_sq_dist, sample_rows, seeded_rng, sort_with_permutation, CostMatrix, DataMatrix,
    EmpiricalMeasure, SortPermutation,
};
pub use error::{Error, Result};
