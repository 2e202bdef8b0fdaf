//! sadkit: average geometry of score-network families, score anisotropy
//! directions, and directional generalization measurement for denoising
//! score matching models.
//!
//! The library is organized around a small pipeline:
//!
//! * [`numerics`] — dense matrices, a Jacobi eigensolver, counter-based RNG.
//! * [`bases`] — orthonormal signal-processing bases (DCT, DST, Hadamard, Haar).
//! * [`networks`] — score-network families with manual parameter gradients.
//! * [`geometry`] — Monte Carlo average geometry and SAD extraction.
//! * [`data`] — synthetic datasets, IDX ingestion, orthogonal transforms.
//! * [`diffusion`] — the DSM objective, training loop, and samplers.
//! * [`metrics`] — 1-D Wasserstein-2 plus sliced / max-sliced estimators.
//! * [`alignment`] — the alignment functional and its extremal transforms.
//! * [`theory`] — closed-form validators for the linear DSM model.

pub mod alignment;
pub mod bases;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod networks;
pub mod numerics;
pub mod theory;

pub use error::{Error, Result};
