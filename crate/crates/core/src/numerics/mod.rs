//! Dense linear algebra, a symmetric eigensolver and counter-based random
//! streams. Everything here is a pure function of its inputs.

pub mod eig;
pub mod matrix;
pub mod rng;

pub use eig::{sym_eig, SymEig};
pub use matrix::{vecops, Matrix};
pub use rng::{derive_stream_id, RngStream};
