//! Darned diffusions: Brownian motion on finitely many Euclidean components
//! glued at one point in place of a strongly stable compact.
//!
//! The crate builds the level function `g` of a concentric-shell geometry,
//! samples exit kernels of the level sets, constructs compatible families of
//! sphere measures, simulates the glued diffusion and tests harmonicity
//! across the darned point.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod harmonic;
pub mod kernels;
pub mod measures;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use rng::StreamKey;
