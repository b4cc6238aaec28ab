//! Exact-score Gaussian-mixture diffusion laboratory.
//!
//! Reverse samplers (DDPM ancestral, DDIM, hybrids) over a closed-form
//! mixture score, segment geometry around mode pairs, and the diagnostics
//! used to study mode interpolation.

pub mod analysis;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod mixture;
pub mod par;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod scorenet;

pub use error::{Error, Result};
