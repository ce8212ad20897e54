//! Curvature of L2 metrics on direct images over projectivized split bundles.
//!
//! The pipeline builds the Gram family of the monomial fiber sections of
//! `K_{Y/X} (x) O_{P(E)}(k + r)` over `P^1` or `P^1 x P^1`, differentiates it
//! in a normal frame, and reports the spectrum of the resulting Nakano form
//! alongside the diagnostics an experiment needs to trust it.

pub mod bundles;
pub mod cli;
pub mod direct_image;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod oracles;

pub use error::{Error, Result};
