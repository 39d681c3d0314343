//! Numerical toolkit for purely discontinuous Girsanov transforms of
//! stable-like jump processes.
//!
//! The crate simulates stable-like paths with an explicit record of large
//! jumps, evaluates the exponential weight attached to a bounded jump
//! perturbation, computes the perturbation series for the transformed
//! transition density, and estimates the same density by weighted Monte
//! Carlo so the two routes can be cross-validated. A CLI (`girsanov`) wires
//! the pieces into reproducible checks with machine-readable outputs.

pub mod config;
pub mod dd;
pub mod error;
pub mod estimate;
pub mod functional;
pub mod model;
pub mod quad;
pub mod report;
pub mod series;
pub mod sim;

pub use error::{Error, Result};
