//! Numerical laboratory for parabolic equations degenerating at a boundary
//! point: weighted P1 discretization, spectral analysis, domain truncation
//! with zero extension, Carleman weight machinery, and boundary
//! observability experiments.

// `!(x > 0.0)` is used deliberately in validation: it rejects NaN along
// with nonpositive values, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assemble;
pub mod carleman;
pub mod config;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod mesh;
pub mod observability;
pub mod report;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
