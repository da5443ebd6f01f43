//! Capacity estimation for lithium-ion cells from short constant-current
//! voltage segments.
//!
//! A segment's voltage is smoothed, the times to reach `n` equispaced
//! voltages above a starting voltage become the regression inputs, and an
//! exact Gaussian process maps those times to a capacity with a predictive
//! standard deviation. The crate also carries an incremental-capacity /
//! differential-voltage peak baseline, a leave-one-cell-out harness and a
//! synthetic data generator.

// `!(x > 0.0)` style tests are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod features;
pub mod gp;
pub mod smoothing;
pub mod synth;

pub use error::{Error, Result};
