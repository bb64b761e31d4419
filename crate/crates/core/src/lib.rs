//! Multi-scale Poisson models for detecting and localizing differences in
//! binned count sequences between groups of samples.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod ebshrink;
pub mod effects;
pub mod error;
pub mod glm;
pub mod inference;
pub mod io;
pub mod mstransform;
pub mod pipeline;
pub mod simulate;
pub mod types;

pub use error::{Error, Result};
