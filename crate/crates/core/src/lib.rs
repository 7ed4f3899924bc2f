//! Residual component analysis: low-rank covariance estimation residual to a
//! known covariance, sparse-precision estimation under low-rank confounders,
//! and the simulation and evaluation tooling around them.

// `!(x > 0.0)` is used deliberately so NaN inputs are rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod edge;
pub mod em;
pub mod error;
pub mod eval;
pub mod glasso;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod rca;
pub mod stability;

pub use error::{RcaError, Result};
