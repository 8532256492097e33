//! Exact and sketching-accelerated total least squares regression.

// Validation is written as `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod data;
pub mod error;
pub mod ftls;
pub mod matrix;
pub mod rng;
pub mod rank_constrained;
pub mod repair;
pub mod rftls;
pub mod sketch;
pub mod tls_exact;

pub use error::{Error, Result};
pub use matrix::{DenseMatrix, Matrix, SparseMatrix, SvdFactors};
