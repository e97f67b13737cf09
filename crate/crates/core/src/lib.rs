//! Exact log-likelihood gradients for linear Gaussian state-space models,
//! computed with a square-root covariance filter, plus a conventional
//! Kalman-filter baseline and a high-precision reference.

// `!(x > t)` is used on purpose so that NaN lands in the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::type_complexity, clippy::large_enum_variant)]

pub mod cli;
pub mod config;
pub mod conventional;
pub mod error;
pub mod esrcf;
pub mod experiments;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod report;
pub mod score;

pub use error::{Error, Result};
pub use likelihood::{Method, ScoreResult};
