//! Binned scatter plot estimation and inference.
//!
//! Partitions the support of a running variable into bins, fits
//! smoothness-constrained piecewise polynomials by least squares
//! (realized as B-splines), selects the number of bins by minimizing
//! an integrated mean squared error criterion, and performs
//! simulation-based uniform inference: pointwise confidence intervals,
//! simultaneous confidence bands, parametric specification tests, and
//! shape restriction tests.

pub mod basis;
pub mod binselect;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod linalg;
pub mod output;
pub mod partition;

pub use error::{Error, Result};
