//! Kernel-PCA process monitoring with learned kernel parameters.
//!
//! Data flows through [`dataset`] (loading, standardization, synthetic
//! processes), [`kernel`] and [`decomposition`] (PCA / kernel PCA models),
//! [`mspc`] (T² and SPEx charts, limits, monitoring loss) and [`optim`]
//! (kernel-parameter search).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod decomposition;
pub mod error;
pub mod kernel;
pub mod mspc;
pub mod optim;

pub use error::{Error, ErrorKind, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
