//! Spectral predictors of low-rank compression damage in transformer
//! weights, the SVD-family compressors, and the formula-fitting machinery that
//! links the two.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod compress;
pub mod demo;
pub mod error;
pub mod formula;
pub mod info;
pub mod linalg;
pub mod report;
pub mod rng;
pub mod spectral;
pub mod symreg;
pub mod synthlab;

pub use bundle::{load_bundle, save_bundle, Dtype, ModelBundle, Role, Scope, WeightMatrix};
pub use error::{Error, Result};
pub use info::{mdl_bits, Bf16Histograms, MdlEstimate};
pub use spectral::{AggregateRanks, MatrixSpectrum, SpectralSummary};
