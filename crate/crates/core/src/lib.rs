//! Core algorithms for segmenting rain signatures in SAR ocean imagery.
//!
//! Everything in this crate is allocation-only (`no_std` + `alloc`): raster
//! handling, incidence normalization, radar truth labelling, the
//! differentiable Koch filter model and its trainer, dataset construction
//! rules, lightning proxies, evaluation metrics and the synthetic scene
//! generator. File formats and the command line live in the `sarrain` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod corpus;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod glm;
pub mod koch;
pub mod labels;
pub mod metrics;
pub mod preproc;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use raster::{DType, Grid, GridGeometry};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
