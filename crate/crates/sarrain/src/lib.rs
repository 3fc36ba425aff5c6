pub mod cli;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod sgrid;
pub mod store;
pub mod workflow;

pub use error::{Error, Result};
