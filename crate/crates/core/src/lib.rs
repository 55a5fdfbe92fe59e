pub mod baselines;
pub mod catalog;
pub mod cost;
pub mod error;
pub mod experiment;
pub mod ligd;
pub mod mligd;
pub mod scenario;
pub mod topology;

pub use error::{Error, ErrorCategory, Result};
