//! Dose-response estimation and dose recommendation for end-of-surgery opioids.

pub mod baselines;
pub mod cadr;
pub mod diagnostics;
pub mod domain;
pub mod experiment;
pub mod io;
mod error;
pub mod recommendation;
pub mod strata;
pub mod synthgen;
pub mod validation;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
