//! Certified machine unlearning with trust-region Newton steps.

pub mod dataset;
pub mod error;
pub mod linalg;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod spectral;
pub mod trsolver;
pub mod unlearn;

pub use error::{Error, Result};
