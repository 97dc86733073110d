//! Active learning by decision-boundary annotation.

pub mod data;
pub mod decoder;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod strategies;

pub use error::{Error, Result};
