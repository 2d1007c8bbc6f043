//! Uncertainty estimation for multimodal multiple-choice question answering
//! from functional equivalence and complementarity samples.

pub mod client;
pub mod config;
pub mod distribution;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod instance;
pub mod mocks;
pub mod pipeline;
pub mod record;
pub mod scoring;
pub mod transforms;

pub use error::{FestaError, Result};
