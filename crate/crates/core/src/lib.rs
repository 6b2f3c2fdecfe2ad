//! Detect-then-cluster coreference resolution with an LLM checking stage.

pub mod agent;
pub mod clusterer;
pub mod corpus;
pub mod detector;
pub mod encoder;
pub mod metrics;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod selectors;

pub use error::{CorefError, Result};
