//! Ordinal text scoring with learned contextual representations compared
//! under optimal transport.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod ot;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
