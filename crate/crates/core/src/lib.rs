pub mod baselines;
pub mod cli;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod lstm;
pub mod models;
pub mod numerics;
pub mod pipeline;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
