//! Non-autoregressive sequence generation decoded under maximum mutual
//! information, with autoregressive reranking baselines and brute-force
//! verifiers.

pub mod app;
pub mod ar;
pub mod backward;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoding;
pub mod error;
pub mod forward;
pub mod mmi;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod params;
pub mod tensor;
mod train;
pub mod transformer;

pub use error::{Error, Result};
