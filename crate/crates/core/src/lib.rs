//! Causal cross-attention encoder/decoder chains for irregularly sampled
//! multimodal timeseries, with the training schemes, metrics and data
//! tooling around them.

pub mod attention;
pub mod config;
pub mod autodiff;
pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod itnet;
pub mod kv;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod oracle;
pub mod params;
pub mod report;
pub mod time_encoding;
pub mod train;

pub use error::{Error, Result};
