//! Metadata-informed time-series forecasting.
//!
//! A window of the endogenous target series is cut into patch tokens, each
//! exogenous variate becomes one series token, and three natural-language
//! metadata paragraphs (dataset, task, sample) are encoded by a frozen text
//! encoder into metadata tokens. A Transformer encoder fuses all of them and
//! a linear head forecasts the target from the endogenous outputs.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod metadata;
pub mod model;
pub mod nn;
pub mod prepared;
pub mod registry;
pub mod tokens;
pub mod train;

pub use config::{Ablation, ModelConfig};
pub use error::{Error, Result};
pub use model::MetaTst;
