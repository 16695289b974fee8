//! Informer forecaster: input embedding, ProbSparse multi-head attention,
//! a distilling encoder, a decoder and three training losses.

pub mod attention;
pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod predict;
pub mod train;

pub use config::{InformerConfig, LossKind, QUANTILE_LEVELS};
pub use data::{Batch, Dataset};
pub use error::{Error, Result};
pub use model::{InformerModel, InputSpec};
pub use predict::{predict_series, Forecasts};
pub use train::{evaluate, train, TrainLog, ValidationPoint};

pub type InformerModel64 = InformerModel<f64>;
