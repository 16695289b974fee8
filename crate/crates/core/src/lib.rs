//! Backtesting core: market data, indicators, strategies, metrics and search.
//!
//! Numeric routines are generic over [`Real`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`, which is what the pipeline uses.

pub mod error;
pub mod indicators;
pub mod market;
pub mod metrics;
pub mod num;
pub mod search;
pub mod stats;
pub mod strategies;

pub use error::{Error, Result};
pub use num::Real;

pub type IndicatorSeries = indicators::IndicatorSeries<f64>;
pub type BacktestReport = metrics::BacktestReport<f64>;
pub type ThresholdParams = strategies::ThresholdParams<f64>;
pub type QuantileParams = strategies::QuantileParams<f64>;
pub type QuantileForecasts = strategies::QuantileForecasts<f64>;
