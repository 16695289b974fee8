//! Candle ingestion, gap repair, exogenous alignment, feature engineering and
//! walk-forward windows.

mod candles;
mod exogenous;
mod features;
mod windows;

pub use candles::*;
pub use exogenous::*;
pub use features::*;
pub use windows::*;
