pub mod backtest;
pub mod data;
pub mod model;
pub mod report;
pub mod search;
pub mod sensitivity;

use anyhow::Result;

use crate::artifacts::{Manifest, WindowEntry};
use crate::error::UserError;

/// All windows, or the one with 1-based index `window`.
pub fn select_windows(manifest: &Manifest, window: Option<usize>) -> Result<Vec<&WindowEntry>> {
    match window {
        None => Ok(manifest.windows.iter().collect()),
        Some(i) => match manifest.windows.iter().find(|w| w.window.index == i) {
            Some(w) => Ok(vec![w]),
            None => anyhow::bail!(UserError::new(format!(
                "window {i} does not exist; the manifest has windows 1 to {}",
                manifest.windows.len()
            ))),
        },
    }
}
