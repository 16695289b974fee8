//! Output directory layout and the small readers and writers shared by the
//! subcommands. Every artifact is written in one piece by one writer.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stratlab_core::market::{DataWindow, FeatureFrame, Gap, Interval, NormStats, WindowSpec};

use crate::config::RunConfig;
use crate::error::UserError;

/// Written by `ingest`; everything downstream reads the frame through it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub interval: Interval,
    pub rows: usize,
    pub warm_up: usize,
    pub first_open_time: i64,
    pub last_open_time: i64,
    pub synthetic_rows: usize,
    pub gaps: Vec<Gap>,
    pub spec: WindowSpec,
    pub windows: Vec<WindowEntry>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    #[serde(flatten)]
    pub window: DataWindow,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub test_rows: usize,
    /// Feature normalisation fitted on this window's training slice.
    pub norm: NormStats,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.root.join("resolved_config.toml")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features.csv")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("windows.json")
    }
    pub fn gaps(&self) -> PathBuf {
        self.root.join("gaps.csv")
    }
    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.csv")
    }
    pub fn wasserstein(&self) -> PathBuf {
        self.root.join("wasserstein.csv")
    }
    pub fn search_dir(&self, strategy: &str) -> PathBuf {
        self.root.join("search").join(strategy)
    }
    pub fn model_search_dir(&self, loss: &str) -> PathBuf {
        self.root.join("model_search").join(loss)
    }
    pub fn model_dir(&self, loss: &str) -> PathBuf {
        self.root.join("models").join(loss)
    }
    pub fn checkpoint(&self, loss: &str, window: usize) -> PathBuf {
        self.model_dir(loss).join(format!("window_{window}.bin"))
    }
    pub fn predictions(&self, loss: &str, window: usize) -> PathBuf {
        self.root.join("predictions").join(loss).join(format!("window_{window}.csv"))
    }
    pub fn backtest_dir(&self, strategy: &str) -> PathBuf {
        self.root.join("backtest").join(strategy)
    }
    pub fn sensitivity(&self, study: &str, strategy: &str) -> PathBuf {
        self.root.join("sensitivity").join(format!("{study}_{strategy}.csv"))
    }
    pub fn ttest(&self, strategy: &str, benchmark: &str) -> PathBuf {
        self.root.join("ttest").join(format!("{strategy}_vs_{benchmark}.csv"))
    }

    /// Snapshot of the effective configuration, rewritten by every command.
    pub fn write_resolved_config(&self, cfg: &RunConfig) -> Result<()> {
        write_text(&self.resolved_config(), &cfg.to_toml())
    }

    pub fn load_manifest(&self) -> Result<Manifest> {
        let path = self.manifest();
        if !path.is_file() {
            return Err(UserError::new(format!(
                "{} not found; run `stratlab ingest` first",
                path.display()
            ))
            .into());
        }
        read_json(&path)
    }

    pub fn load_frame(&self, manifest: &Manifest) -> Result<FeatureFrame> {
        let frame = FeatureFrame::load_csv(self.features(), manifest.interval)
            .with_context(|| format!("reading {}", self.features().display()))?;
        if frame.len() != manifest.rows || frame.warm_up != manifest.warm_up {
            anyhow::bail!(UserError::new(format!(
                "{} does not match {}; rerun `stratlab ingest`",
                self.features().display(),
                self.manifest().display()
            )));
        }
        Ok(frame)
    }
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Opens a buffered file for a CSV writer.
pub fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    ensure_parent(path)?;
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Writes a CSV table from a header and string rows.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-precision float for tables; 17 significant digits keeps round trips exact.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}
