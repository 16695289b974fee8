//! Run configuration: one TOML file with defaults for every field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stratlab_core::market::{months_to_rows, Frequency, Interval, WindowSpec};
use stratlab_core::search::{ParamValue, SearchSpace};
use stratlab_informer::InformerConfig;

use crate::error::UserError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random draw in a run derives from it.
    pub seed: u64,
    /// Proportional fee charged on every unit of position change.
    pub fee: f64,
    pub out_dir: PathBuf,
    /// Worker threads, 0 for one per core.
    pub jobs: usize,
    pub data: DataConfig,
    pub windows: WindowConfig,
    /// Base Informer configuration; model search overrides individual fields.
    pub model: InformerConfig,
    pub model_search: ModelSearchConfig,
    /// Per-strategy axis overrides, e.g. `[search.macd] fast = [3, 5]`.
    pub search: BTreeMap<String, AxisOverrides>,
    pub sensitivity: SensitivityConfig,
}

pub type AxisOverrides = BTreeMap<String, Vec<AxisValue>>;

/// One axis value in a config file; `"-"` stands for an absent threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Int(i64),
    Real(f64),
    Text(String),
}

impl AxisValue {
    pub fn to_param(&self) -> Result<ParamValue, UserError> {
        match self {
            AxisValue::Int(v) => Ok(ParamValue::Int(*v)),
            AxisValue::Real(v) => Ok(ParamValue::Real(*v)),
            AxisValue::Text(s) if s == "-" => Ok(ParamValue::Absent),
            AxisValue::Text(s) => Err(UserError::new(format!("axis value '{s}' is neither a number nor \"-\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub klines: PathBuf,
    pub interval: Interval,
    pub exogenous: Vec<ExogenousSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExogenousSource {
    pub name: String,
    pub path: PathBuf,
    pub frequency: Frequency,
}

/// Walk-forward layout in 30-day months. The optional row counts replace the
/// month spans, which is how short synthetic series are split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub count: usize,
    pub in_sample_months: usize,
    pub out_sample_months: usize,
    pub val_fraction: f64,
    pub in_sample_rows: Option<usize>,
    pub out_sample_rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSearchConfig {
    pub samples: usize,
    pub axes: AxisOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub val_months: Vec<usize>,
    pub window_counts: Vec<usize>,
    pub top_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            fee: 0.001,
            out_dir: PathBuf::from("out"),
            jobs: 0,
            data: DataConfig::default(),
            windows: WindowConfig::default(),
            model: InformerConfig::default(),
            model_search: ModelSearchConfig::default(),
            search: BTreeMap::new(),
            sensitivity: SensitivityConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            klines: PathBuf::from("klines.csv"),
            interval: Interval::M5,
            exogenous: Vec::new(),
        }
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            count: 6,
            in_sample_months: 24,
            out_sample_months: 6,
            val_fraction: 0.2,
            in_sample_rows: None,
            out_sample_rows: None,
        }
    }
}

impl Default for ModelSearchConfig {
    fn default() -> Self {
        ModelSearchConfig {
            samples: 30,
            axes: BTreeMap::new(),
        }
    }
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            val_months: vec![3, 6, 9, 12],
            window_counts: vec![3, 6, 12],
            top_n: 10,
        }
    }
}

impl WindowConfig {
    fn in_sample(&self, interval: Interval) -> usize {
        self.in_sample_rows
            .unwrap_or_else(|| months_to_rows(interval, self.in_sample_months))
    }

    fn out_sample(&self, interval: Interval) -> usize {
        self.out_sample_rows
            .unwrap_or_else(|| months_to_rows(interval, self.out_sample_months))
    }

    /// Rows in one month of the configured layout; with row overrides this is
    /// the in-sample span divided by `in_sample_months`.
    pub fn rows_per_month(&self, interval: Interval) -> f64 {
        self.in_sample(interval) as f64 / self.in_sample_months.max(1) as f64
    }

    pub fn spec(&self, interval: Interval) -> WindowSpec {
        let in_sample = self.in_sample(interval);
        WindowSpec {
            n_windows: self.count,
            in_sample,
            out_sample: self.out_sample(interval),
            validation: (in_sample as f64 * self.val_fraction).round() as usize,
        }
    }

    /// Same test period and in-sample span with the validation span set to
    /// `months` months.
    pub fn with_validation_months(&self, interval: Interval, months: usize) -> WindowSpec {
        let mut spec = self.spec(interval);
        spec.validation = (self.rows_per_month(interval) * months as f64).round() as usize;
        spec
    }

    /// Same test period and in-sample span split into `count` windows.
    pub fn with_count(&self, interval: Interval, count: usize) -> Result<WindowSpec, UserError> {
        let base = self.spec(interval);
        let total = base.n_windows * base.out_sample;
        if count == 0 || total % count != 0 {
            return Err(UserError::new(format!(
                "a test period of {total} rows cannot be split into {count} equal windows"
            )));
        }
        Ok(WindowSpec {
            n_windows: count,
            out_sample: total / count,
            ..base
        })
    }
}

impl RunConfig {
    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, UserError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UserError::new(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| UserError::new(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.out_dir);
        join(&mut self.data.klines);
        for e in &mut self.data.exogenous {
            join(&mut e.path);
        }
    }

    pub fn validate(&self) -> Result<(), UserError> {
        if !(0.0..1.0).contains(&self.fee) {
            return Err(UserError::new(format!("fee {} outside [0, 1)", self.fee)));
        }
        if !(0.0..1.0).contains(&self.windows.val_fraction) {
            return Err(UserError::new(format!(
                "val_fraction {} outside [0, 1)",
                self.windows.val_fraction
            )));
        }
        if self.windows.count == 0 {
            return Err(UserError::new("windows.count must be at least 1"));
        }
        self.model
            .validate()
            .map_err(|e| UserError::new(format!("[model]: {e}")))?;
        Ok(())
    }

    /// Checks that every input file named by the config exists.
    pub fn check_inputs(&self) -> Result<(), UserError> {
        let mut paths = vec![&self.data.klines];
        paths.extend(self.data.exogenous.iter().map(|e| &e.path));
        for p in paths {
            if !p.is_file() {
                return Err(UserError::new(format!("input file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Seed for one named stage of one window.
    pub fn derived_seed(&self, stage: &str, window: usize) -> u64 {
        // FNV-1a over the stage name, mixed with the window and master seed
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in stage.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^ self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (window as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
    }
}

/// Replaces the values of named axes. Unknown axis names are a config error.
pub fn apply_overrides(mut space: SearchSpace, overrides: Option<&AxisOverrides>) -> Result<SearchSpace, UserError> {
    let Some(overrides) = overrides else {
        return Ok(space);
    };
    for (name, values) in overrides {
        let axis = space
            .axes
            .iter_mut()
            .find(|a| &a.name == name)
            .ok_or_else(|| UserError::new(format!("unknown search axis '{name}'")))?;
        if values.is_empty() {
            return Err(UserError::new(format!("search axis '{name}' has no values")));
        }
        axis.values = values.iter().map(AxisValue::to_param).collect::<Result<_, _>>()?;
    }
    Ok(space)
}
