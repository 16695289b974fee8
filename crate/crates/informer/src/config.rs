use serde::{Deserialize, Serialize};
use stratlab_core::search::Combination;

use crate::error::{Error, Result};

/// Quantile levels of the multi-quantile head.
pub const QUANTILE_LEVELS: [f64; 13] = [
    0.01, 0.02, 0.03, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.97, 0.98, 0.99,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Rmse,
    Quantile,
    Gmadl,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmse" => Ok(LossKind::Rmse),
            "quantile" => Ok(LossKind::Quantile),
            "gmadl" => Ok(LossKind::Gmadl),
            _ => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Rmse => "rmse",
            LossKind::Quantile => "quantile",
            LossKind::Gmadl => "gmadl",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InformerConfig {
    pub past_window: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    /// Factor `c` in `u = ceil(c ln L_Q)`.
    pub sampling_factor: f64,
    pub loss: LossKind,
    pub quantile_levels: Vec<f64>,
    pub gmadl_a: f64,
    pub gmadl_b: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Validation cadence in batches.
    pub validate_every: usize,
    pub seed: u64,
}

impl Default for InformerConfig {
    fn default() -> Self {
        InformerConfig {
            past_window: 60,
            d_model: 256,
            d_ff: 256,
            n_heads: 2,
            encoder_layers: 2,
            decoder_layers: 1,
            dropout: 0.1,
            sampling_factor: 5.0,
            loss: LossKind::Gmadl,
            quantile_levels: QUANTILE_LEVELS.to_vec(),
            gmadl_a: 100.0,
            gmadl_b: 2.0,
            batch_size: 64,
            learning_rate: 1e-3,
            max_epochs: 40,
            patience: 15,
            validate_every: 300,
            seed: 0,
        }
    }
}

impl InformerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.past_window < 2 {
            return fail(format!("past_window must be >= 2, got {}", self.past_window));
        }
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 || self.encoder_layers == 0 || self.decoder_layers == 0 {
            return fail("d_ff and layer counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.sampling_factor > 0.0) {
            return fail(format!("sampling factor {} must be positive", self.sampling_factor));
        }
        if self.patience == 0 || self.batch_size == 0 || self.validate_every == 0 || self.max_epochs == 0 {
            return fail("patience, batch_size, validate_every and max_epochs must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be finite and >= 0", self.learning_rate));
        }
        if self.loss == LossKind::Quantile {
            let q = &self.quantile_levels;
            if q.is_empty() || q.iter().any(|&v| !(v > 0.0 && v < 1.0)) || q.windows(2).any(|w| w[0] >= w[1]) {
                return fail(format!("quantile levels must be strictly increasing in (0, 1): {q:?}"));
            }
        }
        if self.loss == LossKind::Gmadl && !(self.gmadl_a > 0.0 && self.gmadl_b >= 0.0) {
            return fail(format!("GMADL needs a > 0 and b >= 0, got a={} b={}", self.gmadl_a, self.gmadl_b));
        }
        Ok(())
    }

    /// Width of the prediction head.
    pub fn output_dim(&self) -> usize {
        match self.loss {
            LossKind::Quantile => self.quantile_levels.len(),
            LossKind::Rmse | LossKind::Gmadl => 1,
        }
    }

    /// Length of the decoder's known-history block.
    pub fn decoder_history(&self) -> usize {
        (self.past_window / 2).max(1)
    }

    /// Overrides the fields named in a model search combination.
    pub fn with_combination(&self, c: &Combination) -> Result<Self> {
        let mut out = self.clone();
        let uint = |name: &str| -> Result<Option<usize>> {
            match c.get(name) {
                None => Ok(None),
                Some(_) => {
                    let v = c.int(name).map_err(|e| Error::Config(e.to_string()))?;
                    usize::try_from(v)
                        .map(Some)
                        .map_err(|_| Error::Config(format!("{name} must be non-negative, got {v}")))
                }
            }
        };
        let real = |name: &str| -> Result<Option<f64>> {
            match c.get(name) {
                None => Ok(None),
                Some(_) => c.real(name).map(Some).map_err(|e| Error::Config(e.to_string())),
            }
        };
        if let Some(v) = uint("past_window")? {
            out.past_window = v;
        }
        if let Some(v) = uint("batch_size")? {
            out.batch_size = v;
        }
        if let Some(v) = real("learning_rate")? {
            out.learning_rate = v;
        }
        if let Some(v) = uint("d_model")? {
            out.d_model = v;
        }
        if let Some(v) = uint("d_ff")? {
            out.d_ff = v;
        }
        if let Some(v) = uint("n_heads")? {
            out.n_heads = v;
        }
        if let Some(v) = real("dropout")? {
            out.dropout = v;
        }
        if let Some(v) = uint("encoder_layers")? {
            out.encoder_layers = v;
        }
        if let Some(v) = uint("decoder_layers")? {
            out.decoder_layers = v;
        }
        out.validate()?;
        Ok(out)
    }
}
