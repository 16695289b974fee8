use std::ops::Range;

use stratlab_core::market::{FeatureFrame, NormStats, HOURS, WEEKDAYS};

use crate::error::{Error, Result};

/// Model-ready view of a feature frame: normalised real columns, integer
/// categories and the next-interval return target.
#[derive(Debug, Clone)]
pub struct Dataset {
    n_real: usize,
    /// Row-major, `len * n_real`.
    real: Vec<f64>,
    /// One id column per categorical variable.
    cats: Vec<Vec<usize>>,
    cardinalities: Vec<usize>,
    target: Vec<f64>,
    open_time: Vec<i64>,
    /// Rows before this index are never read as model input.
    first_valid: usize,
}

/// One minibatch. `real` is (B, n, n_real) and each `cats[j]` is (B, n).
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub past_window: usize,
    pub n_real: usize,
    pub real: Vec<f64>,
    pub cats: Vec<Vec<usize>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(
        n_real: usize,
        real: Vec<f64>,
        cats: Vec<Vec<usize>>,
        cardinalities: Vec<usize>,
        target: Vec<f64>,
        open_time: Vec<i64>,
        first_valid: usize,
    ) -> Result<Self> {
        let len = target.len();
        if real.len() != len * n_real || open_time.len() != len || cats.len() != cardinalities.len() {
            return Err(Error::Data(format!(
                "dataset parts disagree: {} targets, {} real values for {n_real} columns, {} timestamps",
                len,
                real.len(),
                open_time.len()
            )));
        }
        for (j, (col, &card)) in cats.iter().zip(&cardinalities).enumerate() {
            if col.len() != len {
                return Err(Error::Data(format!("categorical column {j} has {} rows, expected {len}", col.len())));
            }
            if let Some(bad) = col.iter().find(|&&id| id >= card) {
                return Err(Error::Data(format!("categorical column {j} id {bad} >= cardinality {card}")));
            }
        }
        Ok(Dataset {
            n_real,
            real,
            cats,
            cardinalities,
            target,
            open_time,
            first_valid,
        })
    }

    /// Normalises every real column with `norm`; categories are hour of day
    /// and day of week, and the target is the `returns` column.
    pub fn from_frame(frame: &FeatureFrame, norm: &NormStats) -> Result<Self> {
        if norm.names != frame.names {
            return Err(Error::Data("normalisation statistics were fitted on different columns".into()));
        }
        let n_real = frame.n_real();
        let mut real = Vec::with_capacity(frame.len() * n_real);
        for t in 0..frame.len() {
            real.extend(norm.apply(&frame.row(t)));
        }
        Self::new(
            n_real,
            real,
            vec![
                frame.hour.iter().map(|&h| h as usize).collect(),
                frame.weekday.iter().map(|&w| w as usize).collect(),
            ],
            vec![HOURS, WEEKDAYS],
            frame.returns().to_vec(),
            frame.open_time.clone(),
            frame.warm_up,
        )
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn open_time(&self) -> &[i64] {
        &self.open_time
    }

    /// Normalised real features, row-major.
    pub fn real(&self) -> &[f64] {
        &self.real
    }

    pub fn categories(&self) -> &[Vec<usize>] {
        &self.cats
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn first_valid(&self) -> usize {
        self.first_valid
    }

    /// Target rows `t` in `range` whose input window `t - n .. t` is usable.
    pub fn sample_rows(&self, range: Range<usize>, past_window: usize) -> Vec<usize> {
        let lo = range.start.max(self.first_valid + past_window);
        (lo..range.end.min(self.len())).collect()
    }

    /// Batch whose sample `i` reads rows `rows[i] - n .. rows[i]` and targets `rows[i]`.
    pub fn batch(&self, rows: &[usize], past_window: usize) -> Result<Batch> {
        let n = past_window;
        let mut real = Vec::with_capacity(rows.len() * n * self.n_real);
        let mut cats = vec![Vec::with_capacity(rows.len() * n); self.cats.len()];
        let mut targets = Vec::with_capacity(rows.len());
        for &t in rows {
            if t < self.first_valid + n || t >= self.len() {
                return Err(Error::Data(format!(
                    "row {t} lacks {n} rows of valid context (first valid row {}, length {})",
                    self.first_valid,
                    self.len()
                )));
            }
            real.extend_from_slice(&self.real[(t - n) * self.n_real..t * self.n_real]);
            for (out, col) in cats.iter_mut().zip(&self.cats) {
                out.extend_from_slice(&col[t - n..t]);
            }
            targets.push(self.target[t]);
        }
        if let Some(p) = real.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite input feature at batch offset {p}")));
        }
        Ok(Batch {
            size: rows.len(),
            past_window: n,
            n_real: self.n_real,
            real,
            cats,
            targets,
        })
    }
}
