use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::candles::Interval;
use crate::error::{Error, Result};

/// Calendar month used for window spans, in days.
pub const DAYS_PER_MONTH: usize = 30;

pub fn months_to_rows(interval: Interval, months: usize) -> usize {
    months * DAYS_PER_MONTH * interval.per_day()
}

/// One walk-forward split. Ranges index rows of the feature frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataWindow {
    /// 1-based.
    pub index: usize,
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl DataWindow {
    pub fn in_sample(&self) -> Range<usize> {
        self.train.start..self.validation.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub n_windows: usize,
    /// Rows in train + validation.
    pub in_sample: usize,
    /// Rows in each test slice; consecutive windows advance by this much.
    pub out_sample: usize,
    /// Rows taken from the end of the in-sample span for validation.
    pub validation: usize,
}

impl WindowSpec {
    /// Spans given in 30-day months with validation as a fraction of in-sample.
    pub fn from_months(
        interval: Interval,
        n_windows: usize,
        in_sample_months: usize,
        out_sample_months: usize,
        val_fraction: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Parameter(format!(
                "validation fraction must be in [0, 1), got {val_fraction}"
            )));
        }
        let in_sample = months_to_rows(interval, in_sample_months);
        Ok(WindowSpec {
            n_windows,
            in_sample,
            out_sample: months_to_rows(interval, out_sample_months),
            validation: (in_sample as f64 * val_fraction).round() as usize,
        })
    }

    /// 24-month in-sample, 6-month out-of-sample, 20% validation.
    pub fn standard_layout(interval: Interval, n_windows: usize) -> Self {
        Self::from_months(interval, n_windows, 24, 6, 0.2).expect("valid defaults")
    }

    pub fn required_rows(&self) -> usize {
        self.in_sample + self.n_windows * self.out_sample
    }
}

/// Splits `n_rows` into walk-forward windows whose test slices tile the end
/// of the data: the last test slice ends at the final row.
pub fn make_windows(n_rows: usize, spec: &WindowSpec) -> Result<Vec<DataWindow>> {
    if spec.n_windows == 0 || spec.out_sample == 0 {
        return Err(Error::Parameter("need at least one window with a non-empty test slice".into()));
    }
    if spec.validation >= spec.in_sample {
        return Err(Error::Parameter(format!(
            "validation span {} leaves no training rows in {}",
            spec.validation, spec.in_sample
        )));
    }
    let required = spec.required_rows();
    if required > n_rows {
        return Err(Error::Sizing(format!(
            "{} windows need {required} rows, {n_rows} available",
            spec.n_windows
        )));
    }
    let first_test = n_rows - spec.n_windows * spec.out_sample;
    Ok((0..spec.n_windows)
        .map(|k| {
            let test_start = first_test + k * spec.out_sample;
            let in_start = test_start - spec.in_sample;
            let val_start = test_start - spec.validation;
            DataWindow {
                index: k + 1,
                train: in_start..val_start,
                validation: val_start..test_start,
                test: test_start..test_start + spec.out_sample,
            }
        })
        .collect())
}
