use std::io::Write;
use std::ops::Range;

use stratlab_core::strategies::QuantileForecasts;

use crate::config::LossKind;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::InformerModel;
use crate::train::predict_rows;

/// One forecast per interval. `values[i]` has one entry for point losses
/// and one per level (sorted ascending) for the quantile head.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecasts {
    pub rows: Vec<usize>,
    pub open_time: Vec<i64>,
    pub levels: Option<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl Forecasts {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Point forecasts, or the median level for a quantile head.
    pub fn point(&self) -> Vec<f64> {
        let col = match &self.levels {
            Some(l) => l
                .iter()
                .position(|&q| (q - 0.5).abs() < 1e-9)
                .unwrap_or(l.len() / 2),
            None => 0,
        };
        self.values.iter().map(|v| v[col]).collect()
    }

    /// Quantile view for quantile strategies.
    pub fn quantiles(&self) -> Result<QuantileForecasts<f64>> {
        let levels = self
            .levels
            .clone()
            .ok_or_else(|| Error::Config("forecasts come from a point model".into()))?;
        Ok(QuantileForecasts {
            levels,
            values: self.values.clone(),
        })
    }

    /// `open_time,y_hat` or `open_time,q0.01,...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["open_time".to_string()];
        match &self.levels {
            Some(l) => header.extend(l.iter().map(|q| format!("q{q}"))),
            None => header.push("y_hat".into()),
        }
        w.write_record(&header).map_err(csv_err)?;
        for (t, v) in self.open_time.iter().zip(&self.values) {
            let mut rec = vec![t.to_string()];
            rec.extend(v.iter().map(|x| format!("{x:.16e}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

/// Forecasts for every row of `range` after its first `past_window` rows.
/// The forecast for row `t` reads only rows `t - past_window .. t`.
pub fn predict_series(model: &InformerModel<f64>, ds: &Dataset, range: Range<usize>) -> Result<Forecasts> {
    let n = model.config.past_window;
    if range.end > ds.len() {
        return Err(Error::Data(format!("range end {} beyond {} rows", range.end, ds.len())));
    }
    if range.start < ds.first_valid() {
        return Err(Error::Data(format!(
            "range starts at row {} inside the warm-up (first valid row {})",
            range.start,
            ds.first_valid()
        )));
    }
    if range.len() <= n {
        return Err(Error::Data(format!(
            "range of {} rows leaves no forecasts after a context of {n}",
            range.len()
        )));
    }
    let rows: Vec<usize> = (range.start + n..range.end).collect();
    let k = model.config.output_dim();
    let flat = predict_rows(model, ds, &rows)?;
    let sorted = model.config.loss == LossKind::Quantile;
    let values = flat
        .chunks(k)
        .map(|c| {
            let mut v = c.to_vec();
            if sorted {
                v.sort_by(f64::total_cmp);
            }
            v
        })
        .collect();
    Ok(Forecasts {
        open_time: rows.iter().map(|&t| ds.open_time()[t]).collect(),
        rows,
        levels: sorted.then(|| model.config.quantile_levels.clone()),
        values,
    })
}
