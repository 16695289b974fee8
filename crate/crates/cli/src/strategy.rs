//! Strategy identifiers and the glue from a parameter map to positions on a
//! slice of the feature frame.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use stratlab_core::indicators::rsi;
use stratlab_core::metrics::backtest;
use serde::{Deserialize, Serialize};
use stratlab_core::search::{macd_space, quantile_space, rsi_space, threshold_space, ParamValue, Scored, SearchSpace};
use stratlab_core::strategies::{
    apply_thresholds, buy_and_hold, macd_strategy, quantile_forecast_strategy, threshold_forecast_strategy,
    PositionSeries, QuantileForecasts, QuantileParams, ThresholdParams,
};
use stratlab_core::BacktestReport;
use stratlab_informer::LossKind;

use crate::error::UserError;

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyId {
    BuyAndHold,
    Macd,
    Rsi,
    Rmse,
    Quantile,
    Gmadl,
}

impl StrategyId {
    pub const ALL: [StrategyId; 6] = [
        StrategyId::BuyAndHold,
        StrategyId::Macd,
        StrategyId::Rsi,
        StrategyId::Rmse,
        StrategyId::Quantile,
        StrategyId::Gmadl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyId::BuyAndHold => "buy_and_hold",
            StrategyId::Macd => "macd",
            StrategyId::Rsi => "rsi",
            StrategyId::Rmse => "rmse",
            StrategyId::Quantile => "quantile",
            StrategyId::Gmadl => "gmadl",
        }
    }

    /// Row label in summary tables.
    pub fn label(self) -> &'static str {
        match self {
            StrategyId::BuyAndHold => "Buy and Hold",
            StrategyId::Macd => "MACD Strategy",
            StrategyId::Rsi => "RSI Strategy",
            StrategyId::Rmse => "RMSE Informer",
            StrategyId::Quantile => "Quantile Informer",
            StrategyId::Gmadl => "GMADL Informer",
        }
    }

    pub fn loss(self) -> Option<LossKind> {
        match self {
            StrategyId::Rmse => Some(LossKind::Rmse),
            StrategyId::Quantile => Some(LossKind::Quantile),
            StrategyId::Gmadl => Some(LossKind::Gmadl),
            _ => None,
        }
    }

    pub fn from_loss(loss: LossKind) -> Self {
        match loss {
            LossKind::Rmse => StrategyId::Rmse,
            LossKind::Quantile => StrategyId::Quantile,
            LossKind::Gmadl => StrategyId::Gmadl,
        }
    }

    /// Default parameter space; buy-and-hold has none.
    pub fn space(self) -> Option<SearchSpace> {
        match self {
            StrategyId::BuyAndHold => None,
            StrategyId::Macd => Some(macd_space()),
            StrategyId::Rsi => Some(rsi_space()),
            StrategyId::Rmse | StrategyId::Gmadl => Some(threshold_space()),
            StrategyId::Quantile => Some(quantile_space()),
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyId {
    type Err = UserError;

    fn from_str(s: &str) -> Result<Self, UserError> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        StrategyId::ALL
            .into_iter()
            .find(|id| id.name() == norm || (norm == "bh" && *id == StrategyId::BuyAndHold))
            .ok_or_else(|| {
                let names: Vec<_> = StrategyId::ALL.iter().map(|s| s.name()).collect();
                UserError::new(format!("unknown strategy '{s}', expected one of {}", names.join(", ")))
            })
    }
}

fn int(p: &Params, name: &str) -> Result<usize> {
    match p.get(name).and_then(|v| v.as_int()) {
        Some(v) if v >= 0 => Ok(v as usize),
        _ => bail!(UserError::new(format!("parameter '{name}' missing or not a non-negative integer"))),
    }
}

fn opt(p: &Params, name: &str) -> Result<Option<f64>> {
    match p.get(name) {
        None | Some(ParamValue::Absent) => Ok(None),
        Some(v) => Ok(v.as_real()),
    }
}

fn thresholds(p: &Params) -> Result<ThresholdParams<f64>> {
    Ok(ThresholdParams {
        enter_long: opt(p, "enter_long")?,
        exit_long: opt(p, "exit_long")?,
        enter_short: opt(p, "enter_short")?,
        exit_short: opt(p, "exit_short")?,
    })
}

/// Metrics of one evaluation without the equity curve, so a large grid
/// search keeps only a few numbers per combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub final_value: f64,
    pub arc: f64,
    pub asd: f64,
    pub ir_star: f64,
    pub md: f64,
    pub ir_double_star: f64,
    pub n_trades: usize,
    pub long_pct: f64,
    pub short_pct: f64,
}

impl Score {
    pub const HEADER: [&'static str; 9] = ["VAL", "ARC", "ASD", "IR*", "MD", "IR**", "N", "LONG", "SHORT"];

    pub fn cells(&self) -> Vec<String> {
        let f = crate::artifacts::fmt_f;
        vec![
            f(self.final_value),
            f(self.arc),
            f(self.asd),
            f(self.ir_star),
            f(self.md),
            f(self.ir_double_star),
            self.n_trades.to_string(),
            f(self.long_pct),
            f(self.short_pct),
        ]
    }
}

impl From<&BacktestReport> for Score {
    fn from(r: &BacktestReport) -> Self {
        Score {
            final_value: r.final_value,
            arc: r.arc,
            asd: r.asd,
            ir_star: r.ir_star,
            md: r.md,
            ir_double_star: r.ir_double_star,
            n_trades: r.n_trades,
            long_pct: r.long_pct,
            short_pct: r.short_pct,
        }
    }
}

impl Scored for Score {
    fn score(&self) -> f64 {
        self.ir_double_star
    }

    fn trades(&self) -> usize {
        self.n_trades
    }
}

/// Model forecasts for a contiguous block of frame rows starting at `first_row`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowForecasts {
    pub first_row: usize,
    pub levels: Option<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl WindowForecasts {
    /// Reads a prediction CSV (`open_time,y_hat` or `open_time,q...`) and
    /// locates its rows in the frame.
    pub fn load(path: &Path, open_time: &[i64]) -> Result<Self> {
        if !path.is_file() {
            bail!(UserError::new(format!(
                "{} not found; run `stratlab train` and `stratlab predict` first",
                path.display()
            )));
        }
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = rdr.headers()?.clone();
        let levels = if header.get(1).is_some_and(|h| h.starts_with('q')) {
            Some(
                header
                    .iter()
                    .skip(1)
                    .map(|h| h[1..].parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .with_context(|| format!("bad quantile header in {}", path.display()))?,
            )
        } else {
            None
        };
        let mut first_row = None;
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let ts: i64 = rec[0].parse().with_context(|| format!("{} line {}", path.display(), i + 2))?;
            let row = open_time
                .binary_search(&ts)
                .map_err(|_| anyhow::anyhow!("{}: timestamp {ts} not in the frame", path.display()))?;
            let start = *first_row.get_or_insert(row);
            if row != start + i {
                bail!("{}: rows are not contiguous at line {}", path.display(), i + 2);
            }
            let v = rec
                .iter()
                .skip(1)
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("{} line {}", path.display(), i + 2))?;
            values.push(v);
        }
        Ok(WindowForecasts {
            first_row: first_row.unwrap_or(0),
            levels,
            values,
        })
    }

    fn width(&self) -> usize {
        self.levels.as_ref().map_or(1, Vec::len)
    }

    /// One entry per row of `rows`; rows without a forecast are NaN.
    fn rows(&self, rows: Range<usize>) -> Vec<Vec<f64>> {
        rows.map(|t| {
            t.checked_sub(self.first_row)
                .and_then(|k| self.values.get(k))
                .cloned()
                .unwrap_or_else(|| vec![f64::NAN; self.width()])
        })
        .collect()
    }
}

/// Inputs for evaluating strategies on one slice of frame rows.
pub struct SliceContext<'a> {
    pub close: &'a [f64],
    pub returns: &'a [f64],
    pub rows: Range<usize>,
    pub forecasts: Option<&'a WindowForecasts>,
    pub fee: f64,
    pub per_year: usize,
    rsi_cache: HashMap<usize, Vec<Option<f64>>>,
}

impl<'a> SliceContext<'a> {
    pub fn new(
        close: &'a [f64],
        returns: &'a [f64],
        rows: Range<usize>,
        forecasts: Option<&'a WindowForecasts>,
        fee: f64,
        per_year: usize,
    ) -> Self {
        SliceContext {
            close,
            returns,
            rows,
            forecasts,
            fee,
            per_year,
            rsi_cache: HashMap::new(),
        }
    }

    /// Precomputes the lagged RSI for every window length of `space`, so a
    /// grid search does not recompute it per threshold combination.
    pub fn cache_rsi(&mut self, space: &SearchSpace) -> Result<()> {
        if let Some(axis) = space.axes.iter().find(|a| a.name == "window") {
            for v in &axis.values {
                let w = v.as_int().filter(|&w| w > 0).ok_or_else(|| UserError::new("RSI window must be positive"))? as usize;
                // too long for the history: left uncached so each combination reports it
                if let Ok(lagged) = self.lagged_rsi(w) {
                    self.rsi_cache.insert(w, lagged);
                }
            }
        }
        Ok(())
    }

    fn lagged_rsi(&self, window: usize) -> Result<Vec<Option<f64>>> {
        let r = rsi(&self.close[..self.rows.end], window)?;
        Ok(r.lagged()[self.rows.clone()].to_vec())
    }

    fn forecasts(&self, strategy: StrategyId) -> Result<&WindowForecasts> {
        self.forecasts
            .ok_or_else(|| anyhow::anyhow!(UserError::new(format!("{strategy} needs model forecasts"))))
    }

    /// Positions on `rows`. Stateful rules start flat at the first row of the
    /// slice; indicators are computed on the full history up to the slice end.
    pub fn positions(&self, strategy: StrategyId, p: &Params) -> Result<PositionSeries> {
        let rows = self.rows.clone();
        Ok(match strategy {
            StrategyId::BuyAndHold => buy_and_hold(rows.len())?,
            StrategyId::Macd => {
                let short = int(p, "short")? != 0;
                let full = macd_strategy(&self.close[..rows.end], int(p, "fast")?, int(p, "slow")?, int(p, "signal")?, short)?;
                full.slice(rows)
            }
            StrategyId::Rsi => {
                let params = thresholds(p)?;
                params.validate_range(0.0, 100.0)?;
                let w = int(p, "window")?;
                match self.rsi_cache.get(&w) {
                    Some(lagged) => apply_thresholds(lagged, &params),
                    None => apply_thresholds(&self.lagged_rsi(w)?, &params),
                }
            }
            StrategyId::Rmse | StrategyId::Gmadl => {
                let f = self.forecasts(strategy)?;
                let point: Vec<f64> = f.rows(rows).into_iter().map(|v| v[0]).collect();
                threshold_forecast_strategy(&point, &thresholds(p)?)?
            }
            StrategyId::Quantile => {
                let f = self.forecasts(strategy)?;
                let levels = f
                    .levels
                    .clone()
                    .ok_or_else(|| UserError::new("quantile strategy needs quantile forecasts"))?;
                let q = QuantileForecasts {
                    levels,
                    values: f.rows(rows),
                };
                let params = QuantileParams {
                    enter_long: opt(p, "enter_long")?,
                    exit_long: opt(p, "exit_long")?,
                    enter_short: opt(p, "enter_short")?,
                    exit_short: opt(p, "exit_short")?,
                    threshold: opt(p, "threshold")?.ok_or_else(|| UserError::new("quantile threshold missing"))?,
                };
                quantile_forecast_strategy(&q, &params)?
            }
        })
    }

    pub fn evaluate(&self, strategy: StrategyId, p: &Params) -> Result<BacktestReport> {
        let pos = self.positions(strategy, p)?;
        Ok(backtest(&self.returns[self.rows.clone()], &pos, self.fee, self.per_year)?)
    }
}
