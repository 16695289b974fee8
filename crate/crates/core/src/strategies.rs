//! Position generators: buy-and-hold, MACD, RSI and forecast-driven rules.
//!
//! All four-threshold strategies share one case expression, evaluated top to
//! bottom with the first matching branch winning:
//!
//! 1. enter long  -> `+1`
//! 2. exit long   -> `0`, only while long
//! 3. enter short -> `-1`
//! 4. exit short  -> `0`, only while short
//! 5. otherwise hold the previous position

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::{macd, rsi};
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Position {
    Short,
    #[default]
    Flat,
    Long,
}

impl Position {
    pub fn value(self) -> i8 {
        match self {
            Position::Short => -1,
            Position::Flat => 0,
            Position::Long => 1,
        }
    }

    pub fn as_real<T: Real>(self) -> T {
        match self {
            Position::Short => -T::one(),
            Position::Flat => T::zero(),
            Position::Long => T::one(),
        }
    }
}

impl From<Position> for i8 {
    fn from(p: Position) -> i8 {
        p.value()
    }
}

impl TryFrom<i8> for Position {
    type Error = Error;
    fn try_from(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(Position::Short),
            0 => Ok(Position::Flat),
            1 => Ok(Position::Long),
            _ => Err(Error::Parameter(format!("position must be -1, 0 or 1, got {v}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionSeries {
    pub positions: Vec<Position>,
    /// First index at which the strategy had a signal; earlier positions are flat.
    pub first_active: usize,
}

impl PositionSeries {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn values<T: Real>(&self) -> Vec<T> {
        self.positions.iter().map(|p| p.as_real()).collect()
    }

    /// Number of transitions from a non-long position into a long one.
    pub fn long_entries(&self) -> usize {
        let mut prev = Position::Flat;
        let mut n = 0;
        for &p in &self.positions {
            if p == Position::Long && prev != Position::Long {
                n += 1;
            }
            prev = p;
        }
        n
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> PositionSeries {
        PositionSeries {
            first_active: self.first_active.saturating_sub(range.start).min(range.len()),
            positions: self.positions[range].to_vec(),
        }
    }

    /// `timestamp,position` rows.
    pub fn write_csv<W: Write>(&self, timestamps: &[i64], writer: W) -> Result<()> {
        if timestamps.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} timestamps for {} positions",
                timestamps.len(),
                self.len()
            )));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "position"])?;
        for (t, p) in timestamps.iter().zip(&self.positions) {
            w.write_record([t.to_string(), p.value().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Thresholds on a scalar signal. `None` means the rule never fires.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdParams<T> {
    pub enter_long: Option<T>,
    pub exit_long: Option<T>,
    pub enter_short: Option<T>,
    pub exit_short: Option<T>,
}

impl<T: Real> ThresholdParams<T> {
    /// Return-threshold variants need a positive long entry and a negative short entry.
    pub fn validate_return_thresholds(&self) -> Result<()> {
        if self.enter_long.is_some_and(|x| x <= T::zero()) {
            return Err(Error::Parameter("enter_long must be positive".into()));
        }
        if self.enter_short.is_some_and(|x| x >= T::zero()) {
            return Err(Error::Parameter("enter_short must be negative".into()));
        }
        Ok(())
    }

    pub fn validate_range(&self, lo: T, hi: T) -> Result<()> {
        for (name, v) in self.named() {
            if let Some(v) = v {
                if !(v >= lo && v <= hi) {
                    return Err(Error::Parameter(format!("{name}={v} outside [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, Option<T>); 4] {
        [
            ("enter_long", self.enter_long),
            ("exit_long", self.exit_long),
            ("enter_short", self.enter_short),
            ("exit_short", self.exit_short),
        ]
    }
}

/// Quantile levels for each rule plus the return magnitude they are compared with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileParams<T> {
    pub enter_long: Option<f64>,
    pub exit_long: Option<f64>,
    pub enter_short: Option<f64>,
    pub exit_short: Option<f64>,
    pub threshold: T,
}

/// Forecast quantiles: `values[t][k]` is the forecast at `levels[k]` for interval `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecasts<T> {
    pub levels: Vec<f64>,
    pub values: Vec<Vec<T>>,
}

const LEVEL_TOLERANCE: f64 = 1e-9;

impl<T: Real> QuantileForecasts<T> {
    pub fn level_index(&self, level: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|&l| (l - level).abs() < LEVEL_TOLERANCE)
            .ok_or_else(|| Error::Config(format!("quantile level {level} not forecast")))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The shared case expression for one step.
#[inline]
pub fn case_rule(prev: Position, enter_long: bool, exit_long: bool, enter_short: bool, exit_short: bool) -> Position {
    if enter_long {
        Position::Long
    } else if exit_long && prev == Position::Long {
        Position::Flat
    } else if enter_short {
        Position::Short
    } else if exit_short && prev == Position::Short {
        Position::Flat
    } else {
        prev
    }
}

/// Applies the threshold case expression to a signal; `None` entries keep the
/// current position (flat before the first defined signal).
pub fn apply_thresholds<T: Real>(signal: &[Option<T>], params: &ThresholdParams<T>) -> PositionSeries {
    let mut positions = Vec::with_capacity(signal.len());
    let mut prev = Position::Flat;
    for s in signal {
        if let Some(s) = *s {
            prev = case_rule(
                prev,
                params.enter_long.is_some_and(|x| s > x),
                params.exit_long.is_some_and(|x| s < x),
                params.enter_short.is_some_and(|x| s < x),
                params.exit_short.is_some_and(|x| s > x),
            );
        }
        positions.push(prev);
    }
    PositionSeries {
        positions,
        first_active: first_some(signal),
    }
}

fn first_some<T>(xs: &[Option<T>]) -> usize {
    xs.iter().position(Option::is_some).unwrap_or(xs.len())
}

pub fn buy_and_hold(length: usize) -> Result<PositionSeries> {
    if length == 0 {
        return Err(Error::Parameter("buy and hold needs at least one interval".into()));
    }
    Ok(PositionSeries {
        positions: vec![Position::Long; length],
        first_active: 0,
    })
}

/// Long while the previous interval's MACD line is at or above its signal
/// line; otherwise flat, or short when `allow_short` is set.
pub fn macd_strategy<T: Real>(
    close: &[T],
    fast: usize,
    slow: usize,
    signal: usize,
    allow_short: bool,
) -> Result<PositionSeries> {
    let m = macd(close, fast, slow, signal)?;
    let line = m.line.lagged();
    let sig = m.signal.lagged();
    let below = if allow_short { Position::Short } else { Position::Flat };
    let positions = line
        .iter()
        .zip(&sig)
        .map(|(l, s)| match (l, s) {
            (Some(l), Some(s)) if *l >= *s => Position::Long,
            (Some(_), Some(_)) => below,
            _ => Position::Flat,
        })
        .collect();
    let first_active = line
        .iter()
        .zip(&sig)
        .position(|(l, s)| l.is_some() && s.is_some())
        .unwrap_or(close.len());
    Ok(PositionSeries {
        positions,
        first_active,
    })
}

/// Threshold rules on the previous interval's RSI. Thresholds live in [0, 100].
pub fn rsi_strategy<T: Real>(close: &[T], window: usize, params: &ThresholdParams<T>) -> Result<PositionSeries> {
    params.validate_range(T::zero(), T::lit(100.0))?;
    let r = rsi(close, window)?;
    Ok(apply_thresholds(&r.lagged(), params))
}

/// Threshold rules on point forecasts; `forecasts[t]` must only use data
/// before `t`. Non-finite entries mark intervals without a forecast.
pub fn threshold_forecast_strategy<T: Real>(forecasts: &[T], params: &ThresholdParams<T>) -> Result<PositionSeries> {
    params.validate_return_thresholds()?;
    let signal: Vec<Option<T>> = forecasts
        .iter()
        .map(|&f| if f.is_finite() { Some(f) } else { None })
        .collect();
    Ok(apply_thresholds(&signal, params))
}

/// Enters long when the `1 - enter_long` quantile is above `threshold`, exits
/// long when the `exit_long` quantile drops below `-threshold`, and mirrors
/// this for shorts.
pub fn quantile_forecast_strategy<T: Real>(
    forecasts: &QuantileForecasts<T>,
    params: &QuantileParams<T>,
) -> Result<PositionSeries> {
    if params.threshold <= T::zero() {
        return Err(Error::Parameter("quantile threshold must be positive".into()));
    }
    for level in [params.enter_long, params.exit_long, params.enter_short, params.exit_short]
        .into_iter()
        .flatten()
    {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Parameter(format!("quantile level {level} outside (0, 1)")));
        }
    }
    let idx = |level: Option<f64>| level.map(|l| forecasts.level_index(l)).transpose();
    let el = idx(params.enter_long.map(|l| 1.0 - l))?;
    let xl = idx(params.exit_long)?;
    let es = idx(params.enter_short)?;
    let xs = idx(params.exit_short.map(|l| 1.0 - l))?;
    let thr = params.threshold;

    let mut positions = Vec::with_capacity(forecasts.len());
    let mut prev = Position::Flat;
    let mut first_active = None;
    for (t, row) in forecasts.values.iter().enumerate() {
        if row.len() != forecasts.levels.len() {
            return Err(Error::Shape(format!(
                "row {t} has {} quantiles, expected {}",
                row.len(),
                forecasts.levels.len()
            )));
        }
        if row.iter().all(|v| v.is_finite()) {
            first_active.get_or_insert(t);
            prev = case_rule(
                prev,
                el.is_some_and(|k| row[k] > thr),
                xl.is_some_and(|k| row[k] < -thr),
                es.is_some_and(|k| row[k] < -thr),
                xs.is_some_and(|k| row[k] > thr),
            );
        }
        positions.push(prev);
    }
    Ok(PositionSeries {
        positions,
        first_active: first_active.unwrap_or(forecasts.len()),
    })
}
