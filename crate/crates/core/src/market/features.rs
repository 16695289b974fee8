use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};

use super::candles::{compute_returns, CandleSeries, Interval};
use super::exogenous::{align_exogenous_partial, ExogenousSeries};
use crate::error::{insufficient, Error, Result};
use crate::indicators::{bollinger, ema, macd, rolling_std, rsi, sma, IndicatorSeries};

pub const HOURS: usize = 24;
pub const WEEKDAYS: usize = 7;

/// Column-major table of model inputs, one row per candle.
///
/// The first `warm_up` rows are kept so that row indices match the candle
/// series, but their indicator columns are not fully defined and must not be
/// used as model samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub interval: Interval,
    pub open_time: Vec<i64>,
    pub close_time: Vec<i64>,
    pub synthetic: Vec<bool>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub hour: Vec<u8>,
    pub weekday: Vec<u8>,
    pub warm_up: usize,
}

impl FeatureFrame {
    pub fn len(&self) -> usize {
        self.open_time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.open_time.is_empty()
    }

    pub fn n_real(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.column_index(name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Parameter(format!("no feature column '{name}'")))
    }

    pub fn returns(&self) -> &[f64] {
        self.column("returns").expect("returns column always present")
    }

    pub fn close(&self) -> &[f64] {
        self.column("close").expect("close column always present")
    }

    /// Real feature vector of one row.
    pub fn row(&self, t: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[t]).collect()
    }

    /// Copy of a contiguous row range; warm-up is clipped to the range.
    pub fn slice(&self, range: Range<usize>) -> FeatureFrame {
        FeatureFrame {
            interval: self.interval,
            open_time: self.open_time[range.clone()].to_vec(),
            close_time: self.close_time[range.clone()].to_vec(),
            synthetic: self.synthetic[range.clone()].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[range.clone()].to_vec()).collect(),
            hour: self.hour[range.clone()].to_vec(),
            weekday: self.weekday[range.clone()].to_vec(),
            warm_up: self.warm_up.saturating_sub(range.start).min(range.len()),
        }
    }

    /// Writes the frame as CSV with a header row; floats keep 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "open_time".to_string(),
            "close_time".into(),
            "synthetic".into(),
            "warm_up".into(),
            "hour".into(),
            "weekday".into(),
        ];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![
                self.open_time[t].to_string(),
                self.close_time[t].to_string(),
                u8::from(self.synthetic[t]).to_string(),
                u8::from(t < self.warm_up).to_string(),
                self.hour[t].to_string(),
                self.weekday[t].to_string(),
            ];
            rec.extend(self.columns.iter().map(|c| format!("{:.16e}", c[t])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path.as_ref())?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: std::io::Read>(reader: R, interval: Interval) -> Result<FeatureFrame> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 6 {
            return Err(Error::Parse {
                line: 1,
                message: "feature header too short".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(6).map(str::to_string).collect();
        let mut frame = FeatureFrame {
            interval,
            open_time: vec![],
            close_time: vec![],
            synthetic: vec![],
            columns: vec![Vec::new(); names.len()],
            names,
            hour: vec![],
            weekday: vec![],
            warm_up: 0,
        };
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let field = |k: usize| -> Result<&str> {
                rec.get(k).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("missing column {k}"),
                })
            };
            let bad = |k: usize| Error::Parse {
                line,
                message: format!("bad value in column {k}"),
            };
            frame.open_time.push(field(0)?.parse().map_err(|_| bad(0))?);
            frame.close_time.push(field(1)?.parse().map_err(|_| bad(1))?);
            frame.synthetic.push(field(2)? == "1");
            if field(3)? == "1" {
                frame.warm_up = i + 1;
            }
            frame.hour.push(field(4)?.parse().map_err(|_| bad(4))?);
            frame.weekday.push(field(5)?.parse().map_err(|_| bad(5))?);
            for (j, col) in frame.columns.iter_mut().enumerate() {
                col.push(field(6 + j)?.parse().map_err(|_| bad(6 + j))?);
            }
        }
        Ok(frame)
    }

    pub fn load_csv(path: impl AsRef<Path>, interval: Interval) -> Result<FeatureFrame> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path.as_ref())?), interval)
    }
}

/// Per-column mean and standard deviation fitted on a row range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fits on `rows` only, skipping any warm-up rows inside the range.
    /// Zero-variance columns get a divisor of 1.
    pub fn fit(frame: &FeatureFrame, rows: Range<usize>) -> Result<Self> {
        let rows = rows.start.max(frame.warm_up)..rows.end;
        if rows.len() < 2 || rows.end > frame.len() {
            return Err(insufficient("normalisation statistics", 2, rows.len()));
        }
        let n = rows.len() as f64;
        let mut mean = Vec::with_capacity(frame.n_real());
        let mut std = Vec::with_capacity(frame.n_real());
        for (name, col) in frame.names.iter().zip(&frame.columns) {
            let xs = &col[rows.clone()];
            if let Some(p) = xs.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite {name} at row {} inside the fit range",
                    rows.start + p
                )));
            }
            let m = xs.iter().sum::<f64>() / n;
            let s = (xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
            mean.push(m);
            std.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
        }
        Ok(NormStats {
            names: frame.names.clone(),
            mean,
            std,
        })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Rolling-window lengths derived from the candle interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Horizons {
    pub hour: usize,
    pub day: usize,
    pub week: usize,
}

impl Horizons {
    pub fn for_interval(interval: Interval) -> Self {
        Horizons {
            hour: interval.per_hour().max(2),
            day: interval.per_day().max(2),
            week: (7 * interval.per_day()).max(2),
        }
    }
}

pub const MACD_WINDOWS: (usize, usize, usize) = (12, 26, 9);
pub const RSI_WINDOW: usize = 14;
pub const BOLLINGER_WINDOW: usize = 20;
pub const BOLLINGER_K: f64 = 2.0;

/// Number of leading rows whose features are not all defined.
pub fn warm_up_rows(interval: Interval) -> usize {
    let h = Horizons::for_interval(interval);
    let (_, slow, signal) = MACD_WINDOWS;
    [h.week - 1, slow + signal - 2, RSI_WINDOW, BOLLINGER_WINDOW - 1]
        .into_iter()
        .max()
        .unwrap_or(0)
}

fn ratio(ind: &IndicatorSeries<f64>, close: &[f64]) -> Vec<f64> {
    ind.values.iter().zip(close).map(|(a, c)| a / c).collect()
}

/// Builds the model input table from a gap-free candle series.
///
/// Exogenous columns are appended after `returns` in the order given. Each
/// must cover every row from the warm-up boundary on; earlier rows without a
/// prior value are set to NaN.
pub fn build_features(series: &CandleSeries, exo: &[ExogenousSeries]) -> Result<FeatureFrame> {
    let warm_up = warm_up_rows(series.interval);
    if series.len() <= warm_up {
        return Err(insufficient("feature warm-up", warm_up + 1, series.len()));
    }
    let step = series.interval.millis();
    if let Some(w) = series.candles.windows(2).find(|w| w[1].open_time - w[0].open_time != step) {
        return Err(Error::Data(format!(
            "series has a gap after {}; run fill_gaps first",
            w[0].open_time
        )));
    }

    let c = &series.candles;
    let open: Vec<f64> = c.iter().map(|c| c.open).collect();
    let high: Vec<f64> = c.iter().map(|c| c.high).collect();
    let low: Vec<f64> = c.iter().map(|c| c.low).collect();
    let close: Vec<f64> = c.iter().map(|c| c.close).collect();
    let volume: Vec<f64> = c.iter().map(|c| c.volume).collect();
    let returns = compute_returns(series)?;
    let open_time: Vec<i64> = c.iter().map(|c| c.open_time).collect();
    let h = Horizons::for_interval(series.interval);

    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut push = |name: &str, col: Vec<f64>| {
        names.push(name.to_string());
        columns.push(col);
    };

    let ratio_to_close = |x: &[f64]| -> Vec<f64> { x.iter().zip(&close).map(|(a, c)| a / c).collect() };
    let open_r = ratio_to_close(&open);
    let high_r = ratio_to_close(&high);
    let low_r = ratio_to_close(&low);

    push("open", open);
    push("high", high);
    push("low", low);
    push("close", close.clone());
    push("volume", volume);
    push("returns", returns.clone());
    for e in exo {
        let aligned = align_exogenous_partial(&open_time, e)?;
        if let Some(p) = aligned[warm_up..].iter().position(Option::is_none) {
            return Err(Error::Coverage(format!(
                "{} has no value before row at {}",
                e.name,
                open_time[warm_up + p]
            )));
        }
        push(&e.name, aligned.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect());
    }
    push("open_to_close", open_r);
    push("high_to_close", high_r);
    push("low_to_close", low_r);
    push("vol_1h", rolling_std(&returns, h.hour)?.values);
    push("vol_1d", rolling_std(&returns, h.day)?.values);
    push("vol_7d", rolling_std(&returns, h.week)?.values);
    push("sma_1h_to_close", ratio(&sma(&close, h.hour)?, &close));
    push("sma_1d_to_close", ratio(&sma(&close, h.day)?, &close));
    push("sma_7d_to_close", ratio(&sma(&close, h.week)?, &close));
    push("ema_1h_to_close", ratio(&ema(&close, h.hour)?, &close));
    push("ema_1d_to_close", ratio(&ema(&close, h.day)?, &close));
    let (fast, slow, signal) = MACD_WINDOWS;
    let m = macd(&close, fast, slow, signal)?;
    push("macd", m.line.values);
    push("macd_signal", m.signal.values);
    push("rsi", rsi(&close, RSI_WINDOW)?.values);
    let bb = bollinger(&close, BOLLINGER_WINDOW, BOLLINGER_K)?;
    push("low_bband_to_close", ratio(&bb.lower, &close));
    push("up_bband_to_close", ratio(&bb.upper, &close));
    push("mid_bband_to_close", ratio(&bb.mid, &close));

    for (name, col) in names.iter().zip(&columns) {
        if let Some(p) = col[warm_up..].iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "feature {name} is not finite at row {}",
                warm_up + p
            )));
        }
    }

    let mut hour = Vec::with_capacity(c.len());
    let mut weekday = Vec::with_capacity(c.len());
    for candle in c {
        let dt = DateTime::from_timestamp_millis(candle.close_time)
            .ok_or_else(|| Error::Data(format!("timestamp {} out of range", candle.close_time)))?;
        hour.push(dt.hour() as u8);
        weekday.push(dt.weekday().num_days_from_monday() as u8);
    }

    Ok(FeatureFrame {
        interval: series.interval,
        open_time,
        close_time: c.iter().map(|c| c.close_time).collect(),
        synthetic: series.synthetic.clone(),
        names,
        columns,
        hour,
        weekday,
        warm_up,
    })
}
