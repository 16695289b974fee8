use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MS_PER_MINUTE: i64 = 60_000;
pub const MS_PER_HOUR: i64 = 60 * MS_PER_MINUTE;
pub const MS_PER_DAY: i64 = 24 * MS_PER_HOUR;

/// Candle interval, stored in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Interval(i64);

impl Interval {
    pub const M5: Interval = Interval(5 * MS_PER_MINUTE);
    pub const M15: Interval = Interval(15 * MS_PER_MINUTE);
    pub const M30: Interval = Interval(30 * MS_PER_MINUTE);

    pub fn from_millis(ms: i64) -> Result<Self> {
        if ms <= 0 {
            return Err(Error::Parameter(format!("interval must be positive, got {ms} ms")));
        }
        Ok(Interval(ms))
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    /// Number of intervals spanning `ms` milliseconds (at least one).
    pub fn count_in(self, ms: i64) -> usize {
        ((ms / self.0).max(1)) as usize
    }

    pub fn per_hour(self) -> usize {
        self.count_in(MS_PER_HOUR)
    }

    pub fn per_day(self) -> usize {
        self.count_in(MS_PER_DAY)
    }

    /// Intervals in a 365-day year.
    pub fn per_year(self) -> usize {
        self.count_in(365 * MS_PER_DAY)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = self.0;
        if ms % MS_PER_DAY == 0 {
            write!(f, "{}d", ms / MS_PER_DAY)
        } else if ms % MS_PER_HOUR == 0 {
            write!(f, "{}h", ms / MS_PER_HOUR)
        } else if ms % MS_PER_MINUTE == 0 {
            write!(f, "{}m", ms / MS_PER_MINUTE)
        } else {
            write!(f, "{ms}ms")
        }
    }
}

impl FromStr for Interval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
        let (num, unit) = s.split_at(split);
        let n: i64 = num
            .parse()
            .map_err(|_| Error::Parameter(format!("bad interval '{s}'")))?;
        let unit_ms = match unit {
            "ms" => 1,
            "s" => 1000,
            "m" | "min" => MS_PER_MINUTE,
            "h" => MS_PER_HOUR,
            "d" => MS_PER_DAY,
            _ => return Err(Error::Parameter(format!("bad interval unit in '{s}'"))),
        };
        Interval::from_millis(n * unit_ms)
    }
}

impl TryFrom<String> for Interval {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Interval> for String {
    fn from(i: Interval) -> String {
        i.to_string()
    }
}

/// One OHLCV k-line. Times are epoch milliseconds, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candle {
    pub open_time: i64,
    pub close_time: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Candle {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.open_time >= self.close_time {
            return Err(format!(
                "close_time {} not after open_time {}",
                self.close_time, self.open_time
            ));
        }
        let prices = [self.open, self.high, self.low, self.close, self.volume];
        if prices.iter().any(|p| !p.is_finite()) {
            return Err("non-finite price or volume".into());
        }
        if self.low > self.open.min(self.close) || self.high < self.open.max(self.close) {
            return Err(format!(
                "inconsistent prices o={} h={} l={} c={}",
                self.open, self.high, self.low, self.close
            ));
        }
        if self.volume < 0.0 {
            return Err(format!("negative volume {}", self.volume));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandleSeries {
    pub interval: Interval,
    pub candles: Vec<Candle>,
    /// `true` for candles inserted by [`fill_gaps`].
    pub synthetic: Vec<bool>,
}

impl CandleSeries {
    pub fn new(interval: Interval, candles: Vec<Candle>) -> Self {
        let synthetic = vec![false; candles.len()];
        CandleSeries {
            interval,
            candles,
            synthetic,
        }
    }

    pub fn len(&self) -> usize {
        self.candles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candles.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.candles.iter().map(|c| c.close).collect()
    }
}

fn parse_field<T: FromStr>(record: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T> {
    let raw = record.get(idx).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing column {name}"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {name} from '{raw}'"),
    })
}

/// Reads a Binance-layout k-line CSV: `open_time, open, high, low, close,
/// volume, close_time, ...`; trailing columns are ignored and a header row is
/// skipped when present.
pub fn load_klines(path: impl AsRef<Path>, interval: Interval) -> Result<CandleSeries> {
    let file = std::fs::File::open(path.as_ref())?;
    read_klines(file, interval)
}

pub fn read_klines<R: std::io::Read>(reader: R, interval: Interval) -> Result<CandleSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut candles = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if i == 0 && record.get(0).is_some_and(|f| f.trim().parse::<i64>().is_err()) {
            continue;
        }
        if record.len() < 7 {
            return Err(Error::Parse {
                line,
                message: format!("expected at least 7 columns, got {}", record.len()),
            });
        }
        let candle = Candle {
            open_time: parse_field(&record, 0, "open_time", line)?,
            open: parse_field(&record, 1, "open", line)?,
            high: parse_field(&record, 2, "high", line)?,
            low: parse_field(&record, 3, "low", line)?,
            close: parse_field(&record, 4, "close", line)?,
            volume: parse_field(&record, 5, "volume", line)?,
            close_time: parse_field(&record, 6, "close_time", line)?,
        };
        candle
            .validate()
            .map_err(|m| Error::Data(format!("line {line}: {m}")))?;
        candles.push(candle);
    }
    candles.sort_by_key(|c| c.open_time);
    if let Some(w) = candles.windows(2).find(|w| w[0].open_time == w[1].open_time) {
        return Err(Error::Data(format!("duplicate open_time {}", w[0].open_time)));
    }
    Ok(CandleSeries::new(interval, candles))
}

/// Writes candles in the same layout [`read_klines`] accepts (no header).
pub fn write_klines<W: std::io::Write>(writer: W, series: &CandleSeries) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for c in &series.candles {
        w.write_record([
            c.open_time.to_string(),
            format!("{:.16e}", c.open),
            format!("{:.16e}", c.high),
            format!("{:.16e}", c.low),
            format!("{:.16e}", c.close),
            format!("{:.16e}", c.volume),
            c.close_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    /// open_time of the first missing candle.
    pub start: i64,
    /// number of missing candles.
    pub length: usize,
}

/// Inserts a synthetic candle for every missing interval, copying the last
/// real candle's close into all four prices and keeping its volume.
///
/// Fails when two candles are not separated by a whole number of intervals,
/// since the series could not be made regular without moving real data.
pub fn fill_gaps(series: &CandleSeries) -> Result<(CandleSeries, Vec<Gap>)> {
    let step = series.interval.millis();
    let mut candles = Vec::with_capacity(series.len());
    let mut synthetic = Vec::with_capacity(series.len());
    let mut gaps = Vec::new();
    for (i, c) in series.candles.iter().enumerate() {
        if let Some(prev) = candles.last().copied() {
            let prev: Candle = prev;
            let diff = c.open_time - prev.open_time;
            if diff <= 0 || diff % step != 0 {
                return Err(Error::Data(format!(
                    "candle at {} is not aligned to the {} grid",
                    c.open_time, series.interval
                )));
            }
            let missing = (diff / step - 1) as usize;
            if missing > 0 {
                gaps.push(Gap {
                    start: prev.open_time + step,
                    length: missing,
                });
                for k in 1..=missing as i64 {
                    let open_time = prev.open_time + k * step;
                    candles.push(Candle {
                        open_time,
                        close_time: open_time + step - 1,
                        open: prev.close,
                        high: prev.close,
                        low: prev.close,
                        close: prev.close,
                        volume: prev.volume,
                    });
                    synthetic.push(true);
                }
            }
        }
        candles.push(*c);
        synthetic.push(series.synthetic.get(i).copied().unwrap_or(false));
    }
    Ok((
        CandleSeries {
            interval: series.interval,
            candles,
            synthetic,
        },
        gaps,
    ))
}

/// Per-interval returns `(close - open) / open`.
pub fn compute_returns(series: &CandleSeries) -> Result<Vec<f64>> {
    series
        .candles
        .iter()
        .map(|c| {
            if c.open <= 0.0 {
                Err(Error::Domain(format!(
                    "non-positive open price {} at {}",
                    c.open, c.open_time
                )))
            } else {
                Ok((c.close - c.open) / c.open)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn candle(open_time: i64, open: f64, close: f64) -> Candle {
        Candle {
            open_time,
            close_time: open_time + Interval::M5.millis() - 1,
            open,
            high: open.max(close) + 1.0,
            low: open.min(close) - 1.0,
            close,
            volume: 3.5,
        }
    }

    #[test]
    fn interval_parsing_and_counts() {
        assert_eq!("5m".parse::<Interval>().unwrap(), Interval::M5);
        assert_eq!("30min".parse::<Interval>().unwrap(), Interval::M30);
        assert_eq!(Interval::M5.per_year(), 105_120);
        assert_eq!(Interval::M15.per_year(), 35_040);
        assert_eq!(Interval::M30.per_year(), 17_520);
        assert_eq!(Interval::M5.per_hour(), 12);
        assert_eq!(Interval::M15.to_string(), "15m");
        assert!("5x".parse::<Interval>().is_err());
    }

    #[test]
    fn loads_three_rows() {
        let csv = "\
1566345600000,10000.0,10010.0,9990.0,10005.0,12.5,1566345899999,0,0,0,0,0
1566345900000,10005.0,10020.0,10000.0,10015.0,8.0,1566346199999,0,0,0,0,0
1566346200000,10015.0,10015.0,9980.0,9990.0,4.25,1566346499999,0,0,0,0,0
";
        let s = read_klines(csv.as_bytes(), Interval::M5).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.synthetic.iter().all(|&f| !f));
        assert_eq!(s.candles[2].close, 9990.0);
    }

    #[test]
    fn header_and_unsorted_rows() {
        let csv = "open_time,open,high,low,close,volume,close_time\n\
600000,2,2,2,2,1,899999\n\
300000,1,1,1,1,1,599999\n";
        let s = read_klines(csv.as_bytes(), Interval::M5).unwrap();
        assert_eq!(s.candles[0].open_time, 300000);
    }

    #[test]
    fn empty_file_is_empty_series() {
        let s = read_klines("".as_bytes(), Interval::M5).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn close_before_open_is_data_error() {
        let csv = "600000,2,2,2,2,1,600000\n";
        assert!(matches!(read_klines(csv.as_bytes(), Interval::M5), Err(Error::Data(_))));
    }

    #[test]
    fn malformed_row_names_line() {
        let csv = "300000,1,1,1,1,1,599999\n600000,x,1,1,1,1,899999\n";
        match read_klines(csv.as_bytes(), Interval::M5) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_timestamps_rejected() {
        let csv = "300000,1,1,1,1,1,599999\n300000,1,1,1,1,1,599999\n";
        assert!(matches!(read_klines(csv.as_bytes(), Interval::M5), Err(Error::Data(_))));
    }

    #[test]
    fn fills_one_missing_interval() {
        let step = Interval::M5.millis();
        let s = CandleSeries::new(Interval::M5, vec![candle(0, 10.0, 11.0), candle(2 * step, 11.0, 12.0)]);
        let (filled, gaps) = fill_gaps(&s).unwrap();
        assert_eq!(filled.len(), 3);
        assert_eq!(gaps, vec![Gap { start: step, length: 1 }]);
        let syn = filled.candles[1];
        assert!(filled.synthetic[1]);
        assert_eq!([syn.open, syn.high, syn.low, syn.close], [11.0; 4]);
        assert_eq!(syn.volume, 3.5);
        assert_eq!(compute_returns(&filled).unwrap()[1], 0.0);
    }

    #[test]
    fn gap_free_series_unchanged() {
        let step = Interval::M5.millis();
        let s = CandleSeries::new(
            Interval::M5,
            (0..5).map(|i| candle(i * step, 10.0, 10.5)).collect(),
        );
        let (filled, gaps) = fill_gaps(&s).unwrap();
        assert_eq!(filled, s);
        assert!(gaps.is_empty());
    }

    #[test]
    fn misaligned_candle_rejected() {
        let s = CandleSeries::new(Interval::M5, vec![candle(0, 1.0, 1.0), candle(7 * MS_PER_MINUTE, 1.0, 1.0)]);
        assert!(fill_gaps(&s).is_err());
    }

    #[test]
    fn returns_formula() {
        let s = CandleSeries::new(Interval::M5, vec![candle(0, 100.0, 110.0), candle(300000, 50.0, 50.0)]);
        let r = compute_returns(&s).unwrap();
        assert!((r[0] - 0.10).abs() < 1e-15);
        assert_eq!(r[1], 0.0);
    }

    #[test]
    fn zero_open_is_domain_error() {
        let mut c = candle(0, 1.0, 1.0);
        c.open = 0.0;
        c.low = 0.0;
        let s = CandleSeries::new(Interval::M5, vec![c]);
        assert!(matches!(compute_returns(&s), Err(Error::Domain(_))));
    }
}
