use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Daily,
    Monthly,
}

/// Low-frequency series joined onto candles by last known value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousSeries {
    pub name: String,
    pub frequency: Frequency,
    /// For monthly series the date is the first day of the month.
    pub points: Vec<(NaiveDate, f64)>,
}

impl ExogenousSeries {
    pub fn new(name: impl Into<String>, frequency: Frequency, points: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let name = name.into();
        if let Some(w) = points.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::Data(format!(
                "{name}: dates not strictly increasing at {}",
                w[1].0
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.1.is_finite()) {
            return Err(Error::Data(format!("{name}: non-finite value at {}", p.0)));
        }
        let points = match frequency {
            Frequency::Daily => points,
            Frequency::Monthly => points
                .into_iter()
                .map(|(d, v)| (d.with_day(1).expect("day 1 exists"), v))
                .collect(),
        };
        Ok(ExogenousSeries {
            name,
            frequency,
            points,
        })
    }
}

fn parse_date(raw: &str, line: usize) -> Result<NaiveDate> {
    let raw = raw.trim();
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(&format!("{raw}-01"), "%Y-%m-%d"))
        .map_err(|_| Error::Parse {
            line,
            message: format!("bad date '{raw}'"),
        })
}

/// Reads `date,value` rows (`YYYY-MM-DD` or `YYYY-MM`), skipping a header.
/// Unsorted input is sorted; repeated dates are rejected.
pub fn load_exogenous(path: impl AsRef<Path>, name: &str, frequency: Frequency) -> Result<ExogenousSeries> {
    read_exogenous(std::fs::File::open(path.as_ref())?, name, frequency)
}

pub fn read_exogenous<R: std::io::Read>(reader: R, name: &str, frequency: Frequency) -> Result<ExogenousSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let (Some(d), Some(v)) = (rec.get(0), rec.get(1)) else {
            if rec.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            return Err(Error::Parse {
                line,
                message: "expected date,value".into(),
            });
        };
        if i == 0 && parse_date(d, line).is_err() {
            continue;
        }
        let date = parse_date(d, line)?;
        let value: f64 = v.trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad value '{v}'"),
        })?;
        points.push((date, value));
    }
    points.sort_by_key(|p| p.0);
    ExogenousSeries::new(name, frequency, points)
}

fn row_key(open_time: i64, frequency: Frequency) -> Result<NaiveDate> {
    let day = DateTime::from_timestamp_millis(open_time)
        .ok_or_else(|| Error::Data(format!("timestamp {open_time} out of range")))?
        .date_naive();
    Ok(match frequency {
        Frequency::Daily => day,
        Frequency::Monthly => day.with_day(1).expect("day 1 exists"),
    })
}

/// Last value dated strictly before each row's day (or month); `None` where
/// the series has no earlier point.
pub fn align_exogenous_partial(open_times: &[i64], exo: &ExogenousSeries) -> Result<Vec<Option<f64>>> {
    let mut out = Vec::with_capacity(open_times.len());
    for &t in open_times {
        let key = row_key(t, exo.frequency)?;
        let idx = exo.points.partition_point(|p| p.0 < key);
        out.push(idx.checked_sub(1).map(|i| exo.points[i].1));
    }
    Ok(out)
}

/// Assigns every row the most recent value from a strictly earlier calendar
/// day (daily series) or month (monthly series).
pub fn align_exogenous(open_times: &[i64], exo: &ExogenousSeries) -> Result<Vec<f64>> {
    align_exogenous_partial(open_times, exo)?
        .into_iter()
        .zip(open_times)
        .map(|(v, &t)| {
            v.ok_or_else(|| {
                Error::Coverage(format!("{} has no value before row at {t}", exo.name))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDateTime, TimeZone, Utc};
    use proptest::prelude::*;

    fn ms(s: &str) -> i64 {
        let dt = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").unwrap();
        Utc.from_utc_datetime(&dt).timestamp_millis()
    }

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn daily_uses_previous_day() {
        let vix = ExogenousSeries::new(
            "vix",
            Frequency::Daily,
            vec![(d("2022-08-15"), 19.0), (d("2022-08-16"), 19.5), (d("2022-08-17"), 20.0)],
        )
        .unwrap();
        let v = align_exogenous(&[ms("2022-08-17 04:05:00")], &vix).unwrap();
        assert_eq!(v, vec![19.5]);
    }

    #[test]
    fn daily_carries_over_missing_days() {
        let vix = ExogenousSeries::new("vix", Frequency::Daily, vec![(d("2022-08-12"), 21.0)]).unwrap();
        let v = align_exogenous(&[ms("2022-08-15 00:00:00")], &vix).unwrap();
        assert_eq!(v, vec![21.0]);
    }

    #[test]
    fn monthly_uses_previous_month() {
        let csv = "date,value\n2022-06,1.21\n2022-07,1.68\n2022-08,2.33\n";
        let fed = read_exogenous(csv.as_bytes(), "fed_rates", Frequency::Monthly).unwrap();
        let v = align_exogenous(&[ms("2022-08-17 04:05:00"), ms("2022-08-01 00:00:00")], &fed).unwrap();
        assert_eq!(v, vec![1.68, 1.68]);
    }

    #[test]
    fn row_before_first_point_is_coverage_error() {
        let vix = ExogenousSeries::new("vix", Frequency::Daily, vec![(d("2022-08-16"), 19.5)]).unwrap();
        assert!(matches!(
            align_exogenous(&[ms("2022-08-16 12:00:00")], &vix),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn rejects_repeated_dates() {
        let csv = "2022-08-16,1\n2022-08-16,2\n";
        assert!(read_exogenous(csv.as_bytes(), "x", Frequency::Daily).is_err());
    }

    proptest! {
        #[test]
        fn never_uses_same_or_later_day(
            offsets in proptest::collection::btree_set(0i64..400, 1..40),
            row_minutes in proptest::collection::vec(0i64..400 * 1440, 1..50),
        ) {
            let base = d("2020-01-01");
            let points: Vec<_> = offsets
                .iter()
                .map(|&o| (base + chrono::Duration::days(o), o as f64))
                .collect();
            let exo = ExogenousSeries::new("x", Frequency::Daily, points).unwrap();
            let t0 = ms("2020-01-01 00:00:00");
            let times: Vec<i64> = row_minutes.iter().map(|m| t0 + m * 60_000).collect();
            for (v, m) in align_exogenous_partial(&times, &exo).unwrap().into_iter().zip(&row_minutes) {
                let row_day = m / 1440;
                match v {
                    Some(day) => {
                        prop_assert!((day as i64) < row_day);
                        // no point strictly between the chosen one and the row day
                        prop_assert!(!offsets.iter().any(|&o| o > day as i64 && o < row_day));
                    }
                    None => prop_assert!(offsets.iter().all(|&o| o >= row_day)),
                }
            }
        }
    }
}
