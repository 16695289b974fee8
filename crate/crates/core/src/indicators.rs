//! Technical indicators: EMA, SMMA, MACD, RSI and Bollinger bands.
//!
//! Every indicator is causal: the value at index `t` only reads inputs at
//! indices `<= t`. Entries before `defined_from` are `NaN`.

use serde::{Deserialize, Serialize};

use crate::error::{insufficient, Error, Result};
use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries<T> {
    pub values: Vec<T>,
    pub defined_from: usize,
}

impl<T: Real> IndicatorSeries<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at `t`, or `None` while the indicator is still warming up.
    pub fn get(&self, t: usize) -> Option<T> {
        if t >= self.defined_from && t < self.values.len() {
            Some(self.values[t])
        } else {
            None
        }
    }

    /// Signal seen by a strategy deciding position `t`: the indicator at `t - 1`.
    pub fn lagged(&self) -> Vec<Option<T>> {
        (0..self.values.len())
            .map(|t| if t == 0 { None } else { self.get(t - 1) })
            .collect()
    }
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::Parameter("window must be at least 1".into()));
    }
    Ok(())
}

/// Exponential moving average with `alpha = 2 / (window + 1)`, seeded with `x[0]`.
pub fn ema<T: Real>(x: &[T], window: usize) -> Result<IndicatorSeries<T>> {
    check_window(window)?;
    let alpha = T::lit(2.0) / (T::from_count(window) + T::one());
    let mut values = Vec::with_capacity(x.len());
    let mut acc = match x.first() {
        Some(&v) => v,
        None => {
            return Ok(IndicatorSeries {
                values,
                defined_from: 0,
            })
        }
    };
    values.push(acc);
    for &v in &x[1..] {
        acc += alpha * (v - acc);
        values.push(acc);
    }
    Ok(IndicatorSeries {
        values,
        defined_from: 0,
    })
}

/// Smoothed (Wilder) moving average seeded with the simple mean of the first
/// `window` values.
pub fn smma<T: Real>(x: &[T], window: usize) -> Result<IndicatorSeries<T>> {
    check_window(window)?;
    if x.len() < window {
        return Err(insufficient("smma", window, x.len()));
    }
    let w = T::from_count(window);
    let mut values = vec![T::nan(); x.len()];
    let mut acc = x[..window].iter().copied().sum::<T>() / w;
    values[window - 1] = acc;
    for t in window..x.len() {
        acc = (acc * (w - T::one()) + x[t]) / w;
        values[t] = acc;
    }
    Ok(IndicatorSeries {
        values,
        defined_from: window - 1,
    })
}

/// Simple moving average over a trailing window.
pub fn sma<T: Real>(x: &[T], window: usize) -> Result<IndicatorSeries<T>> {
    check_window(window)?;
    if x.len() < window {
        return Err(insufficient("sma", window, x.len()));
    }
    let w = T::from_count(window);
    let mut values = vec![T::nan(); x.len()];
    for t in window - 1..x.len() {
        values[t] = x[t + 1 - window..=t].iter().copied().sum::<T>() / w;
    }
    Ok(IndicatorSeries {
        values,
        defined_from: window - 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Macd<T> {
    pub line: IndicatorSeries<T>,
    pub signal: IndicatorSeries<T>,
}

/// MACD line (`ema_fast - ema_slow`) and its signal EMA. Requires `fast < slow`.
pub fn macd<T: Real>(close: &[T], fast: usize, slow: usize, signal: usize) -> Result<Macd<T>> {
    if fast >= slow {
        return Err(Error::Parameter(format!(
            "macd requires fast < slow, got fast={fast} slow={slow}"
        )));
    }
    let fast_ema = ema(close, fast)?;
    let slow_ema = ema(close, slow)?;
    let line: Vec<T> = fast_ema
        .values
        .iter()
        .zip(&slow_ema.values)
        .map(|(&f, &s)| f - s)
        .collect();
    let signal = ema(&line, signal)?;
    Ok(Macd {
        line: IndicatorSeries {
            values: line,
            defined_from: 0,
        },
        signal,
    })
}

/// Relative strength index in Wilder form, `100 - 100 / (1 + RS)`.
///
/// Defined from index `window`. When the down-average is zero the value is
/// 100, when the up-average is zero it is 0, and 50 when both are zero.
pub fn rsi<T: Real>(close: &[T], window: usize) -> Result<IndicatorSeries<T>> {
    check_window(window)?;
    if close.len() <= window {
        return Err(insufficient("rsi", window + 1, close.len()));
    }
    let (up, down): (Vec<T>, Vec<T>) = close
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            (d.max(T::zero()), (-d).max(T::zero()))
        })
        .unzip();
    let up = smma(&up, window)?;
    let down = smma(&down, window)?;
    let hundred = T::lit(100.0);
    let mut values = vec![T::nan(); close.len()];
    for i in up.defined_from..up.values.len() {
        let (u, d) = (up.values[i], down.values[i]);
        values[i + 1] = if d == T::zero() && u == T::zero() {
            T::lit(50.0)
        } else if d == T::zero() {
            hundred
        } else if u == T::zero() {
            T::zero()
        } else {
            hundred - hundred / (T::one() + u / d)
        };
    }
    Ok(IndicatorSeries {
        values,
        defined_from: window,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bollinger<T> {
    pub lower: IndicatorSeries<T>,
    pub mid: IndicatorSeries<T>,
    pub upper: IndicatorSeries<T>,
}

/// Bollinger bands: SMA mid line and `mid ± k · σ` with the population
/// standard deviation of the trailing window.
pub fn bollinger<T: Real>(close: &[T], window: usize, k: T) -> Result<Bollinger<T>> {
    let mid = sma(close, window)?;
    let w = T::from_count(window);
    let mut lower = vec![T::nan(); close.len()];
    let mut upper = vec![T::nan(); close.len()];
    for t in mid.defined_from..close.len() {
        let m = mid.values[t];
        let var = close[t + 1 - window..=t]
            .iter()
            .map(|&x| (x - m) * (x - m))
            .sum::<T>()
            / w;
        let band = k * var.sqrt();
        lower[t] = m - band;
        upper[t] = m + band;
    }
    let defined_from = mid.defined_from;
    Ok(Bollinger {
        lower: IndicatorSeries {
            values: lower,
            defined_from,
        },
        mid,
        upper: IndicatorSeries {
            values: upper,
            defined_from,
        },
    })
}

/// Trailing sample standard deviation (n - 1) over `window` values.
pub fn rolling_std<T: Real>(x: &[T], window: usize) -> Result<IndicatorSeries<T>> {
    if window < 2 {
        return Err(Error::Parameter("rolling std needs window >= 2".into()));
    }
    if x.len() < window {
        return Err(insufficient("rolling std", window, x.len()));
    }
    let w = T::from_count(window);
    let mut values = vec![T::nan(); x.len()];
    for t in window - 1..x.len() {
        let slice = &x[t + 1 - window..=t];
        let m = slice.iter().copied().sum::<T>() / w;
        let ss = slice.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        values[t] = (ss / (w - T::one())).sqrt();
    }
    Ok(IndicatorSeries {
        values,
        defined_from: window - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_walk(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = 100.0;
        (0..n)
            .map(|_| {
                p *= 1.0 + rng.gen_range(-0.01..0.01);
                p
            })
            .collect()
    }

    #[test]
    fn ema_hand_recursion() {
        let e = ema(&[1.0, 2.0, 3.0], 2).unwrap();
        assert_relative_eq!(e.values[0], 1.0);
        assert_relative_eq!(e.values[1], 5.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(e.values[2], 23.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn ema_window_one_is_identity() {
        let x = random_walk(50, 1);
        assert_eq!(ema(&x, 1).unwrap().values, x);
    }

    #[test]
    fn ema_empty_input() {
        assert!(ema::<f64>(&[], 5).unwrap().is_empty());
    }

    #[test]
    fn constant_series_fixed_points() {
        let x = vec![7.25; 40];
        assert!(ema(&x, 9).unwrap().values.iter().all(|&v| v == 7.25));
        let s = smma(&x, 14).unwrap();
        assert!(s.values[13..].iter().all(|&v| v == 7.25));
        let m = macd(&x, 12, 26, 9).unwrap();
        assert!(m.line.values.iter().all(|&v| v == 0.0));
        assert!(m.signal.values.iter().all(|&v| v == 0.0));
        let b = bollinger(&x, 20, 2.0).unwrap();
        for t in 19..40 {
            assert_eq!(b.lower.values[t], 7.25);
            assert_eq!(b.mid.values[t], 7.25);
            assert_eq!(b.upper.values[t], 7.25);
        }
    }

    #[test]
    fn smma_window_equals_length_gives_mean() {
        let x = [1.0, 2.0, 6.0];
        let s = smma(&x, 3).unwrap();
        assert_eq!(s.defined_from, 2);
        assert_relative_eq!(s.values[2], 3.0);
    }

    #[test]
    fn smma_too_short() {
        assert!(matches!(
            smma(&[1.0, 2.0], 3),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn smma_matches_direct_recursion() {
        let x = random_walk(300, 2);
        for window in [1usize, 2, 5, 14, 33] {
            let s = smma(&x, window).unwrap();
            // independent: rebuild each value from the definition s_t = mean_{t-w+1..t} seed
            let mut expected = x[..window].iter().sum::<f64>() / window as f64;
            for t in window - 1..x.len() {
                if t >= window {
                    expected = expected + (x[t] - expected) / window as f64;
                }
                assert_relative_eq!(s.values[t], expected, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn macd_rejects_fast_not_below_slow() {
        let x = random_walk(50, 3);
        assert!(matches!(macd(&x, 26, 26, 9), Err(Error::Parameter(_))));
        assert!(matches!(macd(&x, 30, 26, 9), Err(Error::Parameter(_))));
    }

    #[test]
    fn macd_positive_on_linear_ramp() {
        let x: Vec<f64> = (0..500).map(|i| 100.0 + i as f64).collect();
        let m = macd(&x, 12, 26, 9).unwrap();
        // EMA lag on a unit ramp tends to (1 - a) / a = (w - 1) / 2, so the line tends to 7.
        assert!(m.line.values[100..].iter().all(|&v| v > 0.0));
        assert_relative_eq!(m.line.values[499], 7.0, epsilon = 1e-6);
    }

    #[test]
    fn macd_boundary_fast_just_below_slow_is_finite() {
        let x = random_walk(200, 4);
        let m = macd(&x, 25, 26, 9).unwrap();
        assert!(m.line.values.iter().chain(&m.signal.values).all(|v| v.is_finite()));
    }

    #[test]
    fn rsi_monotone_extremes() {
        let rising: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let r = rsi(&rising, 14).unwrap();
        assert!(r.values[14..].iter().all(|&v| v == 100.0));
        let falling: Vec<f64> = rising.iter().rev().copied().collect();
        let r = rsi(&falling, 14).unwrap();
        assert!(r.values[14..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rsi_flat_prices_is_fifty() {
        let r = rsi(&[3.0; 20], 5).unwrap();
        assert!(r.values[5..].iter().all(|&v| v == 50.0));
    }

    #[test]
    fn rsi_alternating_moves_centre_on_fifty() {
        // +1, -1, +1, ... moves: the seed averages agree for even windows, and
        // afterwards the Wilder recursion oscillates symmetrically around 50.
        // The limit cycle is 100·w/(2w-1) and 100·(w-1)/(2w-1).
        let close: Vec<f64> = (0..2000).map(|i| if i % 2 == 0 { 10.0 } else { 11.0 }).collect();
        for window in [2usize, 14, 30] {
            let r = rsi(&close, window).unwrap();
            assert_relative_eq!(r.values[window], 50.0, epsilon = 1e-12);
            for t in window..close.len() {
                assert!((r.values[t] - 50.0).abs() <= 50.0 / window as f64 + 1e-9);
            }
            let n = close.len();
            let pair_mean = 0.5 * (r.values[n - 2] + r.values[n - 1]);
            assert_relative_eq!(pair_mean, 50.0, epsilon = 1e-9);
            let w = window as f64;
            let hi = r.values[n - 2].max(r.values[n - 1]);
            assert_relative_eq!(hi, 100.0 * w / (2.0 * w - 1.0), epsilon = 1e-9);
        }
    }

    #[test]
    fn rsi_too_short() {
        assert!(rsi(&[1.0; 14], 14).is_err());
    }

    #[test]
    fn bollinger_zero_width_collapses() {
        let x = random_walk(60, 5);
        let b = bollinger(&x, 20, 0.0).unwrap();
        for t in 19..60 {
            assert_eq!(b.lower.values[t], b.mid.values[t]);
            assert_eq!(b.upper.values[t], b.mid.values[t]);
        }
    }

    #[test]
    fn bollinger_matches_recomputation() {
        let x = random_walk(120, 6);
        let b = bollinger(&x, 20, 2.0).unwrap();
        for t in 19..x.len() {
            let w = &x[t - 19..=t];
            let m = w.iter().sum::<f64>() / 20.0;
            let sd = (w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 20.0).sqrt();
            assert_relative_eq!(b.mid.values[t], m, max_relative = 1e-12);
            assert_relative_eq!(b.upper.values[t], m + 2.0 * sd, max_relative = 1e-12);
            assert_relative_eq!(b.lower.values[t], m - 2.0 * sd, max_relative = 1e-12);
        }
    }

    #[test]
    fn generic_over_f32() {
        let x: Vec<f32> = vec![1.0, 2.0, 3.0];
        let e = ema(&x, 2).unwrap();
        assert!((e.values[2] - 23.0 / 9.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn rsi_bounded(seed in 0u64..1000, window in 1usize..30) {
            let x = random_walk(200, seed);
            let r = rsi(&x, window).unwrap();
            for &v in &r.values[window..] {
                prop_assert!((0.0..=100.0).contains(&v));
            }
        }

        #[test]
        fn indicators_are_causal(seed in 0u64..1000, cut in 40usize..150) {
            let x = random_walk(150, seed);
            let prefix = &x[..cut];
            prop_assert_eq!(&ema(&x, 9).unwrap().values[..cut], &ema(prefix, 9).unwrap().values[..]);
            let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| p == q || (p.is_nan() && q.is_nan()));
            prop_assert!(same(&smma(&x, 14).unwrap().values[..cut], &smma(prefix, 14).unwrap().values));
            prop_assert!(same(&rsi(&x, 14).unwrap().values[..cut], &rsi(prefix, 14).unwrap().values));
            let (full, part) = (macd(&x, 12, 26, 9).unwrap(), macd(prefix, 12, 26, 9).unwrap());
            prop_assert!(same(&full.signal.values[..cut], &part.signal.values));
            let (full, part) = (bollinger(&x, 20, 2.0).unwrap(), bollinger(prefix, 20, 2.0).unwrap());
            prop_assert!(same(&full.upper.values[..cut], &part.upper.values));
        }
    }
}
