//! Fee-aware equity accounting and performance metrics.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{insufficient, Error, Result};
use crate::num::Real;
use crate::stats::normal_cdf;
use crate::strategies::{Position, PositionSeries};

/// Portfolio value path `E_0 = 1, ..., E_T` for a position series.
///
/// The position before the first interval is flat, and the book is closed
/// after the last one: the closing fee is folded into `E_T`.
pub fn equity_curve<T: Real>(returns: &[T], positions: &PositionSeries, fee: T) -> Result<Vec<T>> {
    if returns.len() != positions.len() {
        return Err(Error::Shape(format!(
            "{} returns for {} positions",
            returns.len(),
            positions.len()
        )));
    }
    if !(fee >= T::zero() && fee < T::one()) {
        return Err(Error::Parameter(format!("fee must be in [0, 1), got {fee}")));
    }
    let mut equity = Vec::with_capacity(returns.len() + 1);
    let mut e = T::one();
    let mut prev = T::zero();
    equity.push(e);
    for (&r, p) in returns.iter().zip(&positions.positions) {
        let p: T = p.as_real();
        e = e * (T::one() + r * p) * (T::one() - (p - prev).abs() * fee);
        equity.push(e);
        prev = p;
    }
    if let Some(last) = equity.last_mut() {
        *last = *last * (T::one() - prev.abs() * fee);
    }
    Ok(equity)
}

/// Per-interval net returns `E_t / E_{t-1} - 1`.
pub fn net_returns<T: Real>(equity: &[T]) -> Vec<T> {
    equity.windows(2).map(|w| w[1] / w[0] - T::one()).collect()
}

/// Annualised return `E_T^(Y/T) - 1`; a wiped-out portfolio reports -1.
pub fn arc<T: Real>(final_value: T, intervals: usize, per_year: usize) -> T {
    if final_value <= T::zero() {
        return -T::one();
    }
    let expo = T::from_count(per_year) / T::from_count(intervals.max(1));
    final_value.powf(expo) - T::one()
}

/// Annualised standard deviation `sqrt(Y/T * sum (r - mean)^2)`.
pub fn asd<T: Real>(net: &[T], per_year: usize) -> Result<T> {
    if net.len() < 2 {
        return Err(insufficient("annualised std", 2, net.len()));
    }
    let n = T::from_count(net.len());
    let mean = net.iter().copied().sum::<T>() / n;
    let ss = net.iter().map(|&r| (r - mean) * (r - mean)).sum::<T>();
    Ok((T::from_count(per_year) / n * ss).sqrt())
}

/// A ratio that falls back to 0 when its denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio<T> {
    pub value: T,
    /// Denominator was zero while the numerator was not.
    pub degenerate: bool,
}

pub fn ir_star<T: Real>(arc: T, asd: T) -> Ratio<T> {
    if asd == T::zero() {
        Ratio {
            value: T::zero(),
            degenerate: arc != T::zero(),
        }
    } else {
        Ratio {
            value: arc / asd,
            degenerate: false,
        }
    }
}

/// Largest peak-to-trough decline relative to the peak.
pub fn max_drawdown<T: Real>(equity: &[T]) -> T {
    let mut peak = T::neg_infinity();
    let mut md = T::zero();
    for &e in equity {
        if e > peak {
            peak = e;
        } else if peak > T::zero() {
            md = md.max((peak - e) / peak);
        }
    }
    md
}

/// `IR* * |ARC| / MD`.
pub fn ir_double_star<T: Real>(ir_star: T, arc: T, md: T) -> Ratio<T> {
    if md == T::zero() {
        Ratio {
            value: T::zero(),
            degenerate: arc != T::zero(),
        }
    } else {
        Ratio {
            value: ir_star * arc.abs() / md,
            degenerate: false,
        }
    }
}

/// Total absolute position change, including the opening move from flat and
/// the closing move back to flat.
pub fn n_trades(positions: &PositionSeries) -> usize {
    let mut prev = 0i8;
    let mut n = 0usize;
    for p in &positions.positions {
        n += (p.value() - prev).unsigned_abs() as usize;
        prev = p.value();
    }
    n + prev.unsigned_abs() as usize
}

/// Share of intervals long and short, in percent.
pub fn long_short_pct<T: Real>(positions: &PositionSeries) -> (T, T) {
    if positions.is_empty() {
        return (T::zero(), T::zero());
    }
    let n = T::from_count(positions.len());
    let long = positions.positions.iter().filter(|&&p| p == Position::Long).count();
    let short = positions.positions.iter().filter(|&&p| p == Position::Short).count();
    let hundred = T::lit(100.0);
    (T::from_count(long) / n * hundred, T::from_count(short) / n * hundred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport<T> {
    pub equity: Vec<T>,
    pub final_value: T,
    pub arc: T,
    pub asd: T,
    pub ir_star: T,
    pub md: T,
    pub ir_double_star: T,
    pub n_trades: usize,
    pub long_pct: T,
    pub short_pct: T,
    pub intervals_per_year: usize,
    pub ir_star_degenerate: bool,
    pub ir_double_star_degenerate: bool,
}

impl<T: Real> BacktestReport<T> {
    pub fn intervals(&self) -> usize {
        self.equity.len().saturating_sub(1)
    }

    pub fn net_returns(&self) -> Vec<T> {
        net_returns(&self.equity)
    }

    /// Builds every metric from an equity curve and the positions behind it.
    pub fn from_equity(equity: Vec<T>, positions: &PositionSeries, per_year: usize) -> Result<Self> {
        if equity.len() != positions.len() + 1 {
            return Err(Error::Shape(format!(
                "equity of length {} for {} positions",
                equity.len(),
                positions.len()
            )));
        }
        let t = positions.len();
        let final_value = *equity.last().expect("non-empty");
        let arc_v = arc(final_value, t, per_year);
        let asd_v = asd(&net_returns(&equity), per_year)?;
        let irs = ir_star(arc_v, asd_v);
        let md = max_drawdown(&equity);
        let irss = ir_double_star(irs.value, arc_v, md);
        let (long_pct, short_pct) = long_short_pct(positions);
        Ok(BacktestReport {
            final_value,
            arc: arc_v,
            asd: asd_v,
            ir_star: irs.value,
            md,
            ir_double_star: irss.value,
            n_trades: n_trades(positions),
            long_pct,
            short_pct,
            intervals_per_year: per_year,
            ir_star_degenerate: irs.degenerate,
            ir_double_star_degenerate: irss.degenerate,
            equity,
        })
    }

    /// Metric row in the order VAL, ARC, ASD, IR*, MD, IR**, N, LONG, SHORT.
    pub fn summary_row(&self) -> [f64; 9] {
        [
            self.final_value.as_f64(),
            self.arc.as_f64(),
            self.asd.as_f64(),
            self.ir_star.as_f64(),
            self.md.as_f64(),
            self.ir_double_star.as_f64(),
            self.n_trades as f64,
            self.long_pct.as_f64(),
            self.short_pct.as_f64(),
        ]
    }

    pub fn write_equity_csv<W: Write>(&self, timestamps: Option<&[i64]>, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "timestamp", "equity"])?;
        for (i, e) in self.equity.iter().enumerate() {
            let ts = match timestamps {
                Some(ts) if i > 0 => ts.get(i - 1).map(|t| t.to_string()).unwrap_or_default(),
                _ => String::new(),
            };
            w.write_record([i.to_string(), ts, format!("{:.16e}", e.as_f64())])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const SUMMARY_HEADER: [&str; 10] = ["Strategy", "VAL", "ARC", "ASD", "IR*", "MD", "IR**", "N", "LONG", "SHORT"];

/// One row per strategy, percentages as percent values.
pub fn write_summary_csv<T: Real, W: Write>(rows: &[(String, &BacktestReport<T>)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for (name, r) in rows {
        let v = r.summary_row();
        w.write_record([
            name.clone(),
            format!("{:.6}", v[0]),
            format!("{:.4}", v[1] * 100.0),
            format!("{:.4}", v[2] * 100.0),
            format!("{:.6}", v[3]),
            format!("{:.4}", v[4] * 100.0),
            format!("{:.6}", v[5]),
            format!("{}", r.n_trades),
            format!("{:.4}", v[7]),
            format!("{:.4}", v[8]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn backtest<T: Real>(returns: &[T], positions: &PositionSeries, fee: T, per_year: usize) -> Result<BacktestReport<T>> {
    let equity = equity_curve(returns, positions, fee)?;
    BacktestReport::from_equity(equity, positions, per_year)
}

/// Returns and positions of one test slice, located by its frame rows.
#[derive(Debug, Clone)]
pub struct Segment<'a, T> {
    pub rows: Range<usize>,
    pub returns: &'a [T],
    pub positions: &'a PositionSeries,
}

/// Chains per-window backtests into one report. Each window opens from flat
/// and is closed at its end, so the combined final value is the product of
/// the per-window final values.
pub fn concat_windows<T: Real>(segments: &[Segment<'_, T>], fee: T, per_year: usize) -> Result<BacktestReport<T>> {
    if segments.is_empty() {
        return Err(Error::Alignment("no windows to combine".into()));
    }
    for pair in segments.windows(2) {
        if pair[0].rows.end != pair[1].rows.start {
            return Err(Error::Alignment(format!(
                "window rows {:?} and {:?} are not contiguous",
                pair[0].rows, pair[1].rows
            )));
        }
    }
    let mut equity = vec![T::one()];
    let mut positions = Vec::new();
    for s in segments {
        if s.rows.len() != s.positions.len() {
            return Err(Error::Shape(format!(
                "segment {:?} has {} positions",
                s.rows,
                s.positions.len()
            )));
        }
        let part = equity_curve(s.returns, s.positions, fee)?;
        let base = *equity.last().expect("non-empty");
        equity.extend(part[1..].iter().map(|&e| base * e));
        positions.extend_from_slice(&s.positions.positions);
    }
    let combined = PositionSeries {
        positions,
        first_active: segments[0].positions.first_active,
    };
    let mut report = BacktestReport::from_equity(equity, &combined, per_year)?;
    // every window closes its book, so trades are counted per window
    report.n_trades = segments.iter().map(|s| n_trades(s.positions)).sum();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_value: f64,
    pub sigma: f64,
    pub n: usize,
    pub degenerate: bool,
}

/// t statistic for the IR* difference between a strategy and a benchmark,
/// with standard error `sigma / sqrt(N)` where `sigma` is the sample std of
/// the per-interval excess returns. One-sided normal p-value.
pub fn ir_t_test<T: Real>(strategy_net: &[T], benchmark_net: &[T], ir_strategy: T, ir_benchmark: T) -> Result<TTest> {
    if strategy_net.len() != benchmark_net.len() {
        return Err(Error::Shape(format!(
            "{} strategy returns vs {} benchmark returns",
            strategy_net.len(),
            benchmark_net.len()
        )));
    }
    let n = strategy_net.len();
    if n < 2 {
        return Err(insufficient("t-test", 2, n));
    }
    let excess: Vec<f64> = strategy_net
        .iter()
        .zip(benchmark_net)
        .map(|(s, b)| (*s - *b).as_f64())
        .collect();
    let mean = excess.iter().sum::<f64>() / n as f64;
    let sigma = (excess.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let diff = (ir_strategy - ir_benchmark).as_f64();
    Ok(t_from_sigma(diff, sigma, n))
}

/// The same statistic from summary numbers.
pub fn t_from_sigma(ir_diff: f64, sigma: f64, n: usize) -> TTest {
    if sigma == 0.0 {
        return TTest {
            t: 0.0,
            p_value: if ir_diff == 0.0 { 0.5 } else { f64::NAN },
            sigma,
            n,
            degenerate: ir_diff != 0.0,
        };
    }
    let t = ir_diff / (sigma / (n as f64).sqrt());
    TTest {
        t,
        p_value: normal_cdf(-t),
        sigma,
        n,
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use Position::{Flat as F, Long as L, Short as S};

    fn ps(v: &[Position]) -> PositionSeries {
        PositionSeries {
            positions: v.to_vec(),
            first_active: 0,
        }
    }

    fn pos_from(v: &[i8]) -> PositionSeries {
        ps(&v.iter().map(|&x| Position::try_from(x).unwrap()).collect::<Vec<_>>())
    }

    /// Closed-form product, without the running recursion.
    fn equity_product(r: &[f64], p: &[i8], fee: f64) -> f64 {
        let mut prod = 1.0;
        for t in 0..r.len() {
            let prev = if t == 0 { 0.0 } else { p[t - 1] as f64 };
            prod *= (1.0 + r[t] * p[t] as f64) * (1.0 - (p[t] as f64 - prev).abs() * fee);
        }
        prod * (1.0 - (*p.last().unwrap_or(&0) as f64).abs() * fee)
    }

    fn brute_md(e: &[f64]) -> f64 {
        let mut md = 0.0f64;
        for t in 0..e.len() {
            for tau in t + 1..e.len() {
                md = md.max((e[t] - e[tau]) / e[t]);
            }
        }
        md
    }

    #[test]
    fn flat_positions_keep_unit_equity() {
        let e = equity_curve(&[0.1, -0.2, 0.05], &ps(&[F, F, F]), 0.01).unwrap();
        assert_eq!(e, vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn single_long_interval_with_fees() {
        let e = equity_curve(&[0.1], &ps(&[L]), 0.001).unwrap();
        assert_relative_eq!(*e.last().unwrap(), 1.1 * 0.999 * 0.999, max_relative = 1e-15);
        assert_relative_eq!(*e.last().unwrap(), 1.097801, epsilon = 1e-6);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        assert!(matches!(equity_curve(&[0.1, 0.2], &ps(&[L]), 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn arc_examples() {
        assert_eq!(arc(1.0, 100, 100), 0.0);
        assert_relative_eq!(arc(2.0, 100, 100), 1.0);
        assert_relative_eq!(arc(1.21, 50, 100), 0.4641, epsilon = 1e-12);
    }

    #[test]
    fn arc_matches_reported_window_values() {
        // 30-minute rows: one 6-month test window and the full 36-month test period
        assert_relative_eq!(arc(0.924, 8640, 17520), -0.1484, epsilon = 5e-4);
        assert_relative_eq!(arc(1.440, 51840, 17520), 0.1312, epsilon = 5e-4);
        let irs = ir_star(0.1312, 0.5595).value;
        assert_relative_eq!(irs, 0.235, epsilon = 1e-3);
        assert_relative_eq!(ir_double_star(irs, 0.1312, 0.7720).value, 0.040, epsilon = 5e-4);
    }

    #[test]
    fn asd_examples() {
        assert!(asd(&[0.01; 10], 100).unwrap() < 1e-15);
        let x = 0.003;
        let alt: Vec<f64> = (0..10_000).map(|i| if i % 2 == 0 { x } else { -x }).collect();
        let y = 105_120;
        assert_relative_eq!(asd(&alt, y).unwrap(), (y as f64).sqrt() * x, max_relative = 0.01);
        assert!(asd(&[0.1], 10).is_err());
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(ir_star(0.5, 0.25).value, 2.0);
        assert_eq!(ir_star(0.0, 0.3).value, 0.0);
        assert_eq!(ir_star(-0.1, 0.2).value, -0.5);
        assert!(ir_star(0.1, 0.0).degenerate);
        assert!(!ir_star(0.0, 0.0).degenerate);
        assert_eq!(ir_double_star(2.0, 0.5, 0.25).value, 4.0);
        assert_relative_eq!(ir_double_star(-0.5, -0.1, 0.2).value, -0.25);
        assert_eq!(ir_double_star(0.0, 0.0, 0.0).value, 0.0);
    }

    #[test]
    fn drawdown_examples() {
        assert_eq!(max_drawdown(&[1.0, 1.1, 1.2]), 0.0);
        assert_eq!(max_drawdown(&[1.0, 0.5, 0.75]), 0.5);
        assert_relative_eq!(max_drawdown(&[1.0, 1.2, 0.6, 0.9]), 0.5);
    }

    #[test]
    fn trade_counts() {
        assert_eq!(n_trades(&pos_from(&[0, 1, 1, -1, 0])), 4);
        assert_eq!(n_trades(&pos_from(&[1; 10])), 2);
        assert_eq!(n_trades(&pos_from(&[0; 10])), 0);
    }

    #[test]
    fn exposure_shares() {
        assert_eq!(long_short_pct::<f64>(&pos_from(&[1, 1, 0, -1])), (50.0, 25.0));
        assert_eq!(long_short_pct::<f64>(&pos_from(&[1, 1])), (100.0, 0.0));
        assert_eq!(long_short_pct::<f64>(&pos_from(&[0, 0])), (0.0, 0.0));
    }

    #[test]
    fn no_trade_report_is_zero() {
        let r = backtest(&[0.01, -0.02, 0.03], &pos_from(&[0, 0, 0]), 0.001, 17520).unwrap();
        assert_eq!(r.final_value, 1.0);
        assert_eq!(r.ir_double_star, 0.0);
        assert!(!r.ir_double_star_degenerate);
        assert_eq!(r.n_trades, 0);
    }

    #[test]
    fn concat_single_window_is_identity() {
        let r = [0.01, -0.02, 0.03, 0.004];
        let p = pos_from(&[1, 0, -1, -1]);
        let one = backtest(&r, &p, 0.001, 17520).unwrap();
        let seg = Segment {
            rows: 10..14,
            returns: &r[..],
            positions: &p,
        };
        assert_eq!(concat_windows(&[seg], 0.001, 17520).unwrap(), one);
    }

    #[test]
    fn concat_multiplies_final_values() {
        let r1 = [0.01, -0.02, 0.03];
        let r2 = [-0.01, 0.02, 0.005, 0.007];
        let p1 = pos_from(&[1, 1, -1]);
        let p2 = pos_from(&[0, -1, 1, 1]);
        let v1 = backtest(&r1, &p1, 0.002, 100).unwrap().final_value;
        let v2 = backtest(&r2, &p2, 0.002, 100).unwrap().final_value;
        let segs = [
            Segment { rows: 0..3, returns: &r1[..], positions: &p1 },
            Segment { rows: 3..7, returns: &r2[..], positions: &p2 },
        ];
        let c = concat_windows(&segs, 0.002, 100).unwrap();
        assert_relative_eq!(c.final_value, v1 * v2, max_relative = 1e-14);
        assert_relative_eq!(c.arc, arc(v1 * v2, 7, 100), max_relative = 1e-12);
        let flat = pos_from(&[0, 0, 0]);
        let flat2 = pos_from(&[0, 0, 0, 0]);
        let flat_segs = [
            Segment { rows: 0..3, returns: &r1[..], positions: &flat },
            Segment { rows: 3..7, returns: &r2[..], positions: &flat2 },
        ];
        assert_eq!(concat_windows(&flat_segs, 0.002, 100).unwrap().final_value, 1.0);
    }

    #[test]
    fn concat_rejects_gaps() {
        let r = [0.0, 0.0];
        let p = pos_from(&[0, 0]);
        let segs = [
            Segment { rows: 0..2, returns: &r[..], positions: &p },
            Segment { rows: 3..5, returns: &r[..], positions: &p },
        ];
        assert!(matches!(concat_windows(&segs, 0.0, 10), Err(Error::Alignment(_))));
    }

    #[test]
    fn t_test_examples() {
        let a = [0.01, -0.02, 0.03];
        assert_eq!(ir_t_test(&a, &a, 0.3, 0.3).unwrap().t, 0.0);
        assert_relative_eq!(t_from_sigma(0.5, 1.0, 100).t, 5.0);
        let reported = t_from_sigma(0.485 - 0.235, 0.326504, 51840);
        assert_relative_eq!(reported.t, 174.34, epsilon = 0.01);
        assert!(reported.p_value < 1e-6);
    }

    #[test]
    fn f32_backtest() {
        let r = backtest(&[0.01f32, 0.02, -0.01], &pos_from(&[1, 1, 1]), 0.0, 100).unwrap();
        assert_relative_eq!(r.final_value, 1.01 * 1.02 * 0.99, max_relative = 1e-6);
    }

    fn returns_and_positions() -> impl Strategy<Value = (Vec<f64>, Vec<i8>)> {
        (1usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec(-0.05f64..0.05, n),
                proptest::collection::vec(-1i8..=1, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn recursion_matches_product((r, p) in returns_and_positions(), fee in 0.0f64..0.01) {
            let e = equity_curve(&r, &pos_from(&p), fee).unwrap();
            let want = equity_product(&r, &p, fee);
            prop_assert!((e.last().unwrap() - want).abs() <= 1e-12 * want.abs());
        }
    }

    proptest! {
        #[test]
        fn fee_free_buy_and_hold_is_product(r in proptest::collection::vec(-0.05f64..0.05, 1..300)) {
            let p = PositionSeries { positions: vec![L; r.len()], first_active: 0 };
            let e = equity_curve(&r, &p, 0.0).unwrap();
            let mut prod = 1.0;
            for x in &r { prod *= 1.0 + x; }
            prop_assert_eq!(*e.last().unwrap(), prod);
        }

        #[test]
        fn drawdown_matches_brute_force(e in proptest::collection::vec(0.01f64..10.0, 0..200)) {
            prop_assert!((max_drawdown(&e) - brute_md(&e)).abs() < 1e-12);
        }

        #[test]
        fn asd_matches_two_pass(r in proptest::collection::vec(-0.1f64..0.1, 2..300)) {
            let n = r.len() as f64;
            let m = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
            let want = (1000.0 / n * var).sqrt();
            let got = asd(&r, 1000).unwrap();
            prop_assert!((got - want).abs() <= 1e-12 * want.max(1e-300));
        }

        #[test]
        fn trades_bound_runs(p in proptest::collection::vec(-1i8..=1, 0..100)) {
            let mut runs = 0;
            let mut prev = 0;
            let mut flips = false;
            for &x in &p {
                if x != 0 && prev == 0 { runs += 1; }
                if x != 0 && prev != 0 && x != prev { flips = true; }
                prev = x;
            }
            let n = n_trades(&pos_from(&p));
            prop_assert!(n >= 2 * runs);
            if !flips { prop_assert_eq!(n, 2 * runs); }
        }

        #[test]
        fn never_trading_keeps_unit_value(r in proptest::collection::vec(-0.05f64..0.05, 2..100), fee in 0.0f64..0.1) {
            let p = PositionSeries { positions: vec![Position::Flat; r.len()], first_active: r.len() };
            prop_assert_eq!(backtest(&r, &p, fee, 100).unwrap().final_value, 1.0);
        }

        #[test]
        fn net_returns_reproduce_equity((r, p) in returns_and_positions(), fee in 0.0f64..0.01) {
            let e = equity_curve(&r, &pos_from(&p), fee).unwrap();
            let net = net_returns(&e);
            for (t, x) in net.iter().enumerate() {
                prop_assert!(((1.0 + x) * e[t] - e[t + 1]).abs() <= 1e-14 * e[t + 1].abs().max(1.0));
            }
        }
    }

    #[test]
    fn short_only_exposure() {
        let r = backtest(&[0.01, -0.01], &ps(&[S, S]), 0.0, 10).unwrap();
        assert_eq!(r.short_pct, 100.0);
        assert_eq!(r.n_trades, 2);
    }
}
