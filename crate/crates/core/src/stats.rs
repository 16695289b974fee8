//! Distributional diagnostics for return series: descriptive statistics,
//! a one-sample Kolmogorov-Smirnov normality test and the 1-D Wasserstein
//! distance.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{insufficient, Error, Result};
use crate::num::Real;

/// Summary of a return series. Higher moments are `None` when the sample has
/// no dispersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
    /// Bias-corrected excess kurtosis (normal → 0).
    pub kurtosis: Option<f64>,
    /// Bias-corrected sample skewness.
    pub skewness: Option<f64>,
    pub ks_statistic: Option<f64>,
    pub ks_p_value: Option<f64>,
}

impl DescriptiveStats {
    /// Row labels and values in table order.
    pub fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("count", Some(self.count as f64)),
            ("mean", Some(self.mean)),
            ("std", Some(self.std)),
            ("min", Some(self.min)),
            ("25% percentile", Some(self.p25)),
            ("50% percentile", Some(self.p50)),
            ("75% percentile", Some(self.p75)),
            ("max", Some(self.max)),
            ("kurtosis", self.kurtosis),
            ("skewness", self.skewness),
            ("KS test stat.", self.ks_statistic),
            ("KS test p-value", self.ks_p_value),
        ]
    }
}

fn to_f64<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Percentile of sorted data with linear interpolation between closest ranks.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn descriptive_stats<T: Real>(returns: &[T]) -> Result<DescriptiveStats> {
    let n = returns.len();
    if n < 2 {
        return Err(insufficient("descriptive statistics", 2, n));
    }
    let xs = to_f64(returns);
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in &xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let std = (m2 / (nf - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let skewness = (m2 > 0.0 && n > 2).then(|| {
        let g1 = m3 / m2.powf(1.5);
        (nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1
    });
    let kurtosis = (m2 > 0.0 && n > 3).then(|| {
        let g2 = m4 / (m2 * m2) - 3.0;
        ((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0))
    });
    let s = sorted(&xs);
    let ks = ks_normal_test(returns).ok();
    Ok(DescriptiveStats {
        count: n,
        mean,
        std,
        min: s[0],
        p25: percentile_sorted(&s, 0.25),
        p50: percentile_sorted(&s, 0.50),
        p75: percentile_sorted(&s, 0.75),
        max: s[n - 1],
        kurtosis,
        skewness,
        ks_statistic: ks.map(|k| k.statistic),
        ks_p_value: ks.map(|k| k.p_value),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`,
/// from its alternating series truncated at 100 terms.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    // Below 0.2 the truncated series has not converged; the survival is 1 to ~1e-10 there.
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        if k % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test against a normal with the sample mean and standard
/// deviation. The p-value uses the asymptotic Kolmogorov distribution.
pub fn ks_normal_test<T: Real>(returns: &[T]) -> Result<KsResult> {
    let n = returns.len();
    if n < 2 {
        return Err(insufficient("ks test", 2, n));
    }
    let xs = to_f64(returns);
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if std == 0.0 || !std.is_finite() {
        return Err(Error::Domain("ks test needs positive variance".into()));
    }
    let s = sorted(&xs);
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = normal_cdf((x - mean) / std);
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(nf.sqrt() * d),
    })
}

/// First-order Wasserstein distance between two empirical distributions:
/// the integral of `|F_a(x) - F_b(x)|` over the real line.
pub fn wasserstein_1d<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("wasserstein distance needs non-empty samples".into()));
    }
    let sa = sorted(&to_f64(a));
    let sb = sorted(&to_f64(b));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut x_prev = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        total += (fa - fb).abs() * (x - x_prev);
        while i < sa.len() && sa[i] == x {
            i += 1;
        }
        while j < sb.len() && sb[j] == x {
            j += 1;
        }
        x_prev = x;
    }
    Ok(total)
}
