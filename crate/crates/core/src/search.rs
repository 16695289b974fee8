//! Exhaustive and random hyperparameter search with deterministic ranking.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BacktestReport;
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Absent,
    Int(i64),
    Real(f64),
}

impl ParamValue {
    pub fn as_int(self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(v),
            ParamValue::Real(v) if v.fract() == 0.0 => Some(v as i64),
            _ => None,
        }
    }

    pub fn as_real(self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(v as f64),
            ParamValue::Real(v) => Some(v),
            ParamValue::Absent => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Absent => write!(f, "-"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Real(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<ParamValue>,
}

impl Axis {
    pub fn ints(name: &str, values: impl IntoIterator<Item = i64>) -> Self {
        Axis {
            name: name.into(),
            values: values.into_iter().map(ParamValue::Int).collect(),
        }
    }

    pub fn reals(name: &str, values: impl IntoIterator<Item = f64>) -> Self {
        Axis {
            name: name.into(),
            values: values.into_iter().map(ParamValue::Real).collect(),
        }
    }

    /// Real values preceded by the "absent" sentinel.
    pub fn optional_reals(name: &str, values: impl IntoIterator<Item = f64>) -> Self {
        let mut axis = Self::reals(name, values);
        axis.values.insert(0, ParamValue::Absent);
        axis
    }
}

type Predicate = Arc<dyn Fn(&Combination) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct Constraint {
    pub name: String,
    predicate: Predicate,
}

impl Constraint {
    pub fn new(name: &str, predicate: impl Fn(&Combination) -> bool + Send + Sync + 'static) -> Self {
        Constraint {
            name: name.into(),
            predicate: Arc::new(predicate),
        }
    }
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Constraint").field("name", &self.name).finish()
    }
}

/// One point of a search space. Ordering follows the axis indices, first axis
/// most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    names: Arc<[String]>,
    pub indices: Vec<usize>,
    pub values: Vec<ParamValue>,
}

impl Combination {
    pub fn get(&self, name: &str) -> Option<ParamValue> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    fn require(&self, name: &str) -> Result<ParamValue> {
        self.get(name)
            .ok_or_else(|| Error::Parameter(format!("combination has no parameter '{name}'")))
    }

    pub fn int(&self, name: &str) -> Result<i64> {
        self.require(name)?
            .as_int()
            .ok_or_else(|| Error::Parameter(format!("'{name}' is not an integer")))
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        self.require(name)?
            .as_real()
            .ok_or_else(|| Error::Parameter(format!("'{name}' is not a number")))
    }

    /// `None` for the absent sentinel.
    pub fn optional_real(&self, name: &str) -> Result<Option<f64>> {
        Ok(self.require(name)?.as_real())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn to_map(&self) -> BTreeMap<String, ParamValue> {
        self.names.iter().cloned().zip(self.values.iter().copied()).collect()
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (n, v)) in self.names.iter().zip(&self.values).enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{n}={v}")?;
        }
        Ok(())
    }
}

impl Serialize for Combination {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(self.values.len()))?;
        for (n, v) in self.names.iter().zip(&self.values) {
            map.serialize_entry(n, v)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub axes: Vec<Axis>,
    pub constraints: Vec<Constraint>,
    names: Arc<[String]>,
}

impl SearchSpace {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Search("search space has no axes".into()));
        }
        if let Some(a) = axes.iter().find(|a| a.values.is_empty()) {
            return Err(Error::Search(format!("axis '{}' has no values", a.name)));
        }
        let names: Arc<[String]> = axes.iter().map(|a| a.name.clone()).collect();
        Ok(SearchSpace {
            axes,
            constraints: Vec::new(),
            names,
        })
    }

    pub fn with_constraint(mut self, c: Constraint) -> Self {
        self.constraints.push(c);
        self
    }

    /// Size of the full grid, ignoring constraints.
    pub fn raw_size(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Decodes a flat grid index.
    pub fn combination(&self, mut flat: usize) -> Combination {
        let mut indices = vec![0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            indices[k] = flat % axis.values.len();
            flat /= axis.values.len();
        }
        let values = indices.iter().zip(&self.axes).map(|(&i, a)| a.values[i]).collect();
        Combination {
            names: self.names.clone(),
            indices,
            values,
        }
    }

    pub fn admits(&self, c: &Combination) -> bool {
        self.constraints.iter().all(|k| (k.predicate)(c))
    }

    /// Flat indices of all admissible combinations, ascending.
    pub fn admissible(&self) -> Vec<usize> {
        if self.constraints.is_empty() {
            return (0..self.raw_size()).collect();
        }
        (0..self.raw_size())
            .into_par_iter()
            .filter(|&i| self.admits(&self.combination(i)))
            .collect()
    }

    pub fn len(&self) -> usize {
        if self.constraints.is_empty() {
            self.raw_size()
        } else {
            self.admissible().len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ranking key of an evaluation result.
pub trait Scored {
    /// Higher is better.
    fn score(&self) -> f64;
    /// Secondary key, lower is better.
    fn trades(&self) -> usize {
        0
    }
}

impl<T: Real> Scored for BacktestReport<T> {
    fn score(&self) -> f64 {
        self.ir_double_star.as_f64()
    }

    fn trades(&self) -> usize {
        self.n_trades
    }
}

/// Validation loss, ranked lowest first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationLoss(pub f64);

impl Scored for ValidationLoss {
    fn score(&self) -> f64 {
        -self.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluated<R> {
    pub rank: usize,
    #[serde(skip)]
    pub flat_index: usize,
    pub combination: Combination,
    pub result: R,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub combination: Combination,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchResult<R> {
    pub metric: String,
    pub raw_size: usize,
    pub admissible: usize,
    pub evaluated: usize,
    pub seed: Option<u64>,
    pub ranked: Vec<Evaluated<R>>,
    pub failed: Vec<Failure>,
}

fn rank_cmp<R: Scored>(a: &(usize, R), b: &(usize, R)) -> Ordering {
    b.1.score()
        .total_cmp(&a.1.score())
        .then(a.1.trades().cmp(&b.1.trades()))
        .then(a.0.cmp(&b.0))
}

fn run<R, E, F>(space: &SearchSpace, flats: Vec<usize>, admissible: usize, seed: Option<u64>, metric: &str, evaluate: F) -> SearchResult<R>
where
    R: Scored + Send,
    E: fmt::Display,
    F: Fn(&Combination) -> std::result::Result<R, E> + Sync,
{
    let outcomes: Vec<(usize, std::result::Result<R, String>)> = flats
        .into_par_iter()
        .map(|i| {
            let c = space.combination(i);
            let out = match evaluate(&c) {
                Ok(r) if r.score().is_nan() => Err("score is NaN".to_string()),
                Ok(r) => Ok(r),
                Err(e) => Err(e.to_string()),
            };
            (i, out)
        })
        .collect();
    let evaluated = outcomes.len();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (i, out) in outcomes {
        match out {
            Ok(r) => ok.push((i, r)),
            Err(error) => {
                let combination = space.combination(i);
                log::warn!("evaluation failed for {combination}: {error}");
                failed.push(Failure { combination, error });
            }
        }
    }
    ok.sort_by(rank_cmp);
    let ranked = ok
        .into_iter()
        .enumerate()
        .map(|(k, (i, result))| Evaluated {
            rank: k + 1,
            flat_index: i,
            combination: space.combination(i),
            result,
        })
        .collect();
    log::info!(
        "search over {} raw / {admissible} admissible combinations: {evaluated} evaluated, {} failed",
        space.raw_size(),
        failed.len()
    );
    SearchResult {
        metric: metric.to_string(),
        raw_size: space.raw_size(),
        admissible,
        evaluated,
        seed,
        ranked,
        failed,
    }
}

/// Evaluates every admissible combination in parallel.
pub fn grid_search<R, E, F>(space: &SearchSpace, metric: &str, evaluate: F) -> SearchResult<R>
where
    R: Scored + Send,
    E: fmt::Display,
    F: Fn(&Combination) -> std::result::Result<R, E> + Sync,
{
    let flats = space.admissible();
    let n = flats.len();
    run(space, flats, n, None, metric, evaluate)
}

/// Draws `sample_size` admissible combinations uniformly without replacement.
pub fn sample_combinations(space: &SearchSpace, sample_size: usize, seed: u64) -> Result<Vec<usize>> {
    let pool = space.admissible();
    if sample_size > pool.len() {
        return Err(Error::Sizing(format!(
            "sample of {sample_size} requested from {} admissible combinations",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, pool.len(), sample_size)
        .into_iter()
        .map(|k| pool[k])
        .collect())
}

pub fn random_search<R, E, F>(
    space: &SearchSpace,
    sample_size: usize,
    seed: u64,
    metric: &str,
    evaluate: F,
) -> Result<SearchResult<R>>
where
    R: Scored + Send,
    E: fmt::Display,
    F: Fn(&Combination) -> std::result::Result<R, E> + Sync,
{
    let flats = sample_combinations(space, sample_size, seed)?;
    let admissible = if space.constraints.is_empty() {
        space.raw_size()
    } else {
        space.admissible().len()
    };
    Ok(run(space, flats, admissible, Some(seed), metric, evaluate))
}

impl<R> SearchResult<R> {
    pub fn select_best(&self) -> Result<&Evaluated<R>> {
        self.ranked.first().ok_or_else(|| {
            Error::Search(format!(
                "no successful evaluation ({} failed)",
                self.failed.len()
            ))
        })
    }

    pub fn top_n(&self, n: usize) -> &[Evaluated<R>] {
        &self.ranked[..n.min(self.ranked.len())]
    }
}

/// Window lengths used by the indicator spaces: 16 Fibonacci numbers from 2.
pub fn fibonacci_windows() -> Vec<i64> {
    let mut v = vec![2i64, 3];
    while v.len() < 16 {
        let n = v[v.len() - 1] + v[v.len() - 2];
        v.push(n);
    }
    v
}

/// fast x slow x signal x short, with `fast < slow`.
pub fn macd_space() -> SearchSpace {
    let fib = fibonacci_windows();
    SearchSpace::new(vec![
        Axis::ints("fast", fib.clone()),
        Axis::ints("slow", fib.clone()),
        Axis::ints("signal", fib),
        Axis::ints("short", [0, 1]),
    ])
    .expect("non-empty axes")
    .with_constraint(Constraint::new("fast<slow", |c| {
        c.int("fast").unwrap_or(0) < c.int("slow").unwrap_or(0)
    }))
}

pub fn rsi_space() -> SearchSpace {
    let hi = [70.0, 75.0, 80.0, 85.0, 90.0, 95.0];
    let lo = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0];
    SearchSpace::new(vec![
        Axis::ints("window", fibonacci_windows()),
        Axis::optional_reals("enter_long", hi),
        Axis::optional_reals("exit_long", lo),
        Axis::optional_reals("enter_short", lo),
        Axis::optional_reals("exit_short", hi),
    ])
    .expect("non-empty axes")
}

/// Return thresholds shared by the point-forecast strategies.
pub fn threshold_space() -> SearchSpace {
    let pos: Vec<f64> = (1..=7).map(|k| k as f64 / 1000.0).collect();
    let neg: Vec<f64> = pos.iter().map(|v| -v).collect();
    SearchSpace::new(vec![
        Axis::optional_reals("enter_long", pos.clone()),
        Axis::optional_reals("exit_long", neg.clone()),
        Axis::optional_reals("enter_short", neg),
        Axis::optional_reals("exit_short", pos),
    ])
    .expect("non-empty axes")
}

pub fn quantile_space() -> SearchSpace {
    let levels = [0.75, 0.9, 0.95, 0.97, 0.98, 0.99];
    SearchSpace::new(vec![
        Axis::optional_reals("enter_long", levels),
        Axis::optional_reals("exit_long", levels),
        Axis::optional_reals("enter_short", levels),
        Axis::optional_reals("exit_short", levels),
        Axis::reals("threshold", [0.001, 0.002, 0.003]),
    ])
    .expect("non-empty axes")
}

/// Informer architecture and training grid at full scale.
pub fn informer_space() -> SearchSpace {
    SearchSpace::new(vec![
        Axis::ints("past_window", 20..=120),
        Axis::ints("batch_size", [64, 128, 256]),
        Axis::reals("learning_rate", [0.001, 0.0005, 0.0001]),
        Axis::ints("d_model", [256, 512, 1024]),
        Axis::ints("d_ff", [256, 512, 1024]),
        Axis::ints("n_heads", [1, 2, 4, 6]),
        Axis::reals("dropout", [0.05, 0.1, 0.2, 0.3]),
        Axis::ints("encoder_layers", [1, 2, 3]),
        Axis::ints("decoder_layers", [1, 2, 3]),
    ])
    .expect("non-empty axes")
    .with_constraint(Constraint::new("d_model%n_heads==0", |c| {
        let (d, h) = (c.int("d_model").unwrap_or(0), c.int("n_heads").unwrap_or(1));
        h > 0 && d % h == 0
    }))
}
