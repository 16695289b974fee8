//! Central finite-difference checks of graph gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

/// Worst disagreement found by [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-3)`
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares the gradient of `f` with respect to each input against central
/// differences. `f` builds a scalar loss from the input vars; it is re-run
/// with dropout disabled, so it must be deterministic given its inputs.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(0, false);
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut g = Graph::new(0, false);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    let mut xs = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        for k in 0..xs[i].len() {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + STEP;
            let up = eval(&xs)?;
            xs[i].data_mut()[k] = orig - STEP;
            let down = eval(&xs)?;
            xs[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let an = a.data()[k];
            report.max_rel_err = report.max_rel_err.max(rel_err(an, numeric));
            report.max_abs_err = report.max_abs_err.max((an - numeric).abs());
            report.checked += 1;
        }
    }
    Ok(report)
}
