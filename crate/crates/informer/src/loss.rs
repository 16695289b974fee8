//! Training losses over a prediction var and constant targets.

use stratlab_autodiff::{Graph, Tensor, Var};
use stratlab_core::Real;

use crate::config::{InformerConfig, LossKind};
use crate::error::{Error, Result};

fn targets<T: Real>(g: &Graph<T>, pred: Var, y: &[T], width: usize) -> Result<()> {
    let s = g.shape(pred);
    if y.is_empty() {
        return Err(Error::Data("loss over an empty batch".into()));
    }
    if s.len() != 2 || s[0] != y.len() || s[1] != width {
        return Err(Error::Data(format!(
            "predictions {s:?} do not match {} targets with {width} outputs",
            y.len()
        )));
    }
    Ok(())
}

/// `sqrt(mean((y - y_hat)^2))` for predictions (N, 1).
pub fn rmse<T: Real>(g: &mut Graph<T>, pred: Var, y: &[T]) -> Result<Var> {
    targets(g, pred, y, 1)?;
    let yv = g.constant(Tensor::new(&[y.len(), 1], y.to_vec())?);
    let e = g.sub(yv, pred)?;
    let sq = g.mul(e, e)?;
    let m = g.mean(sq);
    Ok(g.sqrt(m))
}

/// Pinball loss summed over levels, averaged over samples; predictions (N, Q).
pub fn quantile<T: Real>(g: &mut Graph<T>, pred: Var, y: &[T], levels: &[f64]) -> Result<Var> {
    let q = levels.len();
    targets(g, pred, y, q)?;
    let n = y.len();
    let yrep: Vec<T> = y.iter().flat_map(|&v| std::iter::repeat(v).take(q)).collect();
    let yv = g.constant(Tensor::new(&[n, q], yrep)?);
    let up: Vec<T> = (0..n).flat_map(|_| levels.iter().map(|&l| T::lit(l))).collect();
    let down: Vec<T> = (0..n).flat_map(|_| levels.iter().map(|&l| T::lit(1.0 - l))).collect();
    let up = g.constant(Tensor::new(&[n, q], up)?);
    let down = g.constant(Tensor::new(&[n, q], down)?);
    let e = g.sub(yv, pred)?;
    let neg = g.scale(e, -T::one());
    let under = g.relu(e);
    let over = g.relu(neg);
    let a = g.mul(under, up)?;
    let b = g.mul(over, down)?;
    let per = g.add(a, b)?;
    let total = g.sum(per);
    Ok(g.scale(total, T::one() / T::from_count(n)))
}

/// `mean(-(sigmoid(a y y_hat) - 1/2) |y|^b)` for predictions (N, 1).
pub fn gmadl<T: Real>(g: &mut Graph<T>, pred: Var, y: &[T], a: f64, b: f64) -> Result<Var> {
    targets(g, pred, y, 1)?;
    let n = y.len();
    let ay = g.constant(Tensor::new(&[n, 1], y.iter().map(|&v| v * T::lit(a)).collect())?);
    let w = g.constant(Tensor::new(&[n, 1], y.iter().map(|&v| -v.abs().powf(T::lit(b))).collect())?);
    let z = g.mul(pred, ay)?;
    let s = g.sigmoid(z);
    let c = g.add_scalar(s, T::lit(-0.5));
    let per = g.mul(c, w)?;
    Ok(g.mean(per))
}

/// The loss selected by `config.loss`.
pub fn loss<T: Real>(g: &mut Graph<T>, config: &InformerConfig, pred: Var, y: &[T]) -> Result<Var> {
    match config.loss {
        LossKind::Rmse => rmse(g, pred, y),
        LossKind::Quantile => quantile(g, pred, y, &config.quantile_levels),
        LossKind::Gmadl => gmadl(g, pred, y, config.gmadl_a, config.gmadl_b),
    }
}

/// Loss value for fixed row-major predictions.
pub fn loss_value(config: &InformerConfig, pred: &[f64], y: &[f64]) -> Result<f64> {
    let mut g = Graph::new(0, false);
    let width = config.output_dim();
    let p = g.constant(Tensor::new(&[y.len(), width], pred.to_vec())?);
    let l = loss(&mut g, config, p, y)?;
    Ok(g.value(l).item()?)
}
