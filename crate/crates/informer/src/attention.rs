//! Scaled dot-product attention, its ProbSparse approximation and the
//! multi-head wrapper.

use stratlab_autodiff::{Graph, Var};
use stratlab_core::Real;

use crate::error::{Error, Result};

/// Number of active queries: `ceil(c ln L_Q)`, at least 1 and at most `L_Q`.
pub fn active_queries(c: f64, lq: usize) -> usize {
    let u = (c * (lq as f64).ln()).ceil();
    if u.is_finite() && u > 1.0 {
        (u as usize).min(lq)
    } else {
        1.min(lq)
    }
}

/// Max-minus-mean score of each query row of `scores` (.., L_Q, L_K), flattened.
pub fn sparsity_measure<T: Real>(scores: &[T], lk: usize) -> Vec<f64> {
    scores
        .chunks(lk.max(1))
        .map(|row| {
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / lk as f64;
            max - mean
        })
        .collect()
}

/// Indices of the `u` largest scores, ties to the lower index, returned ascending.
pub fn top_queries(measure: &[f64], u: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..measure.len()).collect();
    idx.sort_by(|&a, &b| measure[b].total_cmp(&measure[a]).then(a.cmp(&b)));
    idx.truncate(u);
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttentionKind {
    Dense,
    ProbSparse { factor: f64 },
}

fn check(g: &Graph<impl Real>, q: Var, k: Var, v: Var) -> Result<(usize, usize, usize)> {
    let (qs, ks, vs) = (g.shape(q), g.shape(k), g.shape(v));
    if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 || qs[2] != ks[2] || ks[1] != vs[1] || qs[0] != ks[0] || ks[0] != vs[0]
    {
        return Err(Error::Config(format!(
            "attention shapes q {qs:?}, k {ks:?}, v {vs:?} do not agree"
        )));
    }
    Ok((qs[1], ks[1], qs[2]))
}

/// `q` (B, L_Q, d_k), `k` (B, L_K, d_k), `v` (B, L_K, d_v).
pub fn attention<T: Real>(g: &mut Graph<T>, q: Var, k: Var, v: Var, kind: AttentionKind) -> Result<Var> {
    let (lq, lk, dk) = check(g, q, k, v)?;
    let kt = g.transpose(k)?;
    let raw = g.matmul(q, kt)?;
    let scores = g.scale(raw, T::one() / T::from_count(dk).sqrt());
    let u = match kind {
        AttentionKind::Dense => lq,
        AttentionKind::ProbSparse { factor } => active_queries(factor, lq),
    };
    if u >= lq {
        let w = g.softmax(scores);
        return Ok(g.matmul(w, v)?);
    }
    let measure = sparsity_measure(g.value(scores).data(), lk);
    let rows: Vec<Vec<usize>> = measure.chunks(lq).map(|m| top_queries(m, u)).collect();
    let picked = g.gather_rows(scores, &rows)?;
    let w = g.softmax(picked);
    let active = g.matmul(w, v)?;
    let lazy = g.mean_rows(v, lq)?;
    Ok(g.scatter_rows(lazy, active, &rows)?)
}

/// Projection matrices of one multi-head block, each (d, d) with head `i`
/// owning columns `i*d/h..(i+1)*d/h`.
#[derive(Debug, Clone, Copy)]
pub struct HeadWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

/// Runs `heads` attentions on projected inputs and concatenates them.
pub fn multi_head<T: Real>(
    g: &mut Graph<T>,
    x_q: Var,
    x_kv: Var,
    w: HeadWeights,
    heads: usize,
    kind: AttentionKind,
) -> Result<Var> {
    let d = *g.shape(x_q).last().unwrap_or(&0);
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("model width {d} is not divisible by {heads} heads")));
    }
    let dk = d / heads;
    let q = g.matmul(x_q, w.wq)?;
    let k = g.matmul(x_kv, w.wk)?;
    let v = g.matmul(x_kv, w.wv)?;
    if heads == 1 {
        return attention(g, q, k, v, kind);
    }
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let qi = g.slice(q, 2, i * dk, dk)?;
        let ki = g.slice(k, 2, i * dk, dk)?;
        let vi = g.slice(v, 2, i * dk, dk)?;
        outs.push(attention(g, qi, ki, vi, kind)?);
    }
    Ok(g.concat(&outs, 2)?)
}
