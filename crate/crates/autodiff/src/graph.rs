//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] owns every intermediate value produced during one forward
//! pass. Operations append nodes in execution order, so reverse iteration is
//! a valid topological order for the backward sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratlab_core::Real;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul { a: Var, b: Var, shared: bool },
    Transpose(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Softmax(Var),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
    Conv1d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    MaxPool1d { x: Var, argmax: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
    GatherRows { x: Var, rows: Vec<Vec<usize>> },
    ScatterRows { base: Var, src: Var, rows: Vec<Vec<usize>> },
    MeanRows(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    rng: ChaCha8Rng,
    training: bool,
    backward_done: bool,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

/// `out[m, n] += a[m, k] * b[k, n]`
fn mm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m, k] += g[m, n] * b[k, n]` (gradient w.r.t. the left operand)
fn mm_a_bt_acc<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            out[i * k + p] += s;
        }
    }
}

/// `out[k, n] += a[m, k] * g[m, n]` (gradient w.r.t. the right operand)
fn mm_at_b_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn transpose_last2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let nd = x.ndim();
    let (r, c) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    let batch = x.len() / (r * c).max(1);
    let mut out = vec![T::zero(); x.len()];
    let src = x.data();
    for b in 0..batch {
        let base = b * r * c;
        for i in 0..r {
            for j in 0..c {
                out[base + j * r + i] = src[base + i * c + j];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.swap(nd - 2, nd - 1);
    Tensor::new(&shape, out).expect("same element count")
}

impl<T: Real> Graph<T> {
    pub fn new(seed: u64, training: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            training,
            backward_done: false,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the loss with respect to `v`, after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.ndim() != 1 || bv.len() != xv.last_dim() {
            return Err(Error::Shape(format!(
                "bias {:?} does not match last axis of {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let d = bv.len();
        let mut out = xv.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % d];
        }
        Ok(self.push(out, Op::AddBias(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v + s);
        self.push(out, Op::AddScalar(x), &[x])
    }

    /// Batched matrix product over the last two axes. `b` is either 2-D
    /// (shared across the batch) or has the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let err = || Error::Shape(format!("cannot multiply {:?} by {:?}", av.shape(), bv.shape()));
        if av.ndim() < 2 || bv.ndim() < 2 {
            return Err(err());
        }
        let (m, k) = (av.shape()[av.ndim() - 2], av.shape()[av.ndim() - 1]);
        let (k2, n) = (bv.shape()[bv.ndim() - 2], bv.shape()[bv.ndim() - 1]);
        if k != k2 {
            return Err(err());
        }
        let shared = bv.ndim() == 2;
        if !shared && av.shape()[..av.ndim() - 2] != bv.shape()[..bv.ndim() - 2] {
            return Err(err());
        }
        let batch = av.len() / (m * k).max(1);
        let mut out = vec![T::zero(); batch * m * n];
        if shared {
            mm_acc(av.data(), bv.data(), &mut out, batch * m, k, n);
        } else {
            for i in 0..batch {
                mm_acc(
                    &av.data()[i * m * k..(i + 1) * m * k],
                    &bv.data()[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("ndim >= 2") = n;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, shared }, &[a, b]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() < 2 {
            return Err(Error::Shape(format!("transpose needs 2+ axes, got {:?}", xv.shape())));
        }
        let out = transpose_last2(xv);
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of no tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(Error::Shape(format!("cannot concat {s:?} with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape(format!(
                "slice {start}..{} on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, inner) = outer_inner(shape, axis);
        let full = shape[axis] * inner;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = o * full + start * inner;
            out.extend_from_slice(&xv.data()[from..from + len * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = len;
        let value = Tensor::new(&new_shape, out)?;
        Ok(self.push(value, Op::Slice { x, axis, start }, &[x]))
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.last_dim();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(d.max(1)) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(out, Op::Softmax(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v.exp() - T::one() });
        self.push(out, Op::Elu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::sqrt);
        self.push(out, Op::Sqrt(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::scalar(xv.sum() / T::from_count(xv.len().max(1)));
        self.push(out, Op::Mean(x), &[x])
    }

    /// Normalises over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if d < 2 {
            return Err(Error::Shape(format!("layer norm needs last axis >= 2, got {:?}", xv.shape())));
        }
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::Shape(format!(
                "layer norm affine {:?}/{:?} for width {d}",
                gv.shape(),
                bv.shape()
            )));
        }
        let eps = T::lit(LAYER_NORM_EPS);
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        let dn = T::from_count(d);
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Inverted dropout. Identity outside training or with `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Shape(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::Dropout { x, mask }, &[x]))
    }

    /// Cross-correlation over time. `x`: (B, L, Cin), `w`: (K, Cin, Cout),
    /// `b`: (Cout); zero padding of `pad` steps on both sides.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.ndim() != 3 || wv.ndim() != 3 || stride == 0 {
            return Err(Error::Shape(format!("conv1d on {:?} with kernel {:?}", xv.shape(), wv.shape())));
        }
        let (bs, l, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (k, cin2, cout) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if cin != cin2 || bv.shape() != [cout] || l + 2 * pad < k {
            return Err(Error::Shape(format!(
                "conv1d on {:?} with kernel {:?} and bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let lout = (l + 2 * pad - k) / stride + 1;
        let mut out = vec![T::zero(); bs * lout * cout];
        for bi in 0..bs {
            for t in 0..lout {
                let o = &mut out[(bi * lout + t) * cout..(bi * lout + t + 1) * cout];
                o.copy_from_slice(bv.data());
                for kk in 0..k {
                    let src = (t * stride + kk) as isize - pad as isize;
                    if src < 0 || src as usize >= l {
                        continue;
                    }
                    let xrow = &xv.data()[(bi * l + src as usize) * cin..(bi * l + src as usize + 1) * cin];
                    mm_acc(xrow, &wv.data()[kk * cin * cout..(kk + 1) * cin * cout], o, 1, cin, cout);
                }
            }
        }
        let value = Tensor::new(&[bs, lout, cout], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, stride, pad }, &[x, w, b]))
    }

    /// Max over time windows. `x`: (B, L, C); padded positions never win.
    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize, pad: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 3 || window == 0 || stride == 0 || xv.shape()[1] + 2 * pad < window || pad >= window {
            return Err(Error::Shape(format!(
                "maxpool window {window} stride {stride} pad {pad} on {:?}",
                xv.shape()
            )));
        }
        let (bs, l, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let lout = (l + 2 * pad - window) / stride + 1;
        let mut out = vec![T::zero(); bs * lout * c];
        let mut argmax = vec![0usize; bs * lout * c];
        for bi in 0..bs {
            for t in 0..lout {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut arg = usize::MAX;
                    for kk in 0..window {
                        let src = (t * stride + kk) as isize - pad as isize;
                        if src < 0 || src as usize >= l {
                            continue;
                        }
                        let idx = (bi * l + src as usize) * c + ch;
                        if arg == usize::MAX || xv.data()[idx] > best {
                            best = xv.data()[idx];
                            arg = idx;
                        }
                    }
                    let o = (bi * lout + t) * c + ch;
                    out[o] = best;
                    argmax[o] = arg;
                }
            }
        }
        let value = Tensor::new(&[bs, lout, c], out)?;
        Ok(self.push(value, Op::MaxPool1d { x, argmax }, &[x]))
    }

    /// Gathers rows of `table` (V, D); the result has shape `ids_shape + [D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.ndim() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::Shape(format!(
                "embedding table {:?} with ids of shape {ids_shape:?}",
                tv.shape()
            )));
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("id {id} outside table of {v} rows")));
            }
            out.extend_from_slice(&tv.data()[id * d..(id + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Picks `rows[b]` from each batch entry of `x` (B, L, D); every batch
    /// entry must select the same number of rows.
    pub fn gather_rows(&mut self, x: Var, rows: &[Vec<usize>]) -> Result<Var> {
        let xv = self.value(x);
        check_rows(xv.shape(), rows)?;
        let (l, d) = (xv.shape()[1], xv.shape()[2]);
        let u = rows.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(rows.len() * u * d);
        for (bi, r) in rows.iter().enumerate() {
            for &i in r {
                out.extend_from_slice(&xv.data()[(bi * l + i) * d..(bi * l + i + 1) * d]);
            }
        }
        let value = Tensor::new(&[rows.len(), u, d], out)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    /// Copy of `base` (B, L, D) with `rows[b]` replaced by the rows of `src` (B, u, D).
    pub fn scatter_rows(&mut self, base: Var, src: Var, rows: &[Vec<usize>]) -> Result<Var> {
        let (bv, sv) = (self.value(base), self.value(src));
        check_rows(bv.shape(), rows)?;
        let u = rows.first().map_or(0, Vec::len);
        let (l, d) = (bv.shape()[1], bv.shape()[2]);
        if sv.shape() != [rows.len(), u, d] {
            return Err(Error::Shape(format!(
                "scatter source {:?} for base {:?} and {u} rows",
                sv.shape(),
                bv.shape()
            )));
        }
        let mut out = bv.clone();
        for (bi, r) in rows.iter().enumerate() {
            for (j, &i) in r.iter().enumerate() {
                let from = (bi * u + j) * d;
                out.data_mut()[(bi * l + i) * d..(bi * l + i + 1) * d].copy_from_slice(&sv.data()[from..from + d]);
            }
        }
        Ok(self.push(
            out,
            Op::ScatterRows {
                base,
                src,
                rows: rows.to_vec(),
            },
            &[base, src],
        ))
    }

    /// (B, L, D) -> (B, out_len, D) where every row is the mean over L.
    pub fn mean_rows(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 3 || xv.shape()[1] == 0 {
            return Err(Error::Shape(format!("mean_rows on {:?}", xv.shape())));
        }
        let (bs, l, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let ln = T::from_count(l);
        let mut out = vec![T::zero(); bs * out_len * d];
        for bi in 0..bs {
            let mut m = vec![T::zero(); d];
            for t in 0..l {
                for (mj, &v) in m.iter_mut().zip(&xv.data()[(bi * l + t) * d..(bi * l + t + 1) * d]) {
                    *mj += v;
                }
            }
            for mj in m.iter_mut() {
                *mj /= ln;
            }
            for t in 0..out_len {
                out[(bi * out_len + t) * d..(bi * out_len + t + 1) * d].copy_from_slice(&m);
            }
        }
        let value = Tensor::new(&[bs, out_len, d], out)?;
        Ok(self.push(value, Op::MeanRows(x), &[x]))
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar loss. Allowed once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward("backward already ran on this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        let seed_shape = self.shape(loss).to_vec();
        self.grads[loss.0] = Some(Tensor::ones(&seed_shape));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor<T>) -> Result<()> {
        // Split borrows: the op and output value are read while other nodes'
        // gradient slots are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let result = self.backprop_op(i, &op, g);
        self.nodes[i].op = op;
        result
    }

    fn backprop_op(&mut self, i: usize, op: &Op<T>, g: &Tensor<T>) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::AddBias(x, b) => {
                let d = self.value(*b).len();
                let mut gb = vec![T::zero(); d];
                for (k, &v) in g.data().iter().enumerate() {
                    gb[k % d] += v;
                }
                self.accumulate(*x, g.clone());
                self.accumulate(*b, Tensor::new(&[d], gb)?);
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(*x, g.map(|v| v * s));
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(*x, g.reshape(&shape)?);
            }
            Op::MatMul { a, b, shared } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[av.ndim() - 2], av.shape()[av.ndim() - 1]);
                let n = bv.shape()[bv.ndim() - 1];
                let batch = av.len() / (m * k).max(1);
                let mut ga = vec![T::zero(); av.len()];
                let mut gb = vec![T::zero(); bv.len()];
                if *shared {
                    mm_a_bt_acc(g.data(), bv.data(), &mut ga, batch * m, k, n);
                    mm_at_b_acc(av.data(), g.data(), &mut gb, batch * m, k, n);
                } else {
                    for bi in 0..batch {
                        let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
                        mm_a_bt_acc(gs, &bv.data()[bi * k * n..(bi + 1) * k * n], &mut ga[bi * m * k..(bi + 1) * m * k], m, k, n);
                        mm_at_b_acc(&av.data()[bi * m * k..(bi + 1) * m * k], gs, &mut gb[bi * k * n..(bi + 1) * k * n], m, k, n);
                    }
                }
                let ga = Tensor::new(av.shape(), ga)?;
                let gb = Tensor::new(bv.shape(), gb)?;
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Transpose(x) => self.accumulate(*x, transpose_last2(g)),
            Op::Concat { inputs, axis } => {
                let shape = g.shape().to_vec();
                let (outer, inner) = outer_inner(&shape, *axis);
                let total = shape[*axis];
                let mut offset = 0;
                for &v in inputs {
                    let vs = self.shape(v).to_vec();
                    let len = vs[*axis];
                    let mut part = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        part.extend_from_slice(&g.data()[from..from + len * inner]);
                    }
                    offset += len;
                    self.accumulate(v, Tensor::new(&vs, part)?);
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x).to_vec();
                let (outer, inner) = outer_inner(&xs, *axis);
                let len = g.shape()[*axis];
                let full = xs[*axis] * inner;
                let mut gx = vec![T::zero(); xs.iter().product()];
                for o in 0..outer {
                    let to = o * full + start * inner;
                    gx[to..to + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(*x, Tensor::new(&xs, gx)?);
            }
            Op::Softmax(x) => {
                let y = &self.nodes[i].value;
                let d = y.last_dim().max(1);
                let mut gx = vec![T::zero(); y.len()];
                for ((yr, gr), out) in y.data().chunks(d).zip(g.data().chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                let gx = Tensor::new(y.shape(), gx)?;
                self.accumulate(*x, gx);
            }
            Op::Relu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() })?;
                self.accumulate(*x, gx);
            }
            Op::Elu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { gv * xv.exp() })?;
                self.accumulate(*x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = g.zip_map(&self.nodes[i].value, |gv, y| gv * y * (T::one() - y))?;
                self.accumulate(*x, gx);
            }
            Op::Sqrt(x) => {
                let gx = g.zip_map(&self.nodes[i].value, |gv, y| gv * T::lit(0.5) / y)?;
                self.accumulate(*x, gx);
            }
            Op::Sum(x) => {
                let gv = g.item()?;
                let shape = self.shape(*x).to_vec();
                self.accumulate(*x, Tensor::full(&shape, gv));
            }
            Op::Mean(x) => {
                let shape = self.shape(*x).to_vec();
                let n = T::from_count(shape.iter().product::<usize>().max(1));
                let gv = g.item()? / n;
                self.accumulate(*x, Tensor::full(&shape, gv));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gainv = self.value(*gain).data().to_vec();
                let d = gainv.len();
                let dn = T::from_count(d);
                let mut gx = vec![T::zero(); xhat.len()];
                let mut gg = vec![T::zero(); d];
                let mut gb = vec![T::zero(); d];
                for (r, &inv) in inv_std.iter().enumerate() {
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gainv[j];
                        s1 += dh;
                        s2 += dh * hr[j];
                        gg[j] += gr[j] * hr[j];
                        gb[j] += gr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * gainv[j];
                        gx[r * d + j] = inv / dn * (dn * dh - s1 - hr[j] * s2);
                    }
                }
                let xs = self.shape(*x).to_vec();
                self.accumulate(*x, Tensor::new(&xs, gx)?);
                self.accumulate(*gain, Tensor::new(&[d], gg)?);
                self.accumulate(*bias, Tensor::new(&[d], gb)?);
            }
            Op::Dropout { x, mask } => {
                let mut gx = g.clone();
                for (v, &m) in gx.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                self.accumulate(*x, gx);
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (bs, l, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (k, cout) = (wv.shape()[0], wv.shape()[2]);
                let lout = g.shape()[1];
                let mut gx = vec![T::zero(); xv.len()];
                let mut gw = vec![T::zero(); wv.len()];
                let mut gb = vec![T::zero(); cout];
                for bi in 0..bs {
                    for t in 0..lout {
                        let grow = &g.data()[(bi * lout + t) * cout..(bi * lout + t + 1) * cout];
                        for (acc, &v) in gb.iter_mut().zip(grow) {
                            *acc += v;
                        }
                        for kk in 0..k {
                            let src = (t * stride + kk) as isize - *pad as isize;
                            if src < 0 || src as usize >= l {
                                continue;
                            }
                            let xo = (bi * l + src as usize) * cin;
                            let wk = kk * cin * cout;
                            mm_a_bt_acc(grow, &wv.data()[wk..wk + cin * cout], &mut gx[xo..xo + cin], 1, cin, cout);
                            mm_at_b_acc(&xv.data()[xo..xo + cin], grow, &mut gw[wk..wk + cin * cout], 1, cin, cout);
                        }
                    }
                }
                let (xs, ws) = (xv.shape().to_vec(), wv.shape().to_vec());
                self.accumulate(*x, Tensor::new(&xs, gx)?);
                self.accumulate(*w, Tensor::new(&ws, gw)?);
                self.accumulate(*b, Tensor::new(&[cout], gb)?);
            }
            Op::MaxPool1d { x, argmax } => {
                let xs = self.shape(*x).to_vec();
                let mut gx = vec![T::zero(); xs.iter().product()];
                for (&a, &v) in argmax.iter().zip(g.data()) {
                    gx[a] += v;
                }
                self.accumulate(*x, Tensor::new(&xs, gx)?);
            }
            Op::Embedding { table, ids } => {
                let ts = self.shape(*table).to_vec();
                let d = ts[1];
                let mut gt = vec![T::zero(); ts[0] * d];
                for (k, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += g.data()[k * d + j];
                    }
                }
                self.accumulate(*table, Tensor::new(&ts, gt)?);
            }
            Op::GatherRows { x, rows } => {
                let xs = self.shape(*x).to_vec();
                let (l, d) = (xs[1], xs[2]);
                let u = rows.first().map_or(0, Vec::len);
                let mut gx = vec![T::zero(); xs.iter().product()];
                for (bi, r) in rows.iter().enumerate() {
                    for (j, &row) in r.iter().enumerate() {
                        for c in 0..d {
                            gx[(bi * l + row) * d + c] += g.data()[(bi * u + j) * d + c];
                        }
                    }
                }
                self.accumulate(*x, Tensor::new(&xs, gx)?);
            }
            Op::ScatterRows { base, src, rows } => {
                let bs = self.shape(*base).to_vec();
                let (l, d) = (bs[1], bs[2]);
                let u = rows.first().map_or(0, Vec::len);
                let mut gbase = g.clone();
                let mut gsrc = vec![T::zero(); rows.len() * u * d];
                for (bi, r) in rows.iter().enumerate() {
                    for (j, &row) in r.iter().enumerate() {
                        let at = (bi * l + row) * d;
                        gsrc[(bi * u + j) * d..(bi * u + j + 1) * d].copy_from_slice(&g.data()[at..at + d]);
                        for v in &mut gbase.data_mut()[at..at + d] {
                            *v = T::zero();
                        }
                    }
                }
                self.accumulate(*base, gbase);
                self.accumulate(*src, Tensor::new(&[rows.len(), u, d], gsrc)?);
            }
            Op::MeanRows(x) => {
                let xs = self.shape(*x).to_vec();
                let (bs, l, d) = (xs[0], xs[1], xs[2]);
                let out_len = g.shape()[1];
                let ln = T::from_count(l);
                let mut gx = vec![T::zero(); bs * l * d];
                for bi in 0..bs {
                    let mut s = vec![T::zero(); d];
                    for t in 0..out_len {
                        let at = (bi * out_len + t) * d;
                        for (sj, &v) in s.iter_mut().zip(&g.data()[at..at + d]) {
                            *sj += v;
                        }
                    }
                    for t in 0..l {
                        for j in 0..d {
                            gx[(bi * l + t) * d + j] = s[j] / ln;
                        }
                    }
                }
                self.accumulate(*x, Tensor::new(&xs, gx)?);
            }
        }
        Ok(())
    }
}

fn check_rows(shape: &[usize], rows: &[Vec<usize>]) -> Result<()> {
    if shape.len() != 3 || shape[0] != rows.len() {
        return Err(Error::Shape(format!("{} row lists for tensor {shape:?}", rows.len())));
    }
    let u = rows.first().map_or(0, Vec::len);
    for r in rows {
        if r.len() != u {
            return Err(Error::Shape("row lists differ in length".into()));
        }
        if let Some(&bad) = r.iter().find(|&&i| i >= shape[1]) {
            return Err(Error::Index(format!("row {bad} outside length {}", shape[1])));
        }
    }
    Ok(())
}

