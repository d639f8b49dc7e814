//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every executed operation in execution order, so parents
//! always precede children. [`Tape::backward`] walks the record once in
//! reverse and accumulates exact analytic gradients. A tape created with
//! [`Tape::no_grad`] still computes values but records no backward edges.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Default layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    Softmax {
        src: Var,
        axis: usize,
    },
    LayerNorm {
        src: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    BinaryCrossEntropy {
        logits: Var,
        targets: Tensor,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    params: HashMap<(u64, ParamId), Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            params: HashMap::new(),
        }
    }

    /// A tape that evaluates values only; nothing on it requires a gradient.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Places a parameter on the tape. Frozen parameters become constants;
    /// repeated requests for the same parameter return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.uid(), id);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let p = store.get(id);
        let v = self.leaf(p.value.clone(), !p.frozen);
        self.params.insert(key, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    /// Adds a `1 × c` row to every row of an `r × c` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (r, c) = xv.require_matrix("add_bias")?;
        if bv.numel() != c {
            return Err(Error::Shape {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        Ok(self.push(value, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    /// `x · W (+ b)` with `W` stored as `in × out`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let ref_shape = self.value(*first).shape().to_vec();
        if axis >= ref_shape.len() {
            return Err(Error::Axis {
                op: "concat",
                axis,
                rank: ref_shape.len(),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == ref_shape.len() && s.iter().zip(&ref_shape).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    left: ref_shape,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = ref_shape[..axis].iter().product();
        let inner: usize = ref_shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = ref_shape;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, src: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let v = self.value(src);
        let (outer, len, inner) = v.axis_split(axis, "slice")?;
        if start >= end || end > len {
            return Err(Error::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{end} invalid for axis of length {len}"),
            });
        }
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&v.data()[base + start * inner..base + end * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = width;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Slice { src, axis, start }, &[src]))
    }

    pub fn softmax(&mut self, src: Var, axis: usize) -> Result<Var> {
        self.softmax_inner(src, axis, None)
    }

    /// Row-wise softmax over the last axis of a matrix where only entries
    /// with `mask[i] == true` participate. Excluded entries are exactly zero;
    /// a row with no admissible entry is all zeros.
    pub fn masked_softmax(&mut self, src: Var, mask: &Arc<[bool]>) -> Result<Var> {
        let v = self.value(src);
        v.require_matrix("masked_softmax")?;
        if mask.len() != v.numel() {
            return Err(Error::Shape {
                op: "masked_softmax",
                left: v.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        self.softmax_inner(src, 1, Some(mask))
    }

    fn softmax_inner(&mut self, src: Var, axis: usize, mask: Option<&Arc<[bool]>>) -> Result<Var> {
        let v = self.value(src);
        let (outer, len, inner) = v.axis_split(axis, "softmax")?;
        let x = v.data();
        let mut out = vec![0.0; x.len()];
        let allowed = |i: usize| mask.is_none_or(|m| m[i]);
        for o in 0..outer {
            for j in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + j;
                let mut max = f64::NEG_INFINITY;
                for a in 0..len {
                    if allowed(idx(a)) {
                        max = max.max(x[idx(a)]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut denom = 0.0;
                for a in 0..len {
                    if allowed(idx(a)) {
                        let e = (x[idx(a)] - max).exp();
                        out[idx(a)] = e;
                        denom += e;
                    }
                }
                for a in 0..len {
                    out[idx(a)] /= denom;
                }
            }
        }
        let value = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax { src, axis }, &[src]))
    }

    /// Normalises each row over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, src: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument {
                op: "layer_norm",
                msg: format!("epsilon must be positive, got {eps}"),
            });
        }
        let x = self.value(src);
        let c = x.cols();
        let g = self.value(gamma);
        let b = self.value(beta);
        if g.numel() != c || b.numel() != c {
            return Err(Error::Shape {
                op: "layer_norm",
                left: x.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let rows = x.numel() / c;
        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for k in 0..c {
                let h = (row[k] - mean) * is;
                xhat[r * c + k] = h;
                out[r * c + k] = h * g.data()[k] + b.data()[k];
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let xhat = Tensor::new(x.shape().to_vec(), xhat)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                src,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[src, gamma, beta],
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, src: Var) -> Var {
        let value = self.value(src).map(gelu);
        self.push(value, Op::Gelu(src), &[src])
    }

    /// Gathers rows of a matrix. Gradients scatter back into the used rows only.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, c) = t.require_matrix("gather_rows")?;
        if ids.is_empty() {
            return Err(Error::InvalidArgument {
                op: "gather_rows",
                msg: "no indices".into(),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= rows {
                return Err(Error::IndexOutOfRange { index: id, rows });
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let value = Tensor::new(vec![ids.len(), c], data)?;
        Ok(self.push(value, Op::Gather { table, ids: ids.to_vec() }, &[table]))
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Mean softmax cross-entropy of `n × classes` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        let (n, classes) = l.require_matrix("cross_entropy")?;
        if targets.len() != n {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: l.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut probs = vec![0.0; n * classes];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(Error::ClassOutOfRange { class: t, classes });
            }
            let row = l.row_slice(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            for k in 0..classes {
                probs[r * classes + k] = (row[k] - max).exp() / denom;
            }
            loss += log_denom - (row[t] - max);
        }
        let value = Tensor::scalar(loss / n as f64);
        let probs = Tensor::new(vec![n, classes], probs)?;
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean sigmoid binary cross-entropy over all elements.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let l = self.value(logits);
        l.same_shape(targets, "binary_cross_entropy")?;
        let loss: f64 = l
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(loss / l.numel() as f64);
        Ok(self.push(
            value,
            Op::BinaryCrossEntropy {
                logits,
                targets: targets.clone(),
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, src: Var) -> Var {
        let value = Tensor::scalar(self.value(src).sum());
        self.push(value, Op::Sum(src), &[src])
    }

    pub fn mean(&mut self, src: Var) -> Var {
        let v = self.value(src);
        let value = Tensor::scalar(v.sum() / v.numel() as f64);
        self.push(value, Op::Mean(src), &[src])
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::InvalidArgument {
                op: "backward",
                msg: format!("loss must be a scalar, got shape {:?}", lv.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), "mul", |x, y| x * y)?;
                let gb = g.zip_map(self.value(*a), "mul", |x, y| x * y)?;
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                let gb = g.sum_rows();
                let shape = self.value(*b).shape().to_vec();
                self.accumulate(grads, *b, Tensor::new(shape, gb.into_data())?);
            }
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.matmul(&self.value(*b).transpose()?)?;
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = self.value(*a).transpose()?.matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?),
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = g.axis_split(*axis, "concat")?;
                let total = g.shape()[*axis];
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.shape()[*axis];
                    if self.requires_grad(p) {
                        let mut data = Vec::with_capacity(pv.numel());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[base..base + w * inner]);
                        }
                        self.accumulate(grads, p, Tensor::new(pv.shape().to_vec(), data)?);
                    }
                    offset += w;
                }
            }
            Op::Slice { src, axis, start } => {
                let sv = self.value(*src);
                let (outer, len, inner) = sv.axis_split(*axis, "slice")?;
                let width = g.shape()[*axis];
                let mut data = vec![0.0; sv.numel()];
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    let src_off = o * width * inner;
                    data[dst..dst + width * inner].copy_from_slice(&g.data()[src_off..src_off + width * inner]);
                }
                self.accumulate(grads, *src, Tensor::new(sv.shape().to_vec(), data)?);
            }
            Op::Softmax { src, axis } => {
                let y = &node.value;
                let (outer, len, inner) = y.axis_split(*axis, "softmax")?;
                let mut dx = vec![0.0; y.numel()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + j;
                        let dot: f64 = (0..len).map(|a| g.data()[idx(a)] * y.data()[idx(a)]).sum();
                        for a in 0..len {
                            dx[idx(a)] = y.data()[idx(a)] * (g.data()[idx(a)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *src, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::LayerNorm {
                src,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = xhat.cols();
                let gv = self.value(*gamma).data();
                let mut dx = vec![0.0; xhat.numel()];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (r, &is) in inv_std.iter().enumerate() {
                    let gy = &g.data()[r * c..(r + 1) * c];
                    let xh = &xhat.data()[r * c..(r + 1) * c];
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for k in 0..c {
                        let d = gy[k] * gv[k];
                        mean_d += d;
                        mean_dx += d * xh[k];
                        dgamma[k] += gy[k] * xh[k];
                        dbeta[k] += gy[k];
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    for k in 0..c {
                        let d = gy[k] * gv[k];
                        dx[r * c + k] = is * (d - mean_d - xh[k] * mean_dx);
                    }
                }
                self.accumulate(grads, *src, Tensor::new(xhat.shape().to_vec(), dx)?);
                let gshape = self.value(*gamma).shape().to_vec();
                self.accumulate(grads, *gamma, Tensor::new(gshape, dgamma)?);
                let bshape = self.value(*beta).shape().to_vec();
                self.accumulate(grads, *beta, Tensor::new(bshape, dbeta)?);
            }
            Op::Gelu(src) => {
                let dx = g.zip_map(self.value(*src), "gelu", |gy, x| gy * gelu_grad(x))?;
                self.accumulate(grads, *src, dx);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut data = vec![0.0; tv.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for k in 0..c {
                        data[id * c + k] += g.data()[r * c + k];
                    }
                }
                self.accumulate(grads, *table, Tensor::new(tv.shape().to_vec(), data)?);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = targets.len() as f64;
                let upstream = g.item();
                let classes = probs.cols();
                let mut d = probs.data().to_vec();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * classes + t] -= 1.0;
                }
                for v in &mut d {
                    *v *= upstream / n;
                }
                self.accumulate(grads, *logits, Tensor::new(probs.shape().to_vec(), d)?);
            }
            Op::BinaryCrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let scale = g.item() / lv.numel() as f64;
                let d = lv.zip_map(targets, "binary_cross_entropy", |x, y| (sigmoid(x) - y) * scale)?;
                self.accumulate(grads, *logits, d);
            }
            Op::Sum(src) => {
                let shape = self.value(*src).shape().to_vec();
                self.accumulate(grads, *src, Tensor::full(&shape, g.item()));
            }
            Op::Mean(src) => {
                let sv = self.value(*src);
                let shape = sv.shape().to_vec();
                let n = sv.numel() as f64;
                self.accumulate(grads, *src, Tensor::full(&shape, g.item() / n));
            }
        }
        Ok(())
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<(u64, ParamId), Var>,
}

impl Gradients {
    /// Gradient with respect to a node; `None` when no path reaches it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Option<&Tensor> {
        self.params.get(&(store.uid(), id)).and_then(|v| self.wrt(*v))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}
