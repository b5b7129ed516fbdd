//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Nodes are appended in evaluation order, so the tape is already
//! topologically sorted and `backward` walks it in reverse.

use super::memory::Buffer;
use super::ops::{self, DropoutKey};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Conv1dTokens { x: Var, w: Var, b: Var, batch: usize, c_in: usize, t_len: usize, c_out: usize, k: usize },
    Dropout { x: Var, mask: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, batch: usize, heads: usize, tq: usize, tk: usize, probs: Vec<f64> },
    ConcatSeq { parts: Vec<(Var, usize)>, batch: usize },
    MeanPool { x: Var, batch: usize },
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Value,
    op: Op,
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<Buffer>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    /// Global L2 norm over every parameter gradient.
    pub fn global_norm(&self) -> f64 {
        self.slots.iter().flatten().flat_map(|b| b.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.slots.iter_mut().flatten() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `(id, gradient)` for every parameter that received one.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.as_deref().map(|g| (ParamId(i), g)))
    }

    /// Adds every gradient into the matching parameter's grad buffer.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.slots.len() != store.len() {
            return Err(Error::config("gradients belong to a different parameter store"));
        }
        for id in store.ids().collect::<Vec<_>>() {
            if let Some(g) = &self.slots[id.0] {
                store.get_mut(id).accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    train: bool,
    seed: u64,
    step: u64,
    next_dropout_id: u64,
}

impl<'s> Graph<'s> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new(store: &'s ParamStore) -> Self {
        Self::with_mode(store, false, 0, 0)
    }

    pub fn with_mode(store: &'s ParamStore, train: bool, seed: u64, step: u64) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            train,
            seed,
            step,
            next_dropout_id: 0,
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Leaf });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.store.expect_id(name)?;
        Ok(self.param(id))
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(format!("mul {:?} * {:?}", ta.shape(), tb.shape())));
        }
        let out = Tensor::new(ta.shape(), ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect())?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let out = Tensor::new(ta.shape(), ta.data().iter().map(|x| x * s).collect()).expect("same shape");
        self.push(out, Op::Scale(a, s))
    }

    /// Adds a `[d]` bias to every row of `x[.., d]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let d = tx.last_dim();
        if tb.numel() != d {
            return Err(Error::dim(format!("bias of size {} for feature dim {d}", tb.numel())));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(d) {
            for (o, bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let out = Tensor::new(tx.shape(), out)?;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    /// `x * w + b` with `w[d_in, d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax_rows(self.value(x))?;
        Ok(self.push(out, Op::SoftmaxRows(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.last_dim();
        if tg.numel() != d || tb.numel() != d {
            return Err(Error::dim(format!("layer_norm affine size for feature dim {d}")));
        }
        let (xhat, inv_std) = ops::layer_norm_stats(tx.data(), d, ops::LAYER_NORM_EPS);
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for ((v, g), b) in row.iter_mut().zip(tg.data()).zip(tb.data()) {
                *v = *v * g + b;
            }
        }
        let out = Tensor::new(tx.shape(), out)?;
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }))
    }

    /// Batched same-padded convolution `x[B, C_in, T]` → token-major `[B*T, C_out]`.
    pub fn conv1d_tokens(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let [batch, c_in, t_len] = tx.shape()[..] else {
            return Err(Error::dim(format!("conv input must be [B, C, T], got {:?}", tx.shape())));
        };
        let [c_out, kc, k] = tw.shape()[..] else {
            return Err(Error::dim(format!("conv kernels must be rank 3, got {:?}", tw.shape())));
        };
        ops::check_kernel(k)?;
        if kc != c_in || tb.numel() != c_out {
            return Err(Error::dim(format!(
                "conv kernels {:?} incompatible with input {:?}",
                tw.shape(),
                tx.shape()
            )));
        }
        let mut out = vec![0.0; batch * t_len * c_out];
        for s in 0..batch {
            ops::conv1d_tokens_acc(
                &tx.data()[s * c_in * t_len..(s + 1) * c_in * t_len],
                tw.data(),
                tb.data(),
                &mut out[s * t_len * c_out..(s + 1) * t_len * c_out],
                c_in,
                t_len,
                c_out,
                k,
            );
        }
        let out = Tensor::new(&[batch * t_len, c_out], out)?;
        Ok(self.push(out, Op::Conv1dTokens { x, w, b, batch, c_in, t_len, c_out, k }))
    }

    /// Inverted dropout keyed by `(seed, op index, step)`; identity outside training.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        ops::check_dropout(p)?;
        let op_id = self.next_dropout_id;
        self.next_dropout_id += 1;
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let key = DropoutKey { seed: self.seed, op_id, step: self.step };
        let tx = self.value(x);
        let mask = ops::dropout_mask(tx.numel(), p, key);
        let out = Tensor::new(tx.shape(), tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect())?;
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Scaled dot-product attention over `heads` column groups, independently
    /// per sample. `q[B*Tq, d]`, `k, v[B*Tk, d]` → `[B*Tq, d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, heads: usize) -> Result<Var> {
        let (tq_, tk_, tv_) = (self.value(q), self.value(k), self.value(v));
        let (rq, d) = tq_.dims2()?;
        let (rk, dk) = tk_.dims2()?;
        if tv_.shape() != tk_.shape() || dk != d {
            return Err(Error::dim(format!(
                "attention q {:?}, k {:?}, v {:?}",
                tq_.shape(),
                tk_.shape(),
                tv_.shape()
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::config(format!("model dim {d} not divisible by {heads} heads")));
        }
        if batch == 0 || rq % batch != 0 || rk % batch != 0 {
            return Err(Error::dim(format!("rows {rq}/{rk} not divisible by batch {batch}")));
        }
        let (tq, tk) = (rq / batch, rk / batch);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (tq_.data(), tk_.data(), tv_.data());
        let mut probs = vec![0.0; batch * heads * tq * tk];
        let mut out = vec![0.0; rq * d];
        for b in 0..batch {
            for h in 0..heads {
                let c0 = h * dh;
                let pbase = (b * heads + h) * tq * tk;
                for i in 0..tq {
                    let qrow = &qd[(b * tq + i) * d + c0..(b * tq + i) * d + c0 + dh];
                    let prow = &mut probs[pbase + i * tk..pbase + (i + 1) * tk];
                    for (j, p) in prow.iter_mut().enumerate() {
                        let krow = &kd[(b * tk + j) * d + c0..(b * tk + j) * d + c0 + dh];
                        *p = scale * qrow.iter().zip(krow).map(|(x, y)| x * y).sum::<f64>();
                    }
                    ops::softmax_in_place(prow);
                    let orow = &mut out[(b * tq + i) * d + c0..(b * tq + i) * d + c0 + dh];
                    for (j, p) in prow.iter().enumerate() {
                        let vrow = &vd[(b * tk + j) * d + c0..(b * tk + j) * d + c0 + dh];
                        for (o, vv) in orow.iter_mut().zip(vrow) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[rq, d], out)?;
        Ok(self.push(out, Op::Attention { q, k, v, batch, heads, tq, tk, probs }))
    }

    /// Per-sample concatenation along the sequence axis: part `i` is
    /// `[B*T_i, d]`, the result is `[B*ΣT_i, d]` with each sample's rows
    /// laid out as `part_0 | part_1 | ...`.
    pub fn concat_seq(&mut self, parts: &[Var], batch: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_seq of no parts"))?;
        let d = self.value(*first).last_dim();
        let mut spec = Vec::with_capacity(parts.len());
        for &p in parts {
            let (rows, pd) = self.value(p).dims2()?;
            if pd != d || batch == 0 || rows % batch != 0 {
                return Err(Error::dim(format!(
                    "concat_seq part [{rows}, {pd}] with batch {batch}, dim {d}"
                )));
            }
            spec.push((p, rows / batch));
        }
        let total: usize = spec.iter().map(|(_, t)| t).sum();
        let mut out = Vec::with_capacity(batch * total * d);
        for b in 0..batch {
            for &(p, t) in &spec {
                out.extend_from_slice(&self.value(p).data()[b * t * d..(b + 1) * t * d]);
            }
        }
        let out = Tensor::new(&[batch * total, d], out)?;
        Ok(self.push(out, Op::ConcatSeq { parts: spec, batch }))
    }

    /// Mean over each sample's rows: `[B*T, d]` → `[B, d]`.
    pub fn mean_pool(&mut self, x: Var, batch: usize) -> Result<Var> {
        let (rows, d) = self.value(x).dims2()?;
        if batch == 0 || rows % batch != 0 {
            return Err(Error::dim(format!("mean_pool rows {rows} with batch {batch}")));
        }
        let t = rows / batch;
        let xd = self.value(x).data();
        let mut out = vec![0.0; batch * d];
        for b in 0..batch {
            let orow = &mut out[b * d..(b + 1) * d];
            for r in 0..t {
                for (o, v) in orow.iter_mut().zip(&xd[(b * t + r) * d..(b * t + r + 1) * d]) {
                    *o += v;
                }
            }
            orow.iter_mut().for_each(|o| *o /= t as f64);
        }
        let out = Tensor::new(&[batch, d], out)?;
        Ok(self.push(out, Op::MeanPool { x, batch }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean cross-entropy of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let loss = ops::cross_entropy_with_logits(tl, labels)?;
        let probs = ops::softmax_rows(tl)?.into_data();
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    /// Reverse sweep from a scalar `loss`, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Buffer>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Buffer::from_vec(vec![1.0]));
        let mut params: Vec<Option<Buffer>> = (0..self.store.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(id) = node.value {
                        params[id.0] = Some(g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.dims2()?;
                    let n = tb.dims2()?.1;
                    ops::matmul_nt_acc(&g, tb.data(), slot(&mut grads, *a, m * k), m, n, k);
                    ops::matmul_tn_acc(ta.data(), &g, slot(&mut grads, *b, k * n), m, k, n);
                }
                Op::Add(a, b) => {
                    axpy(slot(&mut grads, *a, g.len()), 1.0, &g);
                    axpy(slot(&mut grads, *b, g.len()), 1.0, &g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    axpy(slot(&mut grads, *a, g.len()), 1.0, &ga);
                    axpy(slot(&mut grads, *b, g.len()), 1.0, &gb);
                }
                Op::Scale(a, s) => axpy(slot(&mut grads, *a, g.len()), *s, &g),
                Op::AddBias(x, b) => {
                    let d = self.value(*b).numel();
                    axpy(slot(&mut grads, *x, g.len()), 1.0, &g);
                    let gb = slot(&mut grads, *b, d);
                    for row in g.chunks(d) {
                        axpy(gb, 1.0, row);
                    }
                }
                Op::Relu(x) => {
                    let out = self.value(Var(idx)).data();
                    let gx = slot(&mut grads, *x, g.len());
                    for ((gi, gv), o) in gx.iter_mut().zip(g.iter()).zip(out) {
                        if *o > 0.0 {
                            *gi += gv;
                        }
                    }
                }
                Op::SoftmaxRows(x) => {
                    let y = self.value(Var(idx));
                    let n = y.last_dim();
                    let gx = slot(&mut grads, *x, g.len());
                    for ((grow, yrow), gxrow) in g.chunks(n).zip(y.data().chunks(n)).zip(gx.chunks_mut(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in gxrow.iter_mut().zip(grow).zip(yrow) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let tg = self.value(*gain);
                    let d = tg.numel();
                    let mut dgain = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    let mut dx = vec![0.0; g.len()];
                    for (r, is) in inv_std.iter().enumerate() {
                        let grow = &g[r * d..(r + 1) * d];
                        let xrow = &xhat[r * d..(r + 1) * d];
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_x = 0.0;
                        for j in 0..d {
                            dgain[j] += grow[j] * xrow[j];
                            dbias[j] += grow[j];
                            let dxh = grow[j] * tg.data()[j];
                            mean_dxhat += dxh;
                            mean_dxhat_x += dxh * xrow[j];
                        }
                        mean_dxhat /= d as f64;
                        mean_dxhat_x /= d as f64;
                        for j in 0..d {
                            let dxh = grow[j] * tg.data()[j];
                            dx[r * d + j] = is * (dxh - mean_dxhat - xrow[j] * mean_dxhat_x);
                        }
                    }
                    axpy(slot(&mut grads, *x, dx.len()), 1.0, &dx);
                    axpy(slot(&mut grads, *gain, d), 1.0, &dgain);
                    axpy(slot(&mut grads, *bias, d), 1.0, &dbias);
                }
                Op::Conv1dTokens { x, w, b, batch, c_in, t_len, c_out, k } => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let half = (*k / 2) as isize;
                    let mut dw = vec![0.0; tw.numel()];
                    let mut db = vec![0.0; *c_out];
                    let mut dx = vec![0.0; tx.numel()];
                    for s in 0..*batch {
                        let xs = &tx.data()[s * c_in * t_len..(s + 1) * c_in * t_len];
                        let dxs = &mut dx[s * c_in * t_len..(s + 1) * c_in * t_len];
                        for t in 0..*t_len {
                            let grow = &g[(s * t_len + t) * c_out..(s * t_len + t + 1) * c_out];
                            for (o, &go) in grow.iter().enumerate() {
                                db[o] += go;
                                for c in 0..*c_in {
                                    for j in 0..*k {
                                        let src = t as isize + j as isize - half;
                                        if src >= 0 && (src as usize) < *t_len {
                                            let wi = (o * c_in + c) * k + j;
                                            let xi = c * t_len + src as usize;
                                            dw[wi] += go * xs[xi];
                                            dxs[xi] += go * tw.data()[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    axpy(slot(&mut grads, *x, dx.len()), 1.0, &dx);
                    axpy(slot(&mut grads, *w, dw.len()), 1.0, &dw);
                    axpy(slot(&mut grads, *b, db.len()), 1.0, &db);
                }
                Op::Dropout { x, mask } => {
                    let gx = slot(&mut grads, *x, g.len());
                    for ((o, gv), m) in gx.iter_mut().zip(g.iter()).zip(mask) {
                        *o += gv * m;
                    }
                }
                Op::Attention { q, k, v, batch, heads, tq, tk, probs } => {
                    let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                    let d = self.value(*q).last_dim();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = vec![0.0; qd.len()];
                    let mut dk = vec![0.0; kd.len()];
                    let mut dv = vec![0.0; vd.len()];
                    let mut ds = vec![0.0; *tk];
                    for b in 0..*batch {
                        for h in 0..*heads {
                            let c0 = h * dh;
                            let pbase = (b * heads + h) * tq * tk;
                            for i in 0..*tq {
                                let qi = (b * tq + i) * d + c0;
                                let grow = &g[qi..qi + dh];
                                let prow = &probs[pbase + i * tk..pbase + (i + 1) * tk];
                                let mut dot = 0.0;
                                for j in 0..*tk {
                                    let vj = (b * tk + j) * d + c0;
                                    let da: f64 = grow.iter().zip(&vd[vj..vj + dh]).map(|(x, y)| x * y).sum();
                                    ds[j] = da;
                                    dot += prow[j] * da;
                                    for c in 0..dh {
                                        dv[vj + c] += prow[j] * grow[c];
                                    }
                                }
                                for j in 0..*tk {
                                    let dsj = scale * prow[j] * (ds[j] - dot);
                                    if dsj == 0.0 {
                                        continue;
                                    }
                                    let kj = (b * tk + j) * d + c0;
                                    for c in 0..dh {
                                        dq[qi + c] += dsj * kd[kj + c];
                                        dk[kj + c] += dsj * qd[qi + c];
                                    }
                                }
                            }
                        }
                    }
                    axpy(slot(&mut grads, *q, dq.len()), 1.0, &dq);
                    axpy(slot(&mut grads, *k, dk.len()), 1.0, &dk);
                    axpy(slot(&mut grads, *v, dv.len()), 1.0, &dv);
                }
                Op::ConcatSeq { parts, batch } => {
                    let d = self.value(Var(idx)).last_dim();
                    let total: usize = parts.iter().map(|(_, t)| t).sum();
                    for b in 0..*batch {
                        let mut offset = b * total * d;
                        for &(p, t) in parts {
                            let n = self.value(p).numel();
                            let gp = slot(&mut grads, p, n);
                            axpy(&mut gp[b * t * d..(b + 1) * t * d], 1.0, &g[offset..offset + t * d]);
                            offset += t * d;
                        }
                    }
                }
                Op::MeanPool { x, batch } => {
                    let (rows, d) = self.value(*x).dims2()?;
                    let t = rows / batch;
                    let gx = slot(&mut grads, *x, rows * d);
                    for b in 0..*batch {
                        let grow = &g[b * d..(b + 1) * d];
                        for r in 0..t {
                            axpy(&mut gx[(b * t + r) * d..(b * t + r + 1) * d], 1.0 / t as f64, grow);
                        }
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).numel();
                    slot(&mut grads, *x, n).iter_mut().for_each(|v| *v += g[0]);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let n = self.value(*logits).last_dim();
                    let scale = g[0] / labels.len() as f64;
                    let gl = slot(&mut grads, *logits, probs.len());
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..n {
                            let target = if j == y { 1.0 } else { 0.0 };
                            gl[r * n + j] += scale * (probs[r * n + j] - target);
                        }
                    }
                }
            }
        }
        Ok(Gradients { slots: params })
    }
}

fn slot(grads: &mut [Option<Buffer>], v: Var, len: usize) -> &mut Buffer {
    grads[v.0].get_or_insert_with(|| Buffer::zeros(len))
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}
