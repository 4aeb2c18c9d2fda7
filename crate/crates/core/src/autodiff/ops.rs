use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{accumulate, Graph, Node, Var};
use crate::math;
use crate::tensor::{matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::{Error, Result};

/// How a `(batch·seq) × d_model` activation is split into sequences and heads.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayout {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    /// `true` for real tokens; `false` keys are never attended to.
    pub key_mask: Vec<bool>,
}

pub(super) enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor,
        count: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    GradReverse(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<f64>,
    },
}

impl Op {
    pub(super) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Gelu(x)
            | Op::Softmax(x)
            | Op::GradReverse(x)
            | Op::SelectRows { x, .. }
            | Op::Dropout { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Gather { table, .. } => vec![*table],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn gelu_grad(x: f64) -> f64 {
    math::phi_cdf(x) + x * math::phi_pdf(x)
}

impl Graph {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a `1×n` bias to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: xv.shape(),
                right: bv.shape(),
            });
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * math::phi_cdf(v));
        self.push(out, Op::Gelu(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.shape();
        if n < 2 {
            return Err(Error::DegenerateShape {
                op: "layer_norm",
                shape: (m, n),
            });
        }
        if !(eps > 0.0) {
            return Err(Error::Config(alloc::format!("layer_norm eps must be > 0, got {eps}")));
        }
        for p in [gamma, beta] {
            let pv = self.value(p);
            if pv.shape() != (1, n) {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    left: (m, n),
                    right: pv.shape(),
                });
            }
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = Tensor::zeros(m, n);
        let mut out = Tensor::zeros(m, n);
        let mut rstd = Vec::with_capacity(m);
        for r in 0..m {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / math::sqrt(var + eps);
            rstd.push(rs);
            let hrow = xhat.row_mut(r);
            for (h, v) in hrow.iter_mut().zip(row) {
                *h = (v - mean) * rs;
            }
            let orow = out.row_mut(r);
            for c in 0..n {
                orow[c] = gv.data()[c] * xhat.get(r, c) + bv.data()[c];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::Softmax(x))
    }

    /// Mean over unmasked rows of `-log softmax(logits)[target]`.
    ///
    /// Masked rows may carry any target value; they receive zero gradient.
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let lv = self.value(logits);
        let (m, c) = lv.shape();
        if targets.len() != m {
            return Err(Error::LengthMismatch(targets.len(), m));
        }
        if mask.len() != m {
            return Err(Error::LengthMismatch(mask.len(), m));
        }
        let count = mask.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(Error::EmptyLoss("cross_entropy_logits"));
        }
        let mut probs = Tensor::zeros(m, c);
        let mut total = 0.0;
        for r in 0..m {
            if !mask[r] {
                continue;
            }
            let t = targets[r];
            if t >= c {
                return Err(Error::IndexOutOfRange {
                    what: "target",
                    index: t,
                    limit: c,
                });
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| math::exp(v - max)).sum();
            let lse = max + math::log(z);
            total += lse - row[t];
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = math::exp(v - lse);
            }
        }
        let out = Tensor::scalar(total / count as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Row gather from an embedding table.
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = tv.shape();
        let mut out = Tensor::zeros(ids.len(), d);
        for (r, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(Error::IndexOutOfRange {
                    what: "token id",
                    index: id,
                    limit: v,
                });
            }
            out.row_mut(r).copy_from_slice(tv.row(id));
        }
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Picks rows of an activation, e.g. the `[CLS]` positions.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let mut out = Tensor::zeros(rows.len(), xv.cols());
        for (i, &r) in rows.iter().enumerate() {
            if r >= xv.rows() {
                return Err(Error::IndexOutOfRange {
                    what: "row",
                    index: r,
                    limit: xv.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(xv.row(r));
        }
        Ok(self.push(
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Identity forward; the backward pass negates the upstream gradient.
    pub fn grad_reverse(&mut self, x: Var) -> Var {
        let out = self.value(x).clone();
        self.push(out, Op::GradReverse(x))
    }

    /// Inverted dropout. `p == 0` returns `x` itself without drawing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(alloc::format!("dropout p must be in [0, 1), got {p}")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(xv.rows(), xv.cols(), data)?;
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Multi-head scaled dot-product self-attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `(batch·seq) × d`; head `h` uses columns
    /// `h·d/heads .. (h+1)·d/heads`. Queries at padded positions still produce
    /// rows, but padded keys are excluded from every softmax.
    pub fn masked_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        same_shape("attention", qv, kv)?;
        same_shape("attention", qv, vv)?;
        let AttentionLayout {
            batch,
            seq,
            heads,
            ref key_mask,
        } = layout;
        let d = qv.cols();
        if qv.rows() != batch * seq || key_mask.len() != batch * seq {
            return Err(Error::ShapeMismatch {
                op: "attention",
                left: qv.shape(),
                right: (batch * seq, key_mask.len()),
            });
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(alloc::format!(
                "d_model {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / math::sqrt(dh as f64);
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = Tensor::zeros(batch * seq, d);
        let mut scores = vec![0.0; seq];
        for b in 0..batch {
            let keys = &key_mask[b * seq..(b + 1) * seq];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..seq {
                    let qi = &qv.row(b * seq + i)[cols.clone()];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..seq {
                        if !keys[j] {
                            continue;
                        }
                        let kj = &kv.row(b * seq + j)[cols.clone()];
                        let s = scale * qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>();
                        scores[j] = s;
                        max = max.max(s);
                    }
                    let base = ((b * heads + h) * seq + i) * seq;
                    let mut z = 0.0;
                    for j in 0..seq {
                        if keys[j] {
                            let e = math::exp(scores[j] - max);
                            probs[base + j] = e;
                            z += e;
                        }
                    }
                    let orow = &mut out.row_mut(b * seq + i)[cols.clone()];
                    for j in 0..seq {
                        if !keys[j] {
                            continue;
                        }
                        let p = probs[base + j] / z;
                        probs[base + j] = p;
                        let vj = &vv.row(b * seq + j)[cols.clone()];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
        ))
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

pub(super) fn backward_node(
    nodes: &[Node],
    i: usize,
    g: &Tensor,
    scratch: &mut [Option<Tensor>],
) {
    let val = |v: Var| &nodes[v.0].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            accumulate(nodes, scratch, *a, |da| matmul_nt_acc(g, bv, da));
            accumulate(nodes, scratch, *b, |db| matmul_tn_acc(av, g, db));
        }
        Op::AddBias(x, b) => {
            accumulate(nodes, scratch, *x, |dx| dx.add_assign(g));
            accumulate(nodes, scratch, *b, |db| {
                for r in 0..g.rows() {
                    for (d, u) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += u;
                    }
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(nodes, scratch, *a, |da| da.add_assign(g));
            accumulate(nodes, scratch, *b, |db| db.add_assign(g));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            accumulate(nodes, scratch, *a, |da| {
                for ((d, u), y) in da.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                    *d += u * y;
                }
            });
            accumulate(nodes, scratch, *b, |db| {
                for ((d, u), x) in db.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    *d += u * x;
                }
            });
        }
        Op::Scale(x, s) => accumulate(nodes, scratch, *x, |dx| {
            for (d, u) in dx.data_mut().iter_mut().zip(g.data()) {
                *d += s * u;
            }
        }),
        Op::Sum(x) => {
            let u = g.data()[0];
            accumulate(nodes, scratch, *x, |dx| {
                for d in dx.data_mut() {
                    *d += u;
                }
            });
        }
        Op::Gelu(x) => {
            let xv = val(*x);
            accumulate(nodes, scratch, *x, |dx| {
                for ((d, u), v) in dx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    *d += u * gelu_grad(*v);
                }
            });
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let gv = val(*gamma);
            let (m, n) = xhat.shape();
            accumulate(nodes, scratch, *gamma, |dg| {
                for r in 0..m {
                    for c in 0..n {
                        dg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                    }
                }
            });
            accumulate(nodes, scratch, *beta, |db| {
                for r in 0..m {
                    for (d, u) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += u;
                    }
                }
            });
            accumulate(nodes, scratch, *x, |dx| {
                let mut dxhat = vec![0.0; n];
                for r in 0..m {
                    let grow = g.row(r);
                    let hrow = xhat.row(r);
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for c in 0..n {
                        dxhat[c] = grow[c] * gv.data()[c];
                        mean_d += dxhat[c];
                        mean_dh += dxhat[c] * hrow[c];
                    }
                    mean_d /= n as f64;
                    mean_dh /= n as f64;
                    let rs = rstd[r];
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d += rs * (dxhat[c] - mean_d - hrow[c] * mean_dh);
                    }
                }
            });
        }
        Op::Softmax(x) => {
            let y = &nodes[i].value;
            accumulate(nodes, scratch, *x, |dx| {
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, yy), gg) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d += yy * (gg - dot);
                    }
                }
            });
        }
        Op::CrossEntropy {
            logits,
            targets,
            mask,
            probs,
            count,
        } => {
            let u = g.data()[0] / *count as f64;
            accumulate(nodes, scratch, *logits, |dl| {
                for r in 0..probs.rows() {
                    if !mask[r] {
                        continue;
                    }
                    let t = targets[r];
                    for (c, (d, p)) in dl.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        *d += u * (p - onehot);
                    }
                }
            });
        }
        Op::Gather { table, ids } => accumulate(nodes, scratch, *table, |dt| {
            for (r, &id) in ids.iter().enumerate() {
                for (d, u) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                    *d += u;
                }
            }
        }),
        Op::SelectRows { x, rows } => accumulate(nodes, scratch, *x, |dx| {
            for (i, &r) in rows.iter().enumerate() {
                for (d, u) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                    *d += u;
                }
            }
        }),
        Op::GradReverse(x) => accumulate(nodes, scratch, *x, |dx| {
            for (d, u) in dx.data_mut().iter_mut().zip(g.data()) {
                *d += -u;
            }
        }),
        Op::Dropout { x, mask } => accumulate(nodes, scratch, *x, |dx| {
            for ((d, u), m) in dx.data_mut().iter_mut().zip(g.data()).zip(mask) {
                *d += u * m;
            }
        }),
        Op::Attention {
            q,
            k,
            v,
            layout,
            probs,
        } => {
            let (qv, kv, vv) = (val(*q), val(*k), val(*v));
            let (dq, dk, dv) = attention_backward(qv, kv, vv, layout, probs, g);
            accumulate(nodes, scratch, *q, |d| d.add_assign(&dq));
            accumulate(nodes, scratch, *k, |d| d.add_assign(&dk));
            accumulate(nodes, scratch, *v, |d| d.add_assign(&dv));
        }
    }
}

fn attention_backward(
    qv: &Tensor,
    kv: &Tensor,
    vv: &Tensor,
    layout: &AttentionLayout,
    probs: &[f64],
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let AttentionLayout {
        batch,
        seq,
        heads,
        ref key_mask,
    } = *layout;
    let d = qv.cols();
    let dh = d / heads;
    let scale = 1.0 / math::sqrt(dh as f64);
    let mut dq = Tensor::zeros(qv.rows(), d);
    let mut dk = Tensor::zeros(qv.rows(), d);
    let mut dv = Tensor::zeros(qv.rows(), d);
    let mut dp = vec![0.0; seq];
    for b in 0..batch {
        let keys = &key_mask[b * seq..(b + 1) * seq];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..seq {
                let base = ((b * heads + h) * seq + i) * seq;
                let go = &g.row(b * seq + i)[cols.clone()];
                let mut weighted = 0.0;
                for j in 0..seq {
                    if !keys[j] {
                        continue;
                    }
                    let p = probs[base + j];
                    let vj = &vv.row(b * seq + j)[cols.clone()];
                    dp[j] = go.iter().zip(vj).map(|(a, c)| a * c).sum();
                    weighted += p * dp[j];
                    for (d, u) in dv.row_mut(b * seq + j)[cols.clone()].iter_mut().zip(go) {
                        *d += p * u;
                    }
                }
                for j in 0..seq {
                    if !keys[j] {
                        continue;
                    }
                    let ds = probs[base + j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &kv.row(b * seq + j)[cols.clone()];
                    for (d, x) in dq.row_mut(b * seq + i)[cols.clone()].iter_mut().zip(kj) {
                        *d += ds * x;
                    }
                    let qi = &qv.row(b * seq + i)[cols.clone()];
                    for (d, x) in dk.row_mut(b * seq + j)[cols.clone()].iter_mut().zip(qi) {
                        *d += ds * x;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
