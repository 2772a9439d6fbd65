use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Constant,
    Linear { x: Var, w: Var, b: Var },
    GatherRows { src: Var, index: Vec<u32> },
    ConcatRows { parts: Vec<Var> },
    SegmentMean { values: Var, offsets: Vec<usize> },
    ScaledSum { vectors: Vec<Var>, scales: Vec<Var> },
    Relu { x: Var },
    Sigmoid { x: Var },
    Dropout { x: Var, mask: Vec<f64> },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    BceWithLogits { pos: Var, neg: Var },
    RowDistMult { left: Var, right: Var, diag: Var },
    AttentionPool(Box<AttentionSaved>),
    Sum { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    WeightedSum { x: Var, weights: Vec<f64> },
}

struct AttentionSaved {
    source: Var,
    query: Var,
    centers: Vec<u32>,
    members: Vec<u32>,
    offsets: Vec<usize>,
    /// Pre-activation scores, one per member.
    scores: Vec<f64>,
    /// Normalized attention weights, one per member.
    alpha: Vec<f64>,
}

/// Negative-side slope of the attention score activation.
pub const LEAKY_SLOPE: f64 = 0.2;

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of executed operations. Inputs always precede the
/// operations that consume them.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var) -> &Tensor {
        self.grads[v.0].as_ref().expect("gradient requested for a non-differentiable value")
    }

    pub fn try_get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &str, msg: impl std::fmt::Display) -> Error {
    Error::Shape(format!("{op}: {msg}"))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, op_name: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{op_name} produced NaN or Inf")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite("leaf holds NaN or Inf".into()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite("constant holds NaN or Inf".into()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `out[i] = W x[i] + b` for `x: n x d_in`, `W: d_out x d_in`, `b: d_out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if !xv.is_matrix() || !wv.is_matrix() {
            return Err(shape_err("linear", "x and W must be matrices"));
        }
        let (n, din) = (xv.rows(), xv.cols());
        let dout = wv.rows();
        if wv.cols() != din || bv.numel() != dout {
            return Err(shape_err(
                "linear",
                format!("x {:?}, W {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0.0; n * dout];
        for i in 0..n {
            let xi = xv.row(i);
            let oi = &mut out[i * dout..(i + 1) * dout];
            for (o, slot) in oi.iter_mut().enumerate() {
                *slot = dot(wv.row(o), xi) + bv.data()[o];
            }
        }
        let value = Tensor::new(vec![n, dout], out)?;
        self.push("linear", value, Op::Linear { x, w, b }, &[x, w, b])
    }

    /// Rows of `src` selected by `index`, in order.
    pub fn gather_rows(&mut self, src: Var, index: Vec<u32>) -> Result<Var> {
        let sv = self.value(src);
        if !sv.is_matrix() {
            return Err(shape_err("gather_rows", "source must be a matrix"));
        }
        let (n, d) = (sv.rows(), sv.cols());
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in &index {
            if i as usize >= n {
                return Err(shape_err("gather_rows", format!("row {i} out of {n}")));
            }
            out.extend_from_slice(sv.row(i as usize));
        }
        let value = Tensor::new(vec![index.len(), d], out)?;
        self.push("gather_rows", value, Op::GatherRows { src, index }, &[src])
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Result<Var> {
        let d = parts
            .first()
            .map(|p| self.value(*p).cols())
            .ok_or_else(|| shape_err("concat_rows", "no parts"))?;
        let mut out = Vec::new();
        let mut n = 0;
        for p in &parts {
            let pv = self.value(*p);
            if !pv.is_matrix() || pv.cols() != d {
                return Err(shape_err("concat_rows", format!("part {:?} vs {d} columns", pv.shape())));
            }
            n += pv.rows();
            out.extend_from_slice(pv.data());
        }
        let value = Tensor::new(vec![n, d], out)?;
        let inputs = parts.clone();
        self.push("concat_rows", value, Op::ConcatRows { parts }, &inputs)
    }

    /// Row `j` of the output is the mean of rows `offsets[j]..offsets[j+1]`.
    pub fn segment_mean(&mut self, values: Var, offsets: Vec<usize>) -> Result<Var> {
        let vv = self.value(values);
        if !vv.is_matrix() {
            return Err(shape_err("segment_mean", "values must be a matrix"));
        }
        let (m, d) = (vv.rows(), vv.cols());
        if offsets.first() != Some(&0) || offsets.last() != Some(&m) {
            return Err(Error::Contract(format!(
                "segment offsets must start at 0 and end at {m}"
            )));
        }
        let s = offsets.len() - 1;
        let mut out = vec![0.0; s * d];
        for j in 0..s {
            let (lo, hi) = (offsets[j], offsets[j + 1]);
            if hi <= lo {
                return Err(Error::Contract(format!("segment {j} is empty or reversed")));
            }
            let oj = &mut out[j * d..(j + 1) * d];
            for r in lo..hi {
                for (o, x) in oj.iter_mut().zip(vv.row(r)) {
                    *o += x;
                }
            }
            let count = (hi - lo) as f64;
            for o in oj.iter_mut() {
                *o /= count;
            }
        }
        let value = Tensor::new(vec![s, d], out)?;
        self.push("segment_mean", value, Op::SegmentMean { values, offsets }, &[values])
    }

    /// `Σ_p broadcast(scales[p]) ⊙ vectors[p]`.
    pub fn scaled_sum(&mut self, vectors: Vec<Var>, scales: Vec<Var>) -> Result<Var> {
        if vectors.is_empty() || vectors.len() != scales.len() {
            return Err(shape_err(
                "scaled_sum",
                format!("{} vectors vs {} scales", vectors.len(), scales.len()),
            ));
        }
        let shape = self.value(vectors[0]).shape().to_vec();
        if shape.len() != 2 {
            return Err(shape_err("scaled_sum", "vectors must be matrices"));
        }
        let (n, d) = (shape[0], shape[1]);
        let mut out = vec![0.0; n * d];
        for (h, a) in vectors.iter().zip(&scales) {
            let (hv, av) = (self.value(*h), self.value(*a));
            if hv.shape() != shape.as_slice() || av.numel() != d {
                return Err(shape_err(
                    "scaled_sum",
                    format!("vector {:?} / scale {:?} vs {shape:?}", hv.shape(), av.shape()),
                ));
            }
            for i in 0..n {
                let oi = &mut out[i * d..(i + 1) * d];
                for ((o, x), s) in oi.iter_mut().zip(hv.row(i)).zip(av.data()) {
                    *o += s * x;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let inputs: Vec<Var> = vectors.iter().chain(&scales).copied().collect();
        self.push("scaled_sum", value, Op::ScaledSum { vectors, scales }, &inputs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("relu", value, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("sigmoid", value, Op::Sigmoid { x }, &[x])
    }

    /// Inverted dropout: kept entries are divided by `1 - rate`. Identity
    /// (the same `Var`) when not training or when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("dropout", value, Op::Dropout { x, mask }, &[x])
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if !lv.is_matrix() || lv.rows() != labels.len() || labels.is_empty() {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("logits {:?} vs {} labels", lv.shape(), labels.len()),
            ));
        }
        let (n, c) = (lv.rows(), lv.cols());
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::Contract(format!("label {y} outside [0, {c})")));
            }
            let row = lv.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[y];
            for (p, x) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let value = Tensor::scalar(total / n as f64);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push("softmax_cross_entropy", value, op, &[logits])
    }

    /// `-mean(log σ(pos)) - mean(log σ(-neg))` in log-sigmoid-stable form.
    /// An empty `neg` contributes nothing.
    pub fn bce_with_logits(&mut self, pos: Var, neg: Var) -> Result<Var> {
        let (pv, nv) = (self.value(pos), self.value(neg));
        if pv.numel() == 0 {
            return Err(Error::Contract("bce_with_logits needs at least one positive".into()));
        }
        let mut loss = pv.data().iter().map(|&s| softplus(-s)).sum::<f64>() / pv.numel() as f64;
        if nv.numel() > 0 {
            loss += nv.data().iter().map(|&s| softplus(s)).sum::<f64>() / nv.numel() as f64;
        }
        self.push("bce_with_logits", Tensor::scalar(loss), Op::BceWithLogits { pos, neg }, &[pos, neg])
    }

    /// Per row `i`: `Σ_j left[i,j] diag[j] right[i,j]` (DistMult score).
    pub fn row_distmult(&mut self, left: Var, right: Var, diag: Var) -> Result<Var> {
        let (lv, rv, dv) = (self.value(left), self.value(right), self.value(diag));
        if lv.shape() != rv.shape() || !lv.is_matrix() || dv.numel() != lv.cols() {
            return Err(shape_err(
                "row_distmult",
                format!("{:?} / {:?} / {:?}", lv.shape(), rv.shape(), dv.shape()),
            ));
        }
        let scores = (0..lv.rows())
            .map(|i| {
                lv.row(i)
                    .iter()
                    .zip(rv.row(i))
                    .zip(dv.data())
                    .map(|((a, b), w)| a * w * b)
                    .sum()
            })
            .collect();
        let value = Tensor::vector(scores);
        self.push("row_distmult", value, Op::RowDistMult { left, right, diag }, &[left, right, diag])
    }

    /// Attention pooling over segments of `source` rows.
    ///
    /// For segment `j` with center row `c = centers[j]` and member rows
    /// `members[offsets[j]..offsets[j+1]]`: score `e_u = leaky_relu(q ·
    /// [h_c ‖ h_u])`, weights `w_u = exp(e_u - max e)`, output
    /// `Σ w_u h_u / Σ w_u`. With `q = 0` this is bit-identical to
    /// [`Tape::segment_mean`] over the gathered members.
    pub fn attention_pool(
        &mut self,
        source: Var,
        query: Var,
        centers: Vec<u32>,
        members: Vec<u32>,
        offsets: Vec<usize>,
    ) -> Result<Var> {
        let (sv, qv) = (self.value(source), self.value(query));
        if !sv.is_matrix() {
            return Err(shape_err("attention_pool", "source must be a matrix"));
        }
        let (n, d) = (sv.rows(), sv.cols());
        if qv.numel() != 2 * d {
            return Err(shape_err("attention_pool", format!("query has {} values, need {}", qv.numel(), 2 * d)));
        }
        if offsets.len() != centers.len() + 1
            || offsets.first() != Some(&0)
            || offsets.last() != Some(&members.len())
        {
            return Err(Error::Contract("attention_pool offsets do not match members".into()));
        }
        if centers.iter().chain(&members).any(|&r| r as usize >= n) {
            return Err(shape_err("attention_pool", "row index out of range"));
        }
        let (q_center, q_member) = qv.data().split_at(d);
        let mut scores = vec![0.0; members.len()];
        let mut alpha = vec![0.0; members.len()];
        let mut out = vec![0.0; centers.len() * d];
        for j in 0..centers.len() {
            let (lo, hi) = (offsets[j], offsets[j + 1]);
            if hi <= lo {
                return Err(Error::Contract(format!("attention segment {j} is empty")));
            }
            let base = dot(q_center, sv.row(centers[j] as usize));
            let mut max_e = f64::NEG_INFINITY;
            for k in lo..hi {
                let s = base + dot(q_member, sv.row(members[k] as usize));
                scores[k] = s;
                let e = if s > 0.0 { s } else { LEAKY_SLOPE * s };
                max_e = max_e.max(e);
            }
            let mut z = 0.0;
            let oj = &mut out[j * d..(j + 1) * d];
            for k in lo..hi {
                let s = scores[k];
                let e = if s > 0.0 { s } else { LEAKY_SLOPE * s };
                let w = (e - max_e).exp();
                alpha[k] = w;
                z += w;
                for (o, x) in oj.iter_mut().zip(sv.row(members[k] as usize)) {
                    *o += w * x;
                }
            }
            for o in oj.iter_mut() {
                *o /= z;
            }
            for a in &mut alpha[lo..hi] {
                *a /= z;
            }
        }
        let value = Tensor::new(vec![centers.len(), d], out)?;
        let saved = AttentionSaved {
            source,
            query,
            centers,
            members,
            offsets,
            scores,
            alpha,
        };
        self.push("attention_pool", value, Op::AttentionPool(Box::new(saved)), &[source, query])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push("add", value, Op::Add { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("scale", value, Op::Scale { x, c }, &[x])
    }

    /// `Σ_i weights[i] x[i]` over the flattened data.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if weights.len() != xv.numel() {
            return Err(shape_err("weighted_sum", format!("{} weights for {} values", weights.len(), xv.numel())));
        }
        let s = dot(xv.data(), &weights);
        self.push("weighted_sum", Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x])
    }

    /// Reverse-mode accumulation from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(node.value.shape()));
        }
        slot.as_mut().map(Tensor::data_mut)
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, din, dout) = (xv.rows(), xv.cols(), wv.rows());
                if let Some(gx) = self.accumulate(grads, *x) {
                    for i in 0..n {
                        let gxi = &mut gx[i * din..(i + 1) * din];
                        for o in 0..dout {
                            axpy(gxi, gd[i * dout + o], wv.row(o));
                        }
                    }
                }
                if let Some(gw) = self.accumulate(grads, *w) {
                    for i in 0..n {
                        let xi = xv.row(i);
                        for o in 0..dout {
                            axpy(&mut gw[o * din..(o + 1) * din], gd[i * dout + o], xi);
                        }
                    }
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    for i in 0..n {
                        for (gbo, go) in gb.iter_mut().zip(&gd[i * dout..(i + 1) * dout]) {
                            *gbo += go;
                        }
                    }
                }
            }
            Op::GatherRows { src, index } => {
                let d = out.cols();
                if let Some(gs) = self.accumulate(grads, *src) {
                    for (k, &r) in index.iter().enumerate() {
                        let r = r as usize;
                        axpy(&mut gs[r * d..(r + 1) * d], 1.0, &gd[k * d..(k + 1) * d]);
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut at = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    if let Some(gp) = self.accumulate(grads, *p) {
                        axpy(gp, 1.0, &gd[at..at + len]);
                    }
                    at += len;
                }
            }
            Op::SegmentMean { values, offsets } => {
                let d = out.cols();
                if let Some(gv) = self.accumulate(grads, *values) {
                    for j in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[j], offsets[j + 1]);
                        let inv = 1.0 / (hi - lo) as f64;
                        let gj = &gd[j * d..(j + 1) * d];
                        for r in lo..hi {
                            axpy(&mut gv[r * d..(r + 1) * d], inv, gj);
                        }
                    }
                }
            }
            Op::ScaledSum { vectors, scales } => {
                let (n, d) = (out.rows(), out.cols());
                for (h, a) in vectors.iter().zip(scales) {
                    let av = self.value(*a).data().to_vec();
                    if let Some(gh) = self.accumulate(grads, *h) {
                        for i in 0..n {
                            for j in 0..d {
                                gh[i * d + j] += gd[i * d + j] * av[j];
                            }
                        }
                    }
                    let hv = self.value(*h);
                    if let Some(ga) = self.accumulate(grads, *a) {
                        for i in 0..n {
                            for (j, x) in hv.row(i).iter().enumerate() {
                                ga[j] += gd[i * d + j] * x;
                            }
                        }
                    }
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data().to_vec();
                if let Some(gx) = self.accumulate(grads, *x) {
                    for ((gi, xi), go) in gx.iter_mut().zip(&xv).zip(gd) {
                        if *xi > 0.0 {
                            *gi += go;
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    for ((gi, s), go) in gx.iter_mut().zip(out.data()).zip(gd) {
                        *gi += go * s * (1.0 - s);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    for ((gi, m), go) in gx.iter_mut().zip(mask).zip(gd) {
                        *gi += go * m;
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let c = self.value(*logits).cols();
                let n = labels.len() as f64;
                let scale = gd[0] / n;
                if let Some(gl) = self.accumulate(grads, *logits) {
                    for (i, &y) in labels.iter().enumerate() {
                        for k in 0..c {
                            let onehot = if k == y { 1.0 } else { 0.0 };
                            gl[i * c + k] += scale * (probs[i * c + k] - onehot);
                        }
                    }
                }
            }
            Op::BceWithLogits { pos, neg } => {
                let pv = self.value(*pos).data().to_vec();
                let nv = self.value(*neg).data().to_vec();
                if let Some(gp) = self.accumulate(grads, *pos) {
                    let k = pv.len() as f64;
                    for (gi, s) in gp.iter_mut().zip(&pv) {
                        *gi -= gd[0] * sigmoid(-s) / k;
                    }
                }
                if !nv.is_empty() {
                    if let Some(gn) = self.accumulate(grads, *neg) {
                        let k = nv.len() as f64;
                        for (gi, s) in gn.iter_mut().zip(&nv) {
                            *gi += gd[0] * sigmoid(*s) / k;
                        }
                    }
                }
            }
            Op::RowDistMult { left, right, diag } => {
                let (lv, rv, dv) = (self.value(*left), self.value(*right), self.value(*diag));
                let (n, d) = (lv.rows(), lv.cols());
                let (ld, rd, ddiag) = (lv.data().to_vec(), rv.data().to_vec(), dv.data().to_vec());
                if let Some(gl) = self.accumulate(grads, *left) {
                    for i in 0..n {
                        for j in 0..d {
                            gl[i * d + j] += gd[i] * ddiag[j] * rd[i * d + j];
                        }
                    }
                }
                if let Some(gr) = self.accumulate(grads, *right) {
                    for i in 0..n {
                        for j in 0..d {
                            gr[i * d + j] += gd[i] * ddiag[j] * ld[i * d + j];
                        }
                    }
                }
                if let Some(gw) = self.accumulate(grads, *diag) {
                    for i in 0..n {
                        for j in 0..d {
                            gw[j] += gd[i] * ld[i * d + j] * rd[i * d + j];
                        }
                    }
                }
            }
            Op::AttentionPool(saved) => self.attention_backward(saved, out, gd, grads),
            Op::Sum { x } => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    for gi in gx.iter_mut() {
                        *gi += gd[0];
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(gv) = self.accumulate(grads, *v) {
                        axpy(gv, 1.0, gd);
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    axpy(gx, *c, gd);
                }
            }
            Op::WeightedSum { x, weights } => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    axpy(gx, gd[0], weights);
                }
            }
        }
    }

    fn attention_backward(&self, s: &AttentionSaved, out: &Tensor, gd: &[f64], grads: &mut [Option<Tensor>]) {
        let src = self.value(s.source).data().to_vec();
        let q = self.value(s.query).data().to_vec();
        let d = out.cols();
        let (q_center, q_member) = q.split_at(d);
        let row = |r: u32| &src[r as usize * d..(r as usize + 1) * d];

        let mut g_src = vec![0.0; src.len()];
        let mut g_q = vec![0.0; q.len()];
        for j in 0..s.centers.len() {
            let (lo, hi) = (s.offsets[j], s.offsets[j + 1]);
            let gj = &gd[j * d..(j + 1) * d];
            // dL/dα_u = g · h_u; softmax Jacobian gives dL/de_u.
            let da: Vec<f64> = (lo..hi).map(|k| dot(gj, row(s.members[k]))).collect();
            let mean_da: f64 = (lo..hi).zip(&da).map(|(k, x)| s.alpha[k] * x).sum();
            let mut ds_total = 0.0;
            for (idx, k) in (lo..hi).enumerate() {
                let de = s.alpha[k] * (da[idx] - mean_da);
                let ds = if s.scores[k] > 0.0 { de } else { LEAKY_SLOPE * de };
                ds_total += ds;
                let m = s.members[k] as usize;
                let gm = &mut g_src[m * d..(m + 1) * d];
                axpy(gm, s.alpha[k], gj);
                axpy(gm, ds, q_member);
                axpy(&mut g_q[d..], ds, row(s.members[k]));
            }
            let c = s.centers[j] as usize;
            axpy(&mut g_src[c * d..(c + 1) * d], ds_total, q_center);
            axpy(&mut g_q[..d], ds_total, row(s.centers[j]));
        }
        if let Some(gs) = self.accumulate(grads, s.source) {
            axpy(gs, 1.0, &g_src);
        }
        if let Some(gq) = self.accumulate(grads, s.query) {
            axpy(gq, 1.0, &g_q);
        }
    }
}
