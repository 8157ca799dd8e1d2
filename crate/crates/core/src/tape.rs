//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records operations eagerly; [`Tape::backward`] walks the record
//! in reverse and returns parameter gradients. The heavier operations
//! (multi-head attention, layer normalization, mixture negative
//! log-likelihood) are fused, each with a hand-written backward pass.

use std::rc::Rc;

use crate::gmm::{self, GmmLayout};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A contiguous run of rows forming one sequence or set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    pub fn last(&self) -> usize {
        self.start + self.len - 1
    }
}

/// Lays out consecutive segments of the given lengths.
pub fn segments_from_lengths(lengths: &[usize]) -> Vec<Segment> {
    let mut start = 0;
    lengths
        .iter()
        .map(|&len| {
            let s = Segment::new(start, len);
            start += len;
            s
        })
        .collect()
}

const LAYER_NORM_EPS: f64 = 1e-6;

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        qkv: Var,
        heads: usize,
        segments: Rc<[Segment]>,
        causal: bool,
        probs: Vec<f64>,
        offsets: Vec<usize>,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        segments: Rc<[Segment]>,
    },
    ConcatCols(Vec<Var>),
    GmmNll {
        raw: Var,
        dnll: Mat,
    },
    SquaredError {
        pred: Var,
        target: Mat,
    },
    Mean(Var),
    Sum(Vec<Var>),
    Scale(Var, f64),
}

struct Node {
    value: Option<Mat>,
    op: Op,
    requires_grad: bool,
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self { grads: vec![None; params.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads[id.index()].as_ref()
    }

    /// Gradient of `id`, with untouched parameters reported as zeros.
    pub fn dense(&self, id: ParamId, params: &ParamStore) -> Mat {
        self.get(id).cloned().unwrap_or_else(|| {
            let (r, c) = params.get(id).shape();
            Mat::zeros(r, c)
        })
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Mat::sum_sq).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.grads.iter_mut().flatten().for_each(|g| g.scale(k));
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Mat::is_finite)
    }

    /// Parameters that received a gradient.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.nodes.push(Node { value: Some(value), op: Op::Constant, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(id), requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A constant copy of `v`: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.value(a).shape();
        let (k2, m) = self.value(b).shape();
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = Mat::zeros(n, m);
        gemm(n, k, m, self.value(a).data(), false, self.value(b).data(), false, 0.0, out.data_mut());
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a `1×m` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let mut out = self.value(x).clone();
        let b = self.value(bias);
        assert_eq!(b.shape(), (1, out.cols()), "bias shape mismatch");
        for i in 0..out.rows() {
            for (o, bv) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale(k);
        self.push(out, Op::Scale(x, k), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut xhat = Mat::zeros(n, c);
        let mut out = Mat::zeros(n, c);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            let xh = xhat.row_mut(i);
            for j in 0..c {
                xh[j] = (row[j] - mean) * inv;
            }
            let o = out.row_mut(i);
            for j in 0..c {
                o[j] = xh[j] * g[j] + b[j];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias])
    }

    /// Multi-head scaled dot-product self-attention over packed segments.
    /// `qkv` is `n × 3d` holding queries, keys and values side by side;
    /// attention never crosses segment boundaries. With `causal`, row `i` of
    /// a segment attends to rows `0..=i` only.
    pub fn attention(&mut self, qkv: Var, heads: usize, segments: Rc<[Segment]>, causal: bool) -> Var {
        let qv = self.value(qkv);
        let (n, w) = qv.shape();
        assert_eq!(w % 3, 0, "qkv width must be a multiple of 3");
        let d = w / 3;
        assert_eq!(d % heads, 0, "model width must divide into heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(n, d);
        let mut offsets = Vec::with_capacity(segments.len());
        let mut total = 0;
        for s in segments.iter() {
            offsets.push(total);
            total += heads * s.len * s.len;
        }
        let mut probs = vec![0.0; total];
        let mut scores = Vec::new();
        for (si, seg) in segments.iter().enumerate() {
            let len = seg.len;
            for h in 0..heads {
                let base = offsets[si] + h * len * len;
                for i in 0..len {
                    let q = &qv.row(seg.start + i)[h * dh..(h + 1) * dh];
                    let jmax = if causal { i + 1 } else { len };
                    scores.clear();
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..jmax {
                        let k = &qv.row(seg.start + j)[d + h * dh..d + (h + 1) * dh];
                        let s = dot(q, k) * scale;
                        max = max.max(s);
                        scores.push(s);
                    }
                    let mut z = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let p = &mut probs[base + i * len..base + i * len + len];
                    for j in 0..jmax {
                        p[j] = scores[j] / z;
                    }
                    let o = &mut out.row_mut(seg.start + i)[h * dh..(h + 1) * dh];
                    for j in 0..jmax {
                        let v = &qv.row(seg.start + j)[2 * d + h * dh..2 * d + (h + 1) * dh];
                        let pj = p[j];
                        for (ov, vv) in o.iter_mut().zip(v) {
                            *ov += pj * vv;
                        }
                    }
                }
            }
        }
        self.push(out, Op::Attention { qkv, heads, segments, causal, probs, offsets }, &[qkv])
    }

    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = Mat::zeros(index.len(), c);
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xv.row(i));
        }
        self.push(out, Op::GatherRows { x, index }, &[x])
    }

    /// Mean of the rows of each segment, one output row per segment.
    pub fn segment_mean(&mut self, x: Var, segments: Rc<[Segment]>) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = Mat::zeros(segments.len(), c);
        for (si, seg) in segments.iter().enumerate() {
            let o = out.row_mut(si);
            for r in seg.start..seg.start + seg.len {
                for (ov, xv) in o.iter_mut().zip(xv.row(r)) {
                    *ov += xv;
                }
            }
            let inv = 1.0 / seg.len as f64;
            o.iter_mut().for_each(|v| *v *= inv);
        }
        self.push(out, Op::SegmentMean { x, segments }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Mat::zeros(n, total);
        for i in 0..n {
            let mut off = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                let v = self.value(p);
                assert_eq!(v.rows(), n, "concat_cols row mismatch");
                out.row_mut(i)[off..off + w].copy_from_slice(v.row(i));
                off += w;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Per-row mixture negative log-likelihood, `n × 1`.
    pub fn gmm_nll(&mut self, raw: Var, layout: GmmLayout, targets: &Mat) -> Var {
        let rv = self.value(raw);
        let (n, w) = rv.shape();
        assert_eq!(w, layout.raw_width(), "raw width does not match mixture layout");
        assert_eq!(targets.shape(), (n, layout.dim), "target shape mismatch");
        let mut dnll = Mat::zeros(n, w);
        let mut out = Mat::zeros(n, 1);
        for i in 0..n {
            out.row_mut(i)[0] = gmm::nll_and_grad(rv.row(i), &layout, targets.row(i), dnll.row_mut(i));
        }
        self.push(out, Op::GmmNll { raw, dnll }, &[raw])
    }

    /// Per-row squared Euclidean error against a constant target, `n × 1`.
    pub fn squared_error(&mut self, pred: Var, target: &Mat) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "squared_error shape mismatch");
        let mut out = Mat::zeros(pv.rows(), 1);
        for i in 0..pv.rows() {
            out.row_mut(i)[0] = pv.row(i).iter().zip(target.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
        self.push(out, Op::SquaredError { pred, target: target.clone() }, &[pred])
    }

    /// Mean of every element, as a `1×1` scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.data().len().max(1);
        let m = xv.data().iter().sum::<f64>() / n as f64;
        self.push(Mat::scalar(m), Op::Mean(x), &[x])
    }

    /// Sum of scalars.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let s = xs.iter().map(|&x| self.value(x).item()).sum();
        self.push(Mat::scalar(s), Op::Sum(xs.to_vec()), xs)
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Mat::scalar(1.0));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match &mut out.grads[id.index()] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (n, k) = self.value(*a).shape();
                    let m = self.value(*b).cols();
                    if self.requires_grad(*a) {
                        let buf = self.grad_buf(&mut grads, *a);
                        gemm(n, m, k, g.data(), false, self.value(*b).data(), true, 1.0, buf.data_mut());
                    }
                    if self.requires_grad(*b) {
                        let buf = self.grad_buf(&mut grads, *b);
                        gemm(k, n, m, self.value(*a).data(), true, g.data(), false, 1.0, buf.data_mut());
                    }
                }
                Op::AddRow(x, bias) => {
                    if self.requires_grad(*bias) {
                        let buf = self.grad_buf(&mut grads, *bias);
                        for i in 0..g.rows() {
                            for (b, gv) in buf.data_mut().iter_mut().zip(g.row(i)) {
                                *b += gv;
                            }
                        }
                    }
                    if self.requires_grad(*x) {
                        self.accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.requires_grad(*b) {
                        self.accumulate_ref(&mut grads, *b, &g);
                    }
                    if self.requires_grad(*a) {
                        self.accumulate(&mut grads, *a, g);
                    }
                }
                Op::Relu(x) => {
                    if self.requires_grad(*x) {
                        let mut gx = g;
                        let y = node.value.as_ref().expect("relu output");
                        for (gv, yv) in gx.data_mut().iter_mut().zip(y.data()) {
                            if *yv <= 0.0 {
                                *gv = 0.0;
                            }
                        }
                        self.accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Scale(x, k) => {
                    if self.requires_grad(*x) {
                        let mut gx = g;
                        gx.scale(*k);
                        self.accumulate(&mut grads, *x, gx);
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let (n, c) = xhat.shape();
                    let gv = self.value(*gain).data().to_vec();
                    if self.requires_grad(*gain) {
                        let buf = self.grad_buf(&mut grads, *gain);
                        for i in 0..n {
                            for j in 0..c {
                                buf.data_mut()[j] += g.row(i)[j] * xhat.row(i)[j];
                            }
                        }
                    }
                    if self.requires_grad(*bias) {
                        let buf = self.grad_buf(&mut grads, *bias);
                        for i in 0..n {
                            for (b, gv) in buf.data_mut().iter_mut().zip(g.row(i)) {
                                *b += gv;
                            }
                        }
                    }
                    if self.requires_grad(*x) {
                        let mut gx = Mat::zeros(n, c);
                        let mut dxhat = vec![0.0; c];
                        for i in 0..n {
                            let gr = g.row(i);
                            let xh = xhat.row(i);
                            for j in 0..c {
                                dxhat[j] = gr[j] * gv[j];
                            }
                            let mean_d = dxhat.iter().sum::<f64>() / c as f64;
                            let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                            let o = gx.row_mut(i);
                            for j in 0..c {
                                o[j] = inv_std[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                            }
                        }
                        self.accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Attention { qkv, heads, segments, causal, probs, offsets } => {
                    if self.requires_grad(*qkv) {
                        let gx = self.attention_backward(*qkv, *heads, segments, *causal, probs, offsets, &g);
                        self.accumulate(&mut grads, *qkv, gx);
                    }
                }
                Op::GatherRows { x, index } => {
                    if self.requires_grad(*x) {
                        let buf = self.grad_buf(&mut grads, *x);
                        for (r, &i) in index.iter().enumerate() {
                            for (b, gv) in buf.row_mut(i).iter_mut().zip(g.row(r)) {
                                *b += gv;
                            }
                        }
                    }
                }
                Op::SegmentMean { x, segments } => {
                    if self.requires_grad(*x) {
                        let buf = self.grad_buf(&mut grads, *x);
                        for (si, seg) in segments.iter().enumerate() {
                            let inv = 1.0 / seg.len as f64;
                            for r in seg.start..seg.start + seg.len {
                                for (b, gv) in buf.row_mut(r).iter_mut().zip(g.row(si)) {
                                    *b += gv * inv;
                                }
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.requires_grad(p) {
                            let buf = self.grad_buf(&mut grads, p);
                            for i in 0..g.rows() {
                                for (b, gv) in buf.row_mut(i).iter_mut().zip(&g.row(i)[off..off + w]) {
                                    *b += gv;
                                }
                            }
                        }
                        off += w;
                    }
                }
                Op::GmmNll { raw, dnll } => {
                    if self.requires_grad(*raw) {
                        let mut gx = dnll.clone();
                        for i in 0..gx.rows() {
                            let up = g.row(i)[0];
                            gx.row_mut(i).iter_mut().for_each(|v| *v *= up);
                        }
                        self.accumulate(&mut grads, *raw, gx);
                    }
                }
                Op::SquaredError { pred, target } => {
                    if self.requires_grad(*pred) {
                        let pv = self.value(*pred);
                        let mut gx = Mat::zeros(pv.rows(), pv.cols());
                        for i in 0..pv.rows() {
                            let up = g.row(i)[0];
                            for ((o, p), t) in gx.row_mut(i).iter_mut().zip(pv.row(i)).zip(target.row(i)) {
                                *o = 2.0 * (p - t) * up;
                            }
                        }
                        self.accumulate(&mut grads, *pred, gx);
                    }
                }
                Op::Mean(x) => {
                    if self.requires_grad(*x) {
                        let (r, c) = self.value(*x).shape();
                        let v = g.item() / (r * c).max(1) as f64;
                        self.accumulate(&mut grads, *x, Mat::from_vec(r, c, vec![v; r * c]));
                    }
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        if self.requires_grad(x) {
                            self.accumulate_ref(&mut grads, x, &g);
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        qkv: Var,
        heads: usize,
        segments: &[Segment],
        causal: bool,
        probs: &[f64],
        offsets: &[usize],
        g: &Mat,
    ) -> Mat {
        let qv = self.value(qkv);
        let (n, w) = qv.shape();
        let d = w / 3;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gx = Mat::zeros(n, w);
        let mut dp = Vec::new();
        for (si, seg) in segments.iter().enumerate() {
            let len = seg.len;
            for h in 0..heads {
                let base = offsets[si] + h * len * len;
                for i in 0..len {
                    let jmax = if causal { i + 1 } else { len };
                    let p = &probs[base + i * len..base + i * len + jmax];
                    let dout = &g.row(seg.start + i)[h * dh..(h + 1) * dh];
                    dp.clear();
                    for j in 0..jmax {
                        let v = &qv.row(seg.start + j)[2 * d + h * dh..2 * d + (h + 1) * dh];
                        dp.push(dot(dout, v));
                        let gv = &mut gx.row_mut(seg.start + j)[2 * d + h * dh..2 * d + (h + 1) * dh];
                        for (a, b) in gv.iter_mut().zip(dout) {
                            *a += p[j] * b;
                        }
                    }
                    let s: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    let q: Vec<f64> = qv.row(seg.start + i)[h * dh..(h + 1) * dh].to_vec();
                    let mut dq = vec![0.0; dh];
                    for j in 0..jmax {
                        let ds = p[j] * (dp[j] - s) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let k = &qv.row(seg.start + j)[d + h * dh..d + (h + 1) * dh];
                        for (a, b) in dq.iter_mut().zip(k) {
                            *a += ds * b;
                        }
                        let gk = &mut gx.row_mut(seg.start + j)[d + h * dh..d + (h + 1) * dh];
                        for (a, b) in gk.iter_mut().zip(&q) {
                            *a += ds * b;
                        }
                    }
                    let gq = &mut gx.row_mut(seg.start + i)[h * dh..(h + 1) * dh];
                    for (a, b) in gq.iter_mut().zip(&dq) {
                        *a += b;
                    }
                }
            }
        }
        gx
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Mat>], v: Var) -> &'g mut Mat {
        let (r, c) = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Mat::zeros(r, c))
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_ref(&self, grads: &mut [Option<Mat>], v: Var, g: &Mat) {
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
