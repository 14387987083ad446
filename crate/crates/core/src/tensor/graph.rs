//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only record of executed operations. Each method
//! runs the forward computation immediately, pushes a node holding the result
//! plus whatever context its gradient rule needs, and returns a [`TensorId`].
//! Construction order is topological by definition, so [`Graph::backward`]
//! is a single reverse sweep that visits each operation exactly once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor stored in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// Running batch-norm statistics, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    /// Fresh statistics: mean 0, variance 1.
    pub fn new(channels: usize) -> Self {
        BnStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Relu { x: usize },
    Sigmoid { x: usize },
    Softmax { x: usize },
    Conv2d { x: usize, w: usize, stride: usize, pad: usize, cols: Option<Vec<f64>> },
    MaxPool2d { x: usize, argmax: Option<Vec<usize>> },
    GlobalAvgPool { x: usize },
    Dense { x: usize, w: usize, b: usize },
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    ConcatChannels { a: usize, b: usize },
    SliceChannels { x: usize, start: usize, len: usize },
    ScaleChannels { x: usize, z: usize },
    CrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
    SumAll { x: usize },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Reverse-mode autodiff tape over dense f64 tensors.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf tensor (input or parameter).
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> TensorId {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Inserts a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient populated by the last [`Graph::backward`] call, if this
    /// tensor required one and was on a path to the loss.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push(Node { value, requires_grad, grad: None, op });
        TensorId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    // ---- elementwise ----

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Dim(format!(
                "add: shape {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor { shape: ta.shape().to_vec(), data };
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(value, rg, Op::Add { a: a.0, b: b.0 }))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Dim(format!(
                "mul: shape {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor { shape: ta.shape().to_vec(), data };
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(value, rg, Op::Mul { a: a.0, b: b.0 }))
    }

    /// `max(0, x)` elementwise. The gradient at exactly 0 is 0.
    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let data: Vec<f64> = tx.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor { shape: tx.shape().to_vec(), data };
        let rg = self.needs_grad(&[x.0]);
        Ok(self.push(value, rg, Op::Relu { x: x.0 }))
    }

    /// Logistic sigmoid, computed without overflow for large |x|.
    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let data: Vec<f64> = tx.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let value = Tensor { shape: tx.shape().to_vec(), data };
        let rg = self.needs_grad(&[x.0]);
        Ok(self.push(value, rg, Op::Sigmoid { x: x.0 }))
    }

    /// Row-wise softmax over the class axis of `x[n, classes]`, computed with
    /// max subtraction.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let (n, c) = tx.dims2()?;
        let mut data = vec![0.0; n * c];
        kernels::softmax_rows(tx.data(), n, c, &mut data);
        let value = Tensor { shape: vec![n, c], data };
        let rg = self.needs_grad(&[x.0]);
        Ok(self.push(value, rg, Op::Softmax { x: x.0 }))
    }

    // ---- convolution and pooling ----

    /// 2-D cross-correlation (no kernel flip) with zero padding.
    ///
    /// `x[n,c,h,w]` against `w[k,c,kh,kw]`, producing
    /// `[n, k, (h+2p-kh)/s+1, (w+2p-kw)/s+1]`.
    pub fn conv2d(&mut self, x: TensorId, w: TensorId, stride: usize, pad: usize) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let tw = &self.nodes[w.0].value;
        let (n, c, h, wd) = tx.dims4()?;
        let (k, cw, kh, kw) = tw.dims4()?;
        if c != cw {
            return Err(Error::Dim(format!(
                "conv2d: input has {c} channels but kernel expects {cw}"
            )));
        }
        if stride < 1 {
            return Err(Error::Dim("conv2d: stride must be >= 1".into()));
        }
        let oh = kernels::conv_out_dim(h, pad, kh, stride)
            .ok_or_else(|| Error::Dim(format!("conv2d: kernel {kh} exceeds padded height {}", h + 2 * pad)))?;
        let ow = kernels::conv_out_dim(wd, pad, kw, stride)
            .ok_or_else(|| Error::Dim(format!("conv2d: kernel {kw} exceeds padded width {}", wd + 2 * pad)))?;

        let p = c * kh * kw;
        let t = oh * ow;
        let save = self.needs_grad(&[x.0, w.0]);
        let mut cols_all = if save { vec![0.0; n * p * t] } else { vec![0.0; p * t] };
        let mut out = vec![0.0; n * k * t];
        for ni in 0..n {
            let cols = if save {
                &mut cols_all[ni * p * t..(ni + 1) * p * t]
            } else {
                &mut cols_all[..]
            };
            kernels::im2col(
                &tx.data()[ni * c * h * wd..(ni + 1) * c * h * wd],
                c, h, wd, kh, kw, stride, pad, oh, ow, cols,
            );
            kernels::matmul(tw.data(), k, p, cols, t, &mut out[ni * k * t..(ni + 1) * k * t]);
        }
        let value = Tensor { shape: vec![n, k, oh, ow], data: out };
        let op = Op::Conv2d { x: x.0, w: w.0, stride, pad, cols: save.then_some(cols_all) };
        Ok(self.push(value, save, op))
    }

    /// Max pooling with a square `k` window; no padding. Gradient routes to
    /// the first maximal element of each window in row-major scan order.
    pub fn maxpool2d(&mut self, x: TensorId, k: usize, stride: usize) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let (n, c, h, w) = tx.dims4()?;
        if stride < 1 {
            return Err(Error::Dim("maxpool2d: stride must be >= 1".into()));
        }
        let oh = kernels::conv_out_dim(h, 0, k, stride)
            .ok_or_else(|| Error::Dim(format!("maxpool2d: window {k} exceeds height {h}")))?;
        let ow = kernels::conv_out_dim(w, 0, k, stride)
            .ok_or_else(|| Error::Dim(format!("maxpool2d: window {k} exceeds width {w}")))?;
        let save = self.needs_grad(&[x.0]);
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = if save { vec![0usize; n * c * oh * ow] } else { Vec::new() };
        let data = tx.data();
        for ni in 0..n {
            for ci in 0..c {
                let plane = (ni * c + ci) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ky in 0..k {
                            for kx in 0..k {
                                let idx = plane + (oy * stride + ky) * w + (ox * stride + kx);
                                let v = data[idx];
                                if v > best {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = ((ni * c + ci) * oh + oy) * ow + ox;
                        out[o] = best;
                        if save {
                            argmax[o] = best_idx;
                        }
                    }
                }
            }
        }
        let value = Tensor { shape: vec![n, c, oh, ow], data: out };
        let op = Op::MaxPool2d { x: x.0, argmax: save.then_some(argmax) };
        Ok(self.push(value, save, op))
    }

    /// Spatial mean per channel: `[n,c,h,w] -> [n,c]`.
    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let (n, c, h, w) = tx.dims4()?;
        let hw = (h * w) as f64;
        let mut out = vec![0.0; n * c];
        for (i, o) in out.iter_mut().enumerate() {
            let plane = &tx.data()[i * h * w..(i + 1) * h * w];
            let mut s = 0.0;
            for &v in plane {
                s += v;
            }
            *o = s / hw;
        }
        let value = Tensor { shape: vec![n, c], data: out };
        let rg = self.needs_grad(&[x.0]);
        Ok(self.push(value, rg, Op::GlobalAvgPool { x: x.0 }))
    }

    // ---- linear ----

    /// Fully connected layer: `x[n,d] * w[d,m] + b[m]`.
    pub fn dense(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let tw = &self.nodes[w.0].value;
        let tb = &self.nodes[b.0].value;
        let (n, d) = tx.dims2()?;
        let (dw, m) = tw.dims2()?;
        if d != dw {
            return Err(Error::Dim(format!("dense: inner dims {d} vs {dw}")));
        }
        if tb.shape() != [m] {
            return Err(Error::Dim(format!(
                "dense: bias shape {:?} does not match output width {m}",
                tb.shape()
            )));
        }
        let mut out = vec![0.0; n * m];
        kernels::matmul(tx.data(), n, d, tw.data(), m, &mut out);
        for row in out.chunks_exact_mut(m) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let value = Tensor { shape: vec![n, m], data: out };
        let rg = self.needs_grad(&[x.0, w.0, b.0]);
        Ok(self.push(value, rg, Op::Dense { x: x.0, w: w.0, b: b.0 }))
    }

    // ---- normalization ----

    /// Batch normalization in training mode: per-channel standardization by
    /// batch moments (biased variance), then `gamma * xhat + beta`. Updates
    /// `stats` in place with `momentum`-weighted running moments.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_train(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
        stats: &mut BnStats,
        momentum: f64,
    ) -> Result<TensorId> {
        let (n, c, h, w) = self.nodes[x.0].value.dims4()?;
        if n * h * w < 2 {
            return Err(Error::Input(format!(
                "batch_norm: training mode needs at least 2 values per channel, got {}",
                n * h * w
            )));
        }
        if stats.mean.len() != c {
            return Err(Error::Dim(format!(
                "batch_norm: stats track {} channels, input has {c}",
                stats.mean.len()
            )));
        }
        let (mean, var) = kernels::channel_moments(self.nodes[x.0].value.data(), n, c, h * w);
        for ci in 0..c {
            stats.mean[ci] = (1.0 - momentum) * stats.mean[ci] + momentum * mean[ci];
            stats.var[ci] = (1.0 - momentum) * stats.var[ci] + momentum * var[ci];
        }
        self.batch_norm_with(x, gamma, beta, eps, &mean, &var, true)
    }

    /// Batch normalization in inference mode, standardizing by the running
    /// statistics captured during training.
    pub fn batch_norm_eval(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
        stats: &BnStats,
    ) -> Result<TensorId> {
        let (_, c, _, _) = self.nodes[x.0].value.dims4()?;
        if stats.mean.len() != c {
            return Err(Error::Dim(format!(
                "batch_norm: stats track {} channels, input has {c}",
                stats.mean.len()
            )));
        }
        let mean = stats.mean.clone();
        let var = stats.var.clone();
        self.batch_norm_with(x, gamma, beta, eps, &mean, &var, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_norm_with(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
        mean: &[f64],
        var: &[f64],
        train: bool,
    ) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let (n, c, h, w) = tx.dims4()?;
        let tg = &self.nodes[gamma.0].value;
        let tb = &self.nodes[beta.0].value;
        if tg.shape() != [c] || tb.shape() != [c] {
            return Err(Error::Dim(format!(
                "batch_norm: gamma {:?} / beta {:?} must both be [{c}]",
                tg.shape(),
                tb.shape()
            )));
        }
        let hw = h * w;
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / libm::sqrt(v + eps)).collect();
        let mut xhat = vec![0.0; n * c * hw];
        let mut out = vec![0.0; n * c * hw];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                let (m, istd) = (mean[ci], inv_std[ci]);
                let (g, b) = (tg.data()[ci], tb.data()[ci]);
                for s in 0..hw {
                    let xh = (tx.data()[base + s] - m) * istd;
                    xhat[base + s] = xh;
                    out[base + s] = g * xh + b;
                }
            }
        }
        let value = Tensor { shape: vec![n, c, h, w], data: out };
        let rg = self.needs_grad(&[x.0, gamma.0, beta.0]);
        let op = Op::BatchNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std, train };
        Ok(self.push(value, rg, op))
    }

    // ---- channel layout ----

    /// Stacks `b`'s channels after `a`'s: `[n,ca,h,w] ++ [n,cb,h,w]`.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let (n, ca, h, w) = ta.dims4()?;
        let (nb, cb, hb, wb) = tb.dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::Dim(format!(
                "concat_channels: {:?} and {:?} differ outside the channel axis",
                ta.shape(),
                tb.shape()
            )));
        }
        let hw = h * w;
        let mut out = vec![0.0; n * (ca + cb) * hw];
        for ni in 0..n {
            let dst = &mut out[ni * (ca + cb) * hw..];
            dst[..ca * hw].copy_from_slice(&ta.data()[ni * ca * hw..(ni + 1) * ca * hw]);
            dst[ca * hw..(ca + cb) * hw].copy_from_slice(&tb.data()[ni * cb * hw..(ni + 1) * cb * hw]);
        }
        let value = Tensor { shape: vec![n, ca + cb, h, w], data: out };
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(value, rg, Op::ConcatChannels { a: a.0, b: b.0 }))
    }

    /// Contiguous channel slice `x[:, start..start+len, :, :]`.
    pub fn slice_channels(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let (n, c, h, w) = tx.dims4()?;
        if start + len > c {
            return Err(Error::Dim(format!(
                "slice_channels: [{start}, {}) out of {c} channels",
                start + len
            )));
        }
        let hw = h * w;
        let mut out = vec![0.0; n * len * hw];
        for ni in 0..n {
            let src = &tx.data()[(ni * c + start) * hw..(ni * c + start + len) * hw];
            out[ni * len * hw..(ni + 1) * len * hw].copy_from_slice(src);
        }
        let value = Tensor { shape: vec![n, len, h, w], data: out };
        let rg = self.needs_grad(&[x.0]);
        Ok(self.push(value, rg, Op::SliceChannels { x: x.0, start, len }))
    }

    /// Rescales each channel plane by a per-(sample, channel) scalar:
    /// `out[n,c,:,:] = z[n,c] * x[n,c,:,:]`.
    pub fn scale_channels(&mut self, x: TensorId, z: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let tz = &self.nodes[z.0].value;
        let (n, c, h, w) = tx.dims4()?;
        if tz.shape() != [n, c] {
            return Err(Error::Dim(format!(
                "scale_channels: gate shape {:?} does not match [{n}, {c}]",
                tz.shape()
            )));
        }
        let hw = h * w;
        let mut out = vec![0.0; n * c * hw];
        for i in 0..n * c {
            let zv = tz.data()[i];
            let src = &tx.data()[i * hw..(i + 1) * hw];
            let dst = &mut out[i * hw..(i + 1) * hw];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = zv * s;
            }
        }
        let value = Tensor { shape: vec![n, c, h, w], data: out };
        let rg = self.needs_grad(&[x.0, z.0]);
        Ok(self.push(value, rg, Op::ScaleChannels { x: x.0, z: z.0 }))
    }

    // ---- loss and reductions ----

    /// Mean over the batch of `-log softmax(logits)[label]`, with a fused
    /// log-sum-exp for stability. Returns a scalar (shape `[1]`).
    pub fn cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let tl = &self.nodes[logits.0].value;
        let (n, c) = tl.dims2()?;
        if labels.len() != n {
            return Err(Error::Input(format!(
                "cross_entropy: {} labels for batch of {n}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Input(format!("cross_entropy: label {bad} out of range [0, {c})")));
        }
        let mut probs = vec![0.0; n * c];
        kernels::softmax_rows(tl.data(), n, c, &mut probs);
        let mut total = 0.0;
        for (i, &lbl) in labels.iter().enumerate() {
            let row = &tl.data()[i * c..(i + 1) * c];
            total += kernels::logsumexp(row) - row[lbl];
        }
        let value = Tensor::scalar(total / n as f64);
        let rg = self.needs_grad(&[logits.0]);
        let op = Op::CrossEntropy { logits: logits.0, labels: labels.to_vec(), probs };
        Ok(self.push(value, rg, op))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let mut s = 0.0;
        for &v in tx.data() {
            s += v;
        }
        let rg = self.needs_grad(&[x.0]);
        Ok(self.push(Tensor::scalar(s), rg, Op::SumAll { x: x.0 }))
    }

    // ---- backward ----

    /// Populates `grad` on every `requires_grad` tensor on a path to `loss`.
    ///
    /// `loss` must be a scalar. Gradients from a previous call are replaced.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in self.nodes.iter_mut() {
            node.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(gout) = grads[idx].take() else { continue };
            self.backprop_node(idx, &gout, &mut grads);
            self.nodes[idx].grad = Some(gout);
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let numel = |i: usize| self.nodes[i].value.numel();
        // Accumulation slot for a parent, allocated on first touch.
        macro_rules! slot {
            ($i:expr) => {
                grads[$i].get_or_insert_with(|| vec![0.0; numel($i)])
            };
        }
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                if self.nodes[*a].requires_grad {
                    let g = slot!(*a);
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                }
                if self.nodes[*b].requires_grad {
                    let g = slot!(*b);
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.nodes[*a].requires_grad {
                    let bd = self.nodes[*b].value.data();
                    let g = slot!(*a);
                    for ((gi, &go), &bv) in g.iter_mut().zip(gout).zip(bd) {
                        *gi += go * bv;
                    }
                }
                if self.nodes[*b].requires_grad {
                    let ad = self.nodes[*a].value.data();
                    let g = slot!(*b);
                    for ((gi, &go), &av) in g.iter_mut().zip(gout).zip(ad) {
                        *gi += go * av;
                    }
                }
            }
            Op::Relu { x } => {
                if self.nodes[*x].requires_grad {
                    let xd = self.nodes[*x].value.data();
                    let g = slot!(*x);
                    for ((gi, &go), &xv) in g.iter_mut().zip(gout).zip(xd) {
                        if xv > 0.0 {
                            *gi += go;
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                if self.nodes[*x].requires_grad {
                    let yd = self.nodes[idx].value.data();
                    let g = slot!(*x);
                    for ((gi, &go), &y) in g.iter_mut().zip(gout).zip(yd) {
                        *gi += go * y * (1.0 - y);
                    }
                }
            }
            Op::Softmax { x } => {
                if self.nodes[*x].requires_grad {
                    let y = self.nodes[idx].value.data();
                    let c = self.nodes[idx].value.dim(1);
                    let g = slot!(*x);
                    for r in 0..y.len() / c {
                        let yr = &y[r * c..(r + 1) * c];
                        let gor = &gout[r * c..(r + 1) * c];
                        let mut dot = 0.0;
                        for (&go, &yv) in gor.iter().zip(yr) {
                            dot += go * yv;
                        }
                        let gr = &mut g[r * c..(r + 1) * c];
                        for ((gi, &go), &yv) in gr.iter_mut().zip(gor).zip(yr) {
                            *gi += yv * (go - dot);
                        }
                    }
                }
            }
            Op::Conv2d { x, w, stride, pad, cols } => {
                let cols = cols.as_ref().expect("conv2d recorded without saved columns");
                let tx = &self.nodes[*x].value;
                let tw = &self.nodes[*w].value;
                let (n, c, h, wd) = (tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3));
                let (k, _, kh, kw) = (tw.dim(0), tw.dim(1), tw.dim(2), tw.dim(3));
                let (oh, ow) = (self.nodes[idx].value.dim(2), self.nodes[idx].value.dim(3));
                let p = c * kh * kw;
                let t = oh * ow;
                let want_dx = self.nodes[*x].requires_grad;
                let want_dw = self.nodes[*w].requires_grad;
                let mut dcols = if want_dx { vec![0.0; p * t] } else { Vec::new() };
                for ni in 0..n {
                    let go_n = &gout[ni * k * t..(ni + 1) * k * t];
                    let cols_n = &cols[ni * p * t..(ni + 1) * p * t];
                    if want_dw {
                        let dw = slot!(*w);
                        kernels::matmul_abt_acc(go_n, k, t, cols_n, p, dw);
                    }
                    if want_dx {
                        dcols.fill(0.0);
                        kernels::matmul_tn_acc(tw.data(), k, p, go_n, t, &mut dcols);
                        let dx = slot!(*x);
                        kernels::col2im_acc(
                            &dcols,
                            c, h, wd, kh, kw, *stride, *pad, oh, ow,
                            &mut dx[ni * c * h * wd..(ni + 1) * c * h * wd],
                        );
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if self.nodes[*x].requires_grad {
                    let argmax = argmax.as_ref().expect("maxpool2d recorded without argmax");
                    let g = slot!(*x);
                    for (&src, &go) in argmax.iter().zip(gout) {
                        g[src] += go;
                    }
                }
            }
            Op::GlobalAvgPool { x } => {
                if self.nodes[*x].requires_grad {
                    let tx = &self.nodes[*x].value;
                    let hw = tx.dim(2) * tx.dim(3);
                    let scale = 1.0 / hw as f64;
                    let g = slot!(*x);
                    for (i, &go) in gout.iter().enumerate() {
                        let gs = go * scale;
                        for gv in &mut g[i * hw..(i + 1) * hw] {
                            *gv += gs;
                        }
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let tx = &self.nodes[*x].value;
                let tw = &self.nodes[*w].value;
                let (n, d) = (tx.dim(0), tx.dim(1));
                let m = tw.dim(1);
                if self.nodes[*x].requires_grad {
                    let dx = slot!(*x);
                    kernels::matmul_abt_acc(gout, n, m, tw.data(), d, dx);
                }
                if self.nodes[*w].requires_grad {
                    let dw = slot!(*w);
                    kernels::matmul_tn_acc(tx.data(), n, d, gout, m, dw);
                }
                if self.nodes[*b].requires_grad {
                    let db = slot!(*b);
                    for row in gout.chunks_exact(m) {
                        for (g, &go) in db.iter_mut().zip(row) {
                            *g += go;
                        }
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let tx = &self.nodes[*x].value;
                let (n, c, h, w) = (tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3));
                let hw = h * w;
                let m = (n * hw) as f64;
                let gdata = self.nodes[*gamma].value.data();
                if self.nodes[*x].requires_grad {
                    if *train {
                        // Batch moments depend on x: per-channel sums of
                        // dxhat and dxhat*xhat feed the full formula.
                        let mut sum_dxh = vec![0.0; c];
                        let mut sum_dxh_xh = vec![0.0; c];
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * hw;
                                let gch = gdata[ci];
                                for s in 0..hw {
                                    let dxh = gout[base + s] * gch;
                                    sum_dxh[ci] += dxh;
                                    sum_dxh_xh[ci] += dxh * xhat[base + s];
                                }
                            }
                        }
                        let g = slot!(*x);
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * hw;
                                let gch = gdata[ci];
                                let istd = inv_std[ci];
                                for s in 0..hw {
                                    let dxh = gout[base + s] * gch;
                                    g[base + s] += istd / m
                                        * (m * dxh - sum_dxh[ci] - xhat[base + s] * sum_dxh_xh[ci]);
                                }
                            }
                        }
                    } else {
                        // Running moments are constants.
                        let g = slot!(*x);
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * hw;
                                let scale = gdata[ci] * inv_std[ci];
                                for s in 0..hw {
                                    g[base + s] += gout[base + s] * scale;
                                }
                            }
                        }
                    }
                }
                if self.nodes[*gamma].requires_grad {
                    let g = slot!(*gamma);
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            let mut s = 0.0;
                            for i in 0..hw {
                                s += gout[base + i] * xhat[base + i];
                            }
                            g[ci] += s;
                        }
                    }
                }
                if self.nodes[*beta].requires_grad {
                    let g = slot!(*beta);
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            let mut s = 0.0;
                            for i in 0..hw {
                                s += gout[base + i];
                            }
                            g[ci] += s;
                        }
                    }
                }
            }
            Op::ConcatChannels { a, b } => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let (n, ca, h, w) = (ta.dim(0), ta.dim(1), ta.dim(2), ta.dim(3));
                let cb = tb.dim(1);
                let hw = h * w;
                if self.nodes[*a].requires_grad {
                    let g = slot!(*a);
                    for ni in 0..n {
                        let src = &gout[ni * (ca + cb) * hw..][..ca * hw];
                        let dst = &mut g[ni * ca * hw..(ni + 1) * ca * hw];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if self.nodes[*b].requires_grad {
                    let g = slot!(*b);
                    for ni in 0..n {
                        let src = &gout[ni * (ca + cb) * hw + ca * hw..][..cb * hw];
                        let dst = &mut g[ni * cb * hw..(ni + 1) * cb * hw];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::SliceChannels { x, start, len } => {
                if self.nodes[*x].requires_grad {
                    let c = self.nodes[*x].value.dim(1);
                    let tx = &self.nodes[*x].value;
                    let (n, h, w) = (tx.dim(0), tx.dim(2), tx.dim(3));
                    let hw = h * w;
                    let g = slot!(*x);
                    for ni in 0..n {
                        let src = &gout[ni * len * hw..(ni + 1) * len * hw];
                        let dst = &mut g[(ni * c + start) * hw..(ni * c + start + len) * hw];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::ScaleChannels { x, z } => {
                let tx = &self.nodes[*x].value;
                let hw = tx.dim(2) * tx.dim(3);
                let nc = tx.dim(0) * tx.dim(1);
                if self.nodes[*x].requires_grad {
                    let zd = self.nodes[*z].value.data();
                    let g = slot!(*x);
                    for i in 0..nc {
                        let zv = zd[i];
                        let go = &gout[i * hw..(i + 1) * hw];
                        let gd = &mut g[i * hw..(i + 1) * hw];
                        for (d, &s) in gd.iter_mut().zip(go) {
                            *d += s * zv;
                        }
                    }
                }
                if self.nodes[*z].requires_grad {
                    let xd = tx.data();
                    let g = slot!(*z);
                    for i in 0..nc {
                        let go = &gout[i * hw..(i + 1) * hw];
                        let xr = &xd[i * hw..(i + 1) * hw];
                        let mut s = 0.0;
                        for (&gv, &xv) in go.iter().zip(xr) {
                            s += gv * xv;
                        }
                        g[i] += s;
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if self.nodes[*logits].requires_grad {
                    let n = labels.len();
                    let c = probs.len() / n;
                    let scale = gout[0] / n as f64;
                    let g = slot!(*logits);
                    for (i, &lbl) in labels.iter().enumerate() {
                        for ci in 0..c {
                            let onehot = if ci == lbl { 1.0 } else { 0.0 };
                            g[i * c + ci] += scale * (probs[i * c + ci] - onehot);
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if self.nodes[*x].requires_grad {
                    let g = slot!(*x);
                    for gv in g.iter_mut() {
                        *gv += gout[0];
                    }
                }
            }
        }
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
