//! Dual-path classifier with optional squeeze-excitation channel attention.
//!
//! The network is a stem (7x7 stride-2 convolution, 3x3 stride-2 max pool)
//! followed by four stages of dual-path substages, a global average pool,
//! and a fully connected head. Each substage runs a 1x1 -> 3x3 -> 1x1
//! bottleneck producing `residual_width + dense_increment` channels: the
//! first `residual_width` are added to the input's residual slice, the rest
//! are appended to its dense slice. The first substage of a stage projects
//! the incoming features to `residual_width` channels (stride 2 when the
//! stage downsamples) and restarts the dense path. When enabled, a
//! squeeze-excitation gate (global pool, two-layer bottleneck ending in a
//! sigmoid, per-channel rescale) follows every substage output.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_INIT};
use crate::tensor::kernels::conv_out_dim;
use crate::tensor::{BnStats, Graph, Tensor, TensorId};

pub const STEM_KERNEL: usize = 7;
pub const STEM_STRIDE: usize = 2;
pub const STEM_PAD: usize = 3;
pub const STEM_POOL_KERNEL: usize = 3;
pub const STEM_POOL_STRIDE: usize = 2;

/// One stage: a run of substages at a single spatial resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageConfig {
    pub substages: usize,
    /// Channels of the residual path (C_r).
    pub residual_width: usize,
    /// New channels appended to the dense path by each substage (k).
    pub dense_increment: usize,
    /// Width of the bottleneck 3x3 convolution.
    pub bottleneck_width: usize,
    /// Stride of the first substage: 1 or 2.
    pub stride: usize,
}

/// Full architectural description of a DPN / DPN-SE classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DpnSeConfig {
    pub input_channels: usize,
    /// Side of the square input.
    pub input_size: usize,
    pub stem_channels: usize,
    pub stages: Vec<StageConfig>,
    pub se_enabled: bool,
    pub se_reduction: usize,
    pub num_classes: usize,
    /// Batch norm after every convolution.
    pub batch_norm: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl DpnSeConfig {
    /// Small configuration for 64x64 grayscale inputs; trains in seconds on
    /// a CPU.
    pub fn toy() -> Self {
        DpnSeConfig {
            input_channels: 1,
            input_size: 64,
            stem_channels: 8,
            stages: vec![
                StageConfig { substages: 1, residual_width: 8, dense_increment: 4, bottleneck_width: 8, stride: 1 },
                StageConfig { substages: 1, residual_width: 16, dense_increment: 4, bottleneck_width: 8, stride: 2 },
                StageConfig { substages: 1, residual_width: 16, dense_increment: 4, bottleneck_width: 16, stride: 2 },
                StageConfig { substages: 1, residual_width: 32, dense_increment: 8, bottleneck_width: 16, stride: 2 },
            ],
            se_enabled: true,
            se_reduction: 4,
            num_classes: 4,
            batch_norm: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Preset mirroring the public 92-layer dual-path layout (substage
    /// counts 3/4/20/3), with plain instead of grouped 3x3 convolutions.
    pub fn dpn92(input_channels: usize, num_classes: usize) -> Self {
        DpnSeConfig {
            input_channels,
            input_size: 224,
            stem_channels: 64,
            stages: vec![
                StageConfig { substages: 3, residual_width: 256, dense_increment: 16, bottleneck_width: 96, stride: 1 },
                StageConfig { substages: 4, residual_width: 512, dense_increment: 32, bottleneck_width: 192, stride: 2 },
                StageConfig { substages: 20, residual_width: 1024, dense_increment: 24, bottleneck_width: 384, stride: 2 },
                StageConfig { substages: 3, residual_width: 2048, dense_increment: 128, bottleneck_width: 768, stride: 2 },
            ],
            se_enabled: true,
            se_reduction: 16,
            num_classes,
            batch_norm: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != 4 {
            return Err(Error::Config(format!("expected 4 stages, got {}", self.stages.len())));
        }
        if self.input_channels == 0 || self.input_size == 0 || self.stem_channels == 0 {
            return Err(Error::Config("input and stem dimensions must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.se_reduction < 1 {
            return Err(Error::Config("se_reduction must be >= 1".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_eps must be positive and bn_momentum in [0, 1]".into()));
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.substages == 0 {
                return Err(Error::Config(format!("stage {i}: needs at least one substage")));
            }
            if st.residual_width == 0 || st.bottleneck_width == 0 {
                return Err(Error::Config(format!("stage {i}: widths must be positive")));
            }
            if st.stride != 1 && st.stride != 2 {
                return Err(Error::Config(format!("stage {i}: stride must be 1 or 2, got {}", st.stride)));
            }
        }
        // Spatial survival down to the head.
        let mut s = conv_out_dim(self.input_size, STEM_PAD, STEM_KERNEL, STEM_STRIDE)
            .ok_or_else(|| Error::Config("input smaller than the stem kernel".into()))?;
        s = conv_out_dim(s, 0, STEM_POOL_KERNEL, STEM_POOL_STRIDE).ok_or_else(|| {
            Error::Config(format!("spatial size {s} collapses below the stem pool window"))
        })?;
        for (i, st) in self.stages.iter().enumerate() {
            s = conv_out_dim(s, 1, 3, st.stride).ok_or_else(|| {
                Error::Config(format!("stage {i}: spatial size collapses below 1"))
            })?;
        }
        Ok(())
    }

    /// Planned output channels after each substage, per stage: after
    /// substage `i` (0-based) the total is `residual_width + (i+1) * k`.
    pub fn channel_plan(&self) -> Vec<Vec<usize>> {
        self.stages
            .iter()
            .map(|st| {
                (1..=st.substages)
                    .map(|i| st.residual_width + i * st.dense_increment)
                    .collect()
            })
            .collect()
    }

    /// Channels entering the classifier head.
    pub fn head_channels(&self) -> usize {
        let last = self.stages.last().expect("validated config has 4 stages");
        last.residual_width + last.substages * last.dense_increment
    }
}

fn se_hidden(channels: usize, reduction: usize) -> usize {
    (channels / reduction).max(1)
}

/// Squeeze-excitation gate: squeeze `x[n,c,h,w]` to per-channel means,
/// excite through `w1 [c, hidden]` / `w2 [hidden, c]` with a relu between
/// and a sigmoid after, then reweight each channel of `x` by its gate.
pub fn se_block(
    g: &mut Graph,
    x: TensorId,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
) -> Result<TensorId> {
    let squeezed = g.global_avg_pool(x)?;
    let hidden = g.dense(squeezed, w1, b1)?;
    let hidden = g.relu(hidden)?;
    let gate = g.dense(hidden, w2, b2)?;
    let gate = g.sigmoid(gate)?;
    g.scale_channels(x, gate)
}

/// Squeeze-excitation parameters for a standalone gate over `channels`.
#[derive(Debug, Clone)]
pub struct SeParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl SeParams {
    pub fn init(channels: usize, reduction: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if reduction < 1 {
            return Err(Error::Config("se reduction must be >= 1".into()));
        }
        let hidden = se_hidden(channels, reduction);
        Ok(SeParams {
            w1: init_uniform(vec![channels, hidden], channels, rng),
            b1: Tensor::zeros(vec![hidden]),
            w2: init_uniform(vec![hidden, channels], hidden, rng),
            b2: Tensor::zeros(vec![channels]),
        })
    }

    pub fn zeros(channels: usize, reduction: usize) -> Self {
        let hidden = se_hidden(channels, reduction);
        SeParams {
            w1: Tensor::zeros(vec![channels, hidden]),
            b1: Tensor::zeros(vec![hidden]),
            w2: Tensor::zeros(vec![hidden, channels]),
            b2: Tensor::zeros(vec![channels]),
        }
    }

    /// Inserts the parameters into a graph and applies the gate to `x`.
    pub fn apply(&self, g: &mut Graph, x: TensorId, requires_grad: bool) -> Result<TensorId> {
        let w1 = g.leaf(self.w1.clone(), requires_grad);
        let b1 = g.leaf(self.b1.clone(), requires_grad);
        let w2 = g.leaf(self.w2.clone(), requires_grad);
        let b2 = g.leaf(self.b2.clone(), requires_grad);
        se_block(g, x, w1, b1, w2, b2)
    }
}

/// Fan-in-scaled uniform init: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
fn init_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = libm::sqrt(6.0 / fan_in as f64);
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape/data constructed together")
}

/// Output of one substage during a traced forward pass.
#[derive(Debug, Clone, Copy)]
pub struct SubstageRecord {
    pub stage: usize,
    pub substage: usize,
    /// Substage output (after the SE gate, when enabled).
    pub output: TensorId,
}

/// A built classifier: configuration, named parameters, and batch-norm
/// running statistics.
///
/// Training mutates the model (parameter updates, running statistics); a
/// finished model is immutable and safe to share across threads for
/// concurrent inference.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: DpnSeConfig,
    params: BTreeMap<String, Tensor>,
    bn: BTreeMap<String, BnStats>,
}

/// Expected parameter names and shapes for a config, in creation order.
fn expected_params(cfg: &DpnSeConfig) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let conv = |name: &str, k: usize, c: usize, kh: usize, kw: usize, out: &mut Vec<(String, Vec<usize>)>| {
        out.push((format!("{name}.w"), vec![k, c, kh, kw]));
    };
    let bn = |name: &str, c: usize, out: &mut Vec<(String, Vec<usize>)>| {
        if cfg.batch_norm {
            out.push((format!("{name}.gamma"), vec![c]));
            out.push((format!("{name}.beta"), vec![c]));
        }
    };
    conv("stem.conv", cfg.stem_channels, cfg.input_channels, STEM_KERNEL, STEM_KERNEL, &mut out);
    bn("stem.bn", cfg.stem_channels, &mut out);
    let mut in_c = cfg.stem_channels;
    for (si, st) in cfg.stages.iter().enumerate() {
        let (cr, k, bw) = (st.residual_width, st.dense_increment, st.bottleneck_width);
        for bi in 0..st.substages {
            let p = format!("s{si}.b{bi}");
            if bi == 0 {
                conv(&format!("{p}.proj"), cr, in_c, 1, 1, &mut out);
                bn(&format!("{p}.proj_bn"), cr, &mut out);
            }
            conv(&format!("{p}.conv1"), bw, in_c, 1, 1, &mut out);
            bn(&format!("{p}.bn1"), bw, &mut out);
            conv(&format!("{p}.conv2"), bw, bw, 3, 3, &mut out);
            bn(&format!("{p}.bn2"), bw, &mut out);
            conv(&format!("{p}.conv3"), cr + k, bw, 1, 1, &mut out);
            bn(&format!("{p}.bn3"), cr + k, &mut out);
            let out_c = cr + (bi + 1) * k;
            if cfg.se_enabled {
                let hidden = se_hidden(out_c, cfg.se_reduction);
                out.push((format!("{p}.se.w1"), vec![out_c, hidden]));
                out.push((format!("{p}.se.b1"), vec![hidden]));
                out.push((format!("{p}.se.w2"), vec![hidden, out_c]));
                out.push((format!("{p}.se.b2"), vec![out_c]));
            }
            in_c = out_c;
        }
    }
    out.push(("head.w".to_string(), vec![cfg.head_channels(), cfg.num_classes]));
    out.push(("head.b".to_string(), vec![cfg.num_classes]));
    out
}

/// Expected batch-norm stat keys and channel counts for a config.
fn expected_bn(cfg: &DpnSeConfig) -> Vec<(String, usize)> {
    if !cfg.batch_norm {
        return Vec::new();
    }
    let mut out = vec![("stem.bn".to_string(), cfg.stem_channels)];
    for (si, st) in cfg.stages.iter().enumerate() {
        let (cr, k, bw) = (st.residual_width, st.dense_increment, st.bottleneck_width);
        for bi in 0..st.substages {
            let p = format!("s{si}.b{bi}");
            if bi == 0 {
                out.push((format!("{p}.proj_bn"), cr));
            }
            out.push((format!("{p}.bn1"), bw));
            out.push((format!("{p}.bn2"), bw));
            out.push((format!("{p}.bn3"), cr + k));
        }
    }
    out
}

impl Model {
    /// Builds a model with fan-in-scaled uniform weights (batch-norm gamma 1,
    /// beta 0, biases 0), drawn deterministically from `seed`.
    pub fn new(cfg: DpnSeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, STREAM_INIT);
        let mut params = BTreeMap::new();
        for (name, shape) in expected_params(&cfg) {
            let tensor = if name.ends_with(".gamma") {
                Tensor::full(shape, 1.0)
            } else if name.ends_with(".beta") || name.ends_with(".b1") || name.ends_with(".b2")
                || name == "head.b"
            {
                Tensor::zeros(shape)
            } else {
                // Weight matrices: fan-in is the contraction length.
                let fan_in: usize = if shape.len() == 4 {
                    shape[1] * shape[2] * shape[3]
                } else {
                    shape[0]
                };
                init_uniform(shape, fan_in, &mut rng)
            };
            params.insert(name, tensor);
        }
        let bn = expected_bn(&cfg)
            .into_iter()
            .map(|(name, c)| (name, BnStats::new(c)))
            .collect();
        Ok(Model { cfg, params, bn })
    }

    /// Reassembles a model from deserialized parts, checking that every
    /// expected parameter and statistic is present with the right shape.
    pub fn from_parts(
        cfg: DpnSeConfig,
        params: BTreeMap<String, Tensor>,
        bn: BTreeMap<String, BnStats>,
    ) -> Result<Self> {
        cfg.validate()?;
        let expected = expected_params(&cfg);
        if params.len() != expected.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            match params.get(name) {
                None => return Err(Error::Config(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Config(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        t.shape(),
                        shape
                    )))
                }
                _ => {}
            }
        }
        let expected_stats = expected_bn(&cfg);
        if bn.len() != expected_stats.len() {
            return Err(Error::Config(format!(
                "expected {} batch-norm stats, got {}",
                expected_stats.len(),
                bn.len()
            )));
        }
        for (name, c) in &expected_stats {
            match bn.get(name) {
                None => return Err(Error::Config(format!("missing batch-norm stats {name}"))),
                Some(s) if s.mean.len() != *c || s.var.len() != *c => {
                    return Err(Error::Config(format!("batch-norm stats {name} track wrong width")))
                }
                _ => {}
            }
        }
        Ok(Model { cfg, params, bn })
    }

    pub fn config(&self) -> &DpnSeConfig {
        &self.cfg
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &BTreeMap<String, BnStats> {
        &self.bn
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    /// Total learnable scalar count.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let (_, c, h, w) = batch.dims4()?;
        if c != self.cfg.input_channels || h != self.cfg.input_size || w != self.cfg.input_size {
            return Err(Error::Input(format!(
                "input shape {:?} does not match configured {}x{}x{}",
                batch.shape(),
                self.cfg.input_channels,
                self.cfg.input_size,
                self.cfg.input_size
            )));
        }
        Ok(())
    }

    /// Training forward pass: parameters enter the graph with gradients
    /// enabled, batch norm uses batch statistics and updates the running
    /// buffers. Returns the logits plus the name -> leaf binding used to
    /// read gradients back out after `backward`.
    pub fn forward_train(
        &mut self,
        g: &mut Graph,
        batch: &Tensor,
    ) -> Result<(TensorId, BTreeMap<String, TensorId>)> {
        self.check_input(batch)?;
        let Model { cfg, params, bn } = self;
        let mut ctx = LayerCtx {
            g,
            params,
            bn: BnAccess::Train(bn),
            binding: BTreeMap::new(),
            cfg,
            requires_grad: true,
        };
        let (logits, _) = forward_impl(&mut ctx, batch)?;
        Ok((logits, ctx.binding))
    }

    /// Inference forward pass using running batch-norm statistics.
    pub fn forward_eval(&self, g: &mut Graph, batch: &Tensor) -> Result<TensorId> {
        Ok(self.forward_eval_traced(g, batch)?.0)
    }

    /// Inference forward pass that also reports every substage output.
    pub fn forward_eval_traced(
        &self,
        g: &mut Graph,
        batch: &Tensor,
    ) -> Result<(TensorId, Vec<SubstageRecord>)> {
        self.check_input(batch)?;
        let mut ctx = LayerCtx {
            g,
            params: &self.params,
            bn: BnAccess::Eval(&self.bn),
            binding: BTreeMap::new(),
            cfg: &self.cfg,
            requires_grad: false,
        };
        forward_impl(&mut ctx, batch)
    }

    /// Class probabilities for a batch: softmax over the forward logits.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let logits = self.forward_eval(&mut g, batch)?;
        let probs = g.softmax(logits)?;
        Ok(g.value(probs).clone())
    }
}

enum BnAccess<'a> {
    Train(&'a mut BTreeMap<String, BnStats>),
    Eval(&'a BTreeMap<String, BnStats>),
}

struct LayerCtx<'a> {
    g: &'a mut Graph,
    params: &'a BTreeMap<String, Tensor>,
    bn: BnAccess<'a>,
    binding: BTreeMap<String, TensorId>,
    cfg: &'a DpnSeConfig,
    requires_grad: bool,
}

impl LayerCtx<'_> {
    fn bind(&mut self, name: &str) -> Result<TensorId> {
        if let Some(&id) = self.binding.get(name) {
            return Ok(id);
        }
        let tensor = self
            .params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?
            .clone();
        let id = self.g.leaf(tensor, self.requires_grad);
        self.binding.insert(name.to_string(), id);
        Ok(id)
    }

    /// Convolution with optional batch norm: `prefix.w`, stats under `bn_name`.
    fn conv(&mut self, x: TensorId, prefix: &str, bn_name: &str, stride: usize, pad: usize) -> Result<TensorId> {
        let w = self.bind(&format!("{prefix}.w"))?;
        let y = self.g.conv2d(x, w, stride, pad)?;
        if !self.cfg.batch_norm {
            return Ok(y);
        }
        let gamma = self.bind(&format!("{bn_name}.gamma"))?;
        let beta = self.bind(&format!("{bn_name}.beta"))?;
        let (eps, mom) = (self.cfg.bn_eps, self.cfg.bn_momentum);
        match &mut self.bn {
            BnAccess::Train(map) => {
                let stats = map
                    .get_mut(bn_name)
                    .ok_or_else(|| Error::Config(format!("missing batch-norm stats {bn_name}")))?;
                self.g.batch_norm_train(y, gamma, beta, eps, stats, mom)
            }
            BnAccess::Eval(map) => {
                let stats = map
                    .get(bn_name)
                    .ok_or_else(|| Error::Config(format!("missing batch-norm stats {bn_name}")))?;
                self.g.batch_norm_eval(y, gamma, beta, eps, stats)
            }
        }
    }

    fn se(&mut self, x: TensorId, prefix: &str) -> Result<TensorId> {
        let w1 = self.bind(&format!("{prefix}.se.w1"))?;
        let b1 = self.bind(&format!("{prefix}.se.b1"))?;
        let w2 = self.bind(&format!("{prefix}.se.w2"))?;
        let b2 = self.bind(&format!("{prefix}.se.b2"))?;
        se_block(self.g, x, w1, b1, w2, b2)
    }
}

/// Shared forward wiring for both modes.
fn forward_impl(ctx: &mut LayerCtx<'_>, batch: &Tensor) -> Result<(TensorId, Vec<SubstageRecord>)> {
    let plan = ctx.cfg.channel_plan();
    let x = ctx.g.constant(batch.clone());
    let x = ctx.conv(x, "stem.conv", "stem.bn", STEM_STRIDE, STEM_PAD)?;
    let x = ctx.g.relu(x)?;
    let mut x = ctx.g.maxpool2d(x, STEM_POOL_KERNEL, STEM_POOL_STRIDE)?;

    let mut trace = Vec::new();
    let stages = ctx.cfg.stages.clone();
    for (si, st) in stages.iter().enumerate() {
        let (cr, k) = (st.residual_width, st.dense_increment);
        for bi in 0..st.substages {
            let p = format!("s{si}.b{bi}");
            let first = bi == 0;
            let stride = if first { st.stride } else { 1 };

            // Bottleneck: 1x1 -> 3x3 (strided on the first substage) -> 1x1.
            let t = ctx.conv(x, &format!("{p}.conv1"), &format!("{p}.bn1"), 1, 0)?;
            let t = ctx.g.relu(t)?;
            let t = ctx.conv(t, &format!("{p}.conv2"), &format!("{p}.bn2"), stride, 1)?;
            let t = ctx.g.relu(t)?;
            let t = ctx.conv(t, &format!("{p}.conv3"), &format!("{p}.bn3"), 1, 0)?;

            // Identity path: project on stage entry (restarting the dense
            // path), otherwise split the incoming residual/dense slices.
            let (res_in, dense_in) = if first {
                let proj = ctx.conv(x, &format!("{p}.proj"), &format!("{p}.proj_bn"), stride, 0)?;
                (proj, None)
            } else {
                let c_in = ctx.g.shape(x)[1];
                let res = ctx.g.slice_channels(x, 0, cr)?;
                let dense = ctx.g.slice_channels(x, cr, c_in - cr)?;
                (res, Some(dense))
            };

            let res_new = ctx.g.slice_channels(t, 0, cr)?;
            let res_out = ctx.g.add(res_in, res_new)?;
            let mut out = match dense_in {
                Some(d) => ctx.g.concat_channels(res_out, d)?,
                None => res_out,
            };
            if k > 0 {
                let dense_new = ctx.g.slice_channels(t, cr, k)?;
                out = ctx.g.concat_channels(out, dense_new)?;
            }
            if ctx.cfg.se_enabled {
                out = ctx.se(out, &p)?;
            }

            let got = ctx.g.shape(out)[1];
            let want = plan[si][bi];
            if got != want {
                return Err(Error::Config(format!(
                    "channel accounting mismatch at stage {si} substage {bi}: got {got}, planned {want}"
                )));
            }
            trace.push(SubstageRecord { stage: si, substage: bi, output: out });
            x = out;
        }
    }

    let pooled = ctx.g.global_avg_pool(x)?;
    let w = ctx.bind("head.w")?;
    let b = ctx.bind("head.b")?;
    let logits = ctx.g.dense(pooled, w, b)?;
    Ok((logits, trace))
}
