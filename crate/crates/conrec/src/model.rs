//! U-Net encoder-decoder with skip connections, attention-weighted pooling and
//! a two-layer projection head.
//!
//! The encoder downsamples `levels` times (two conv-BN-ReLU blocks then 2x2
//! max-pool per stage, plus a two-block bottleneck), so the bottleneck map has
//! `base_channels * 2^levels` channels at `image_size / 2^levels` resolution.
//! The decoder mirrors it with nearest-neighbor upsampling followed by a 1x1
//! channel-reducing convolution, skip concatenation and one 3x3 block; a final
//! 1x1 convolution with sigmoid produces the reconstruction.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{GradientTape, Padding, Scalar, Tensor, Var};
use crate::rng::{derive, fnv1a, stream};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Gap,
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub levels: usize,
    pub base_channels: usize,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub pooling: Pooling,
    /// Filter counts of the attention head's conv blocks, strictly decreasing.
    /// A final single-filter sigmoid convolution is always appended.
    pub attention_filters: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 128,
            levels: 4,
            base_channels: 8,
            projection_hidden: 128,
            projection_dim: 64,
            pooling: Pooling::Attention,
            attention_filters: vec![64, 32, 16],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(Error::Config("levels and base_channels must be >= 1".into()));
        }
        let div = 1usize << self.levels;
        if self.image_size == 0 || self.image_size % div != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be divisible by 2^levels = {div}",
                self.image_size
            )));
        }
        if self.projection_hidden == 0 || self.projection_dim == 0 {
            return Err(Error::Config("projection dims must be >= 1".into()));
        }
        if self.pooling == Pooling::Attention {
            if self.attention_filters.is_empty() {
                return Err(Error::Config("attention_filters must not be empty".into()));
            }
            if self.attention_filters.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::Config(format!(
                    "attention_filters must be strictly decreasing, got {:?}",
                    self.attention_filters
                )));
            }
            if self.attention_filters.contains(&0) {
                return Err(Error::Config("attention_filters must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Channels of the encoder bottleneck map.
    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.levels
    }

    /// Spatial extent of the encoder bottleneck map.
    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.levels
    }

    fn stage_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// All learnable weights plus batch-norm running statistics, keyed by layer
/// name (e.g. `enc.s0.c1.w`, `att.bn2.gamma`).
#[derive(Clone, Debug)]
pub struct ModelParams<S: Scalar = f32> {
    pub cfg: ModelConfig,
    tensors: BTreeMap<String, Tensor<S>>,
    state: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn get(&self, name: &str) -> &Tensor<S> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<S> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn state(&self, name: &str) -> &Tensor<S> {
        self.state
            .get(name)
            .unwrap_or_else(|| panic!("unknown state entry {name}"))
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.tensors.iter()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.tensors.iter_mut()
    }

    pub fn state_entries(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.state.iter()
    }

    pub fn has(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert_raw(&mut self, name: String, t: Tensor<S>) {
        self.tensors.insert(name, t);
    }

    pub fn insert_state_raw(&mut self, name: String, t: Tensor<S>) {
        self.state.insert(name, t);
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.all_finite()) && self.state.values().all(|t| t.all_finite())
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            cfg: self.cfg.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            state: self.state.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// FNV digest over parameter and state bytes in name order.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in self.tensors.iter().chain(self.state.iter()) {
            h ^= fnv1a(name.as_bytes());
            for v in t.data() {
                h ^= fnv1a(&v.to_f64().to_le_bytes());
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Shell with no tensors; used when deserializing checkpoints.
    pub fn new_empty(cfg: ModelConfig) -> Self {
        ModelParams { cfg, tensors: BTreeMap::new(), state: BTreeMap::new() }
    }

    /// `bias` is false for convolutions feeding a batch norm: the shift is
    /// cancelled by the normalization, so such a bias would be a dead
    /// parameter with an exactly-zero gradient.
    fn add_conv(&mut self, seed: u64, name: &str, kh: usize, kw: usize, cin: usize, cout: usize, bias: bool) {
        let fan_in = (kh * kw * cin) as f64;
        let std = (2.0 / fan_in).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let mut rng = stream(derive(seed, &[fnv1a(name.as_bytes())]));
        let w = Tensor::from_fn(&[kh, kw, cin, cout], |_| S::from_f64(normal.sample(&mut rng)));
        self.tensors.insert(format!("{name}.w"), w);
        if bias {
            self.tensors.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
        }
    }

    fn add_dense(&mut self, seed: u64, name: &str, din: usize, dout: usize) {
        let std = (2.0 / din as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let mut rng = stream(derive(seed, &[fnv1a(name.as_bytes())]));
        let w = Tensor::from_fn(&[din, dout], |_| S::from_f64(normal.sample(&mut rng)));
        self.tensors.insert(format!("{name}.w"), w);
        self.tensors.insert(format!("{name}.b"), Tensor::zeros(&[dout]));
    }

    fn add_bn(&mut self, name: &str, c: usize) {
        self.tensors.insert(format!("{name}.gamma"), Tensor::full(&[c], S::ONE));
        self.tensors.insert(format!("{name}.beta"), Tensor::zeros(&[c]));
        self.state.insert(format!("{name}.mean"), Tensor::zeros(&[c]));
        self.state.insert(format!("{name}.var"), Tensor::full(&[c], S::ONE));
    }
}

/// He-initialized parameters, deterministic for a fixed (cfg, seed).
/// The attention head is only materialized for attention pooling.
pub fn init_model<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<S>> {
    cfg.validate()?;
    let mut p = ModelParams::new_empty(cfg.clone());
    let l = cfg.levels;

    let mut cin = 1;
    for i in 0..l {
        let c = cfg.stage_channels(i);
        p.add_conv(seed, &format!("enc.s{i}.c0"), 3, 3, cin, c, false);
        p.add_bn(&format!("enc.s{i}.bn0"), c);
        p.add_conv(seed, &format!("enc.s{i}.c1"), 3, 3, c, c, false);
        p.add_bn(&format!("enc.s{i}.bn1"), c);
        cin = c;
    }
    let f = cfg.bottleneck_channels();
    p.add_conv(seed, "enc.bott.c0", 3, 3, cin, f, false);
    p.add_bn("enc.bott.bn0", f);
    p.add_conv(seed, "enc.bott.c1", 3, 3, f, f, false);
    p.add_bn("enc.bott.bn1", f);

    let mut above = f;
    for i in (0..l).rev() {
        let c = cfg.stage_channels(i);
        p.add_conv(seed, &format!("dec.s{i}.up"), 1, 1, above, c, false);
        p.add_bn(&format!("dec.s{i}.bnu"), c);
        p.add_conv(seed, &format!("dec.s{i}.c0"), 3, 3, 2 * c, c, false);
        p.add_bn(&format!("dec.s{i}.bn0"), c);
        above = c;
    }
    p.add_conv(seed, "dec.out", 1, 1, cfg.base_channels, 1, true);

    if cfg.pooling == Pooling::Attention {
        let mut ain = f;
        for (j, &nf) in cfg.attention_filters.iter().enumerate() {
            p.add_conv(seed, &format!("att.c{j}"), 1, 1, ain, nf, false);
            p.add_bn(&format!("att.bn{j}"), nf);
            ain = nf;
        }
        p.add_conv(seed, "att.out", 1, 1, ain, 1, true);
    }

    p.add_dense(seed, "proj.fc0", f, cfg.projection_hidden);
    p.add_dense(seed, "proj.fc1", cfg.projection_hidden, cfg.projection_dim);
    Ok(p)
}

// ── Forward graph construction ──────────────────────────────────────────

/// One forward pass: borrows the parameters read-only, records onto the tape,
/// and collects batch-norm statistics to fold into the running estimates
/// after the step.
pub struct Forward<'a, S: Scalar> {
    pub params: &'a ModelParams<S>,
    pub tape: &'a mut GradientTape<S>,
    pub mode: BnMode,
    stat_updates: Vec<(String, Vec<S>, Vec<S>)>,
}

impl<'a, S: Scalar> Forward<'a, S> {
    pub fn new(params: &'a ModelParams<S>, tape: &'a mut GradientTape<S>, mode: BnMode) -> Self {
        Forward { params, tape, mode, stat_updates: Vec::new() }
    }

    /// Batch statistics gathered during the pass; apply with [`commit_bn_stats`].
    pub fn into_stat_updates(self) -> Vec<(String, Vec<S>, Vec<S>)> {
        self.stat_updates
    }

    fn p(&mut self, name: &str) -> Var {
        self.tape.param(name, self.params.get(name))
    }

    fn conv(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        self.tape.conv2d(x, w, b, 1, Padding::Same)
    }

    fn conv_bn_relu(&mut self, conv: &str, bn: &str, x: Var) -> Result<Var> {
        let k = self.p(&format!("{conv}.w"));
        // Bias-free: batch norm's beta provides the shift.
        let cout = self.params.get(&format!("{conv}.w")).dim(3);
        let b = self.tape.constant(Tensor::zeros(&[cout]));
        let gamma = self.p(&format!("{bn}.gamma"));
        let beta = self.p(&format!("{bn}.beta"));
        let eps = S::from_f64(BN_EPS);
        match self.mode {
            BnMode::Train => {
                let (y, mean, var) =
                    self.tape.conv_bn_relu_train(x, k, b, gamma, beta, 1, Padding::Same, eps)?;
                self.stat_updates.push((bn.to_string(), mean, var));
                Ok(y)
            }
            BnMode::Infer => self.tape.conv_bn_relu_infer(
                x,
                k,
                b,
                gamma,
                beta,
                self.params.state(&format!("{bn}.mean")),
                self.params.state(&format!("{bn}.var")),
                1,
                Padding::Same,
                eps,
            ),
        }
    }

    /// Encoder: masked image batch [N, H, W, 1] -> (bottleneck map, pre-pool
    /// skip activations per level).
    pub fn encode(&mut self, x: Var) -> Result<(Var, Vec<Var>)> {
        let shape = self.tape.value(x).shape().to_vec();
        let s = self.params.cfg.image_size;
        if shape.len() != 4 || shape[1] != s || shape[2] != s || shape[3] != 1 {
            return Err(Error::Shape(format!(
                "encode expects [N, {s}, {s}, 1], got {shape:?}"
            )));
        }
        let mut h = x;
        let mut skips = Vec::with_capacity(self.params.cfg.levels);
        for i in 0..self.params.cfg.levels {
            h = self.conv_bn_relu(&format!("enc.s{i}.c0"), &format!("enc.s{i}.bn0"), h)?;
            h = self.conv_bn_relu(&format!("enc.s{i}.c1"), &format!("enc.s{i}.bn1"), h)?;
            skips.push(h);
            h = self.tape.max_pool2(h)?;
        }
        h = self.conv_bn_relu("enc.bott.c0", "enc.bott.bn0", h)?;
        h = self.conv_bn_relu("enc.bott.c1", "enc.bott.bn1", h)?;
        Ok((h, skips))
    }

    /// Decoder: bottleneck map plus skips -> reconstruction in (0,1).
    pub fn decode(&mut self, phi: Var, skips: &[Var]) -> Result<Var> {
        let cfg = &self.params.cfg;
        if skips.len() != cfg.levels {
            return Err(Error::Shape(format!(
                "decode needs {} skips, got {}",
                cfg.levels,
                skips.len()
            )));
        }
        let mut h = phi;
        for i in (0..cfg.levels).rev() {
            h = self.tape.upsample_nearest(h, 2)?;
            h = self.conv_bn_relu(&format!("dec.s{i}.up"), &format!("dec.s{i}.bnu"), h)?;
            let expect = self.tape.value(h).shape().to_vec();
            let got = self.tape.value(skips[i]).shape();
            if got != expect {
                return Err(Error::Shape(format!(
                    "skip {i} shape {got:?} does not match decoder path {expect:?}"
                )));
            }
            h = self.tape.concat_channels(h, skips[i])?;
            h = self.conv_bn_relu(&format!("dec.s{i}.c0"), &format!("dec.s{i}.bn0"), h)?;
        }
        let y = self.conv("dec.out", h)?;
        Ok(self.tape.sigmoid(y))
    }

    /// Attention map a_ij in (0,1): conv blocks with decreasing filters, then
    /// a single-filter sigmoid convolution. Output shape [N, s, s, 1].
    pub fn attention_map(&mut self, phi: Var) -> Result<Var> {
        let n_blocks = self.params.cfg.attention_filters.len();
        let mut h = phi;
        for j in 0..n_blocks {
            h = self.conv_bn_relu(&format!("att.c{j}"), &format!("att.bn{j}"), h)?;
        }
        let y = self.conv("att.out", h)?;
        Ok(self.tape.sigmoid(y))
    }

    /// Pooled representation per the configured pooling.
    pub fn pool(&mut self, phi: Var) -> Result<Var> {
        match self.params.cfg.pooling {
            Pooling::Gap => self.tape.global_average_pool(phi),
            Pooling::Attention => {
                let a = self.attention_map(phi)?;
                attention_pool_with_map(self.tape, phi, a)
            }
        }
    }

    /// Projection head: dense -> ReLU -> dense. No output normalization; the
    /// loss normalizes via cosine similarity.
    pub fn project(&mut self, h: Var) -> Result<Var> {
        let w0 = self.p("proj.fc0.w");
        let b0 = self.p("proj.fc0.b");
        let z = self.tape.dense(h, w0, b0)?;
        let z = self.tape.relu(z);
        let w1 = self.p("proj.fc1.w");
        let b1 = self.p("proj.fc1.b");
        self.tape.dense(z, w1, b1)
    }

    /// Full two-headed pass: reconstruction and projection share one encoding.
    pub fn forward(&mut self, x: Var) -> Result<(Var, Var)> {
        let (phi, skips) = self.encode(x)?;
        let xhat = self.decode(phi, &skips)?;
        let h = self.pool(phi)?;
        let z = self.project(h)?;
        Ok((xhat, z))
    }
}

/// Weighted spatial pooling: h[n,c] = sum_ij a[n,i,j] phi[n,i,j,c] / sum_ij a[n,i,j],
/// expressed as g(A .* phi) / g(A) with g = global average pooling.
pub fn attention_pool_with_map<S: Scalar>(
    tape: &mut GradientTape<S>,
    phi: Var,
    a: Var,
) -> Result<Var> {
    let weighted = tape.mul_bcast_c(phi, a)?;
    let num = tape.global_average_pool(weighted)?;
    let den = tape.global_average_pool(a)?;
    tape.div_bcast_row(num, den)
}

/// Fold collected batch statistics into the running estimates.
pub fn commit_bn_stats<S: Scalar>(params: &mut ModelParams<S>, updates: Vec<(String, Vec<S>, Vec<S>)>) {
    let m = S::from_f64(BN_MOMENTUM);
    let one_m = S::ONE - m;
    for (bn, mean, var) in updates {
        let rm = params.state.get_mut(&format!("{bn}.mean")).expect("bn state");
        for (r, &v) in rm.data_mut().iter_mut().zip(mean.iter()) {
            *r = *r * m + v * one_m;
        }
        let rv = params.state.get_mut(&format!("{bn}.var")).expect("bn state");
        for (r, &v) in rv.data_mut().iter_mut().zip(var.iter()) {
            *r = *r * m + v * one_m;
        }
    }
}

/// Inference-mode pooled representation h = a(e(x)) (or GAP per config) for a
/// batch of unmasked images. Read-only on the parameters.
pub fn represent<S: Scalar>(params: &ModelParams<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let mut tape = GradientTape::new();
    let xv = tape.constant(x.clone());
    let mut fwd = Forward::new(params, &mut tape, BnMode::Infer);
    let (phi, _skips) = fwd.encode(xv)?;
    let h = fwd.pool(phi)?;
    Ok(tape.value(h).clone())
}
