//! The acoustic model: a strided CNN stem, residual CNN blocks, a flattening
//! dense layer, BiLSTM encoder blocks, BiGRU decoder blocks with attention,
//! and a classifier producing per-frame log-probabilities over the charset.
//!
//! Tensors flow as `[B, C, F, T]` through the convolutional part and as
//! `[B, T, D]` afterwards. Every stage is length-aware: frames past an
//! utterance's own length never influence its valid outputs, so a padded
//! batch and per-utterance inference agree.

pub mod attention;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    bidirectional_rnn_with_lengths, Bound, Graph, GruCell, GruWeights, LstmCell, LstmWeights,
    ParamId, ParamStore, Tensor, Var,
};

pub use attention::{attention_apply, attention_scores, pad_hidden_state, AttentionHead, AttentionOutput};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

fn default_channels() -> usize {
    32
}
fn default_kernel() -> [usize; 2] {
    [3, 3]
}
fn default_stride() -> usize {
    2
}
fn default_dropout() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_activation() -> String {
    "gelu".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Residual CNN blocks.
    #[serde(rename = "N")]
    pub n_rcnn_blocks: usize,
    /// Encoder blocks, and likewise decoder blocks.
    #[serde(rename = "M")]
    pub n_rnn_blocks: usize,
    #[serde(default = "default_channels")]
    pub cnn_channels: usize,
    /// `(frequency, time)` kernel extents; both odd.
    #[serde(default = "default_kernel")]
    pub cnn_kernel: [usize; 2],
    #[serde(default = "default_stride")]
    pub stem_stride: usize,
    /// Width of the flattening layer output and the encoder LSTM hidden size.
    #[serde(rename = "embedding_size")]
    pub rnn_hidden: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_true")]
    pub stem_batch_norm: bool,
    #[serde(default = "default_activation")]
    pub activation_function: String,
    /// Filled from the frontend when left at 0.
    #[serde(default)]
    pub n_mels: usize,
    /// Filled from the charset when left at 0.
    #[serde(default)]
    pub charset_size: usize,
}

impl ModelConfig {
    pub fn new(n_mels: usize, charset_size: usize) -> Self {
        Self {
            n_rcnn_blocks: 5,
            n_rnn_blocks: 3,
            cnn_channels: default_channels(),
            cnn_kernel: default_kernel(),
            stem_stride: default_stride(),
            rnn_hidden: 512,
            dropout: default_dropout(),
            stem_batch_norm: true,
            activation_function: default_activation(),
            n_mels,
            charset_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.n_rcnn_blocks == 0 || self.n_rnn_blocks == 0 {
            return fail("N and M must be at least 1".into());
        }
        if self.rnn_hidden == 0 || self.cnn_channels == 0 || self.stem_stride == 0 {
            return fail("embedding_size, cnn_channels and stem_stride must be positive".into());
        }
        if self.charset_size < 2 {
            return fail(format!("charset_size {} < 2", self.charset_size));
        }
        if self.n_mels == 0 {
            return fail("n_mels must be positive".into());
        }
        if self.cnn_kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
            return fail(format!("cnn_kernel {:?} must be odd", self.cnn_kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.activation_function.eq_ignore_ascii_case("gelu") {
            return fail(format!(
                "activation_function {:?} is not supported (gelu only)",
                self.activation_function
            ));
        }
        if self.stem_out(self.n_mels, 0) == 0 {
            return fail(format!("n_mels {} is too small for the stem", self.n_mels));
        }
        if self.n_rnn_blocks > 16 {
            return fail("M > 16 would overflow the decoder width".into());
        }
        Ok(())
    }

    fn stem_out(&self, extent: usize, axis: usize) -> usize {
        let k = self.cnn_kernel[axis];
        let padded = extent + 2 * (k / 2);
        if padded < k {
            0
        } else {
            (padded - k) / self.stem_stride + 1
        }
    }

    /// Frequency extent after the stem.
    pub fn reduced_mels(&self) -> usize {
        self.stem_out(self.n_mels, 0)
    }

    /// Output frames for `frames` input frames.
    pub fn output_frames(&self, frames: usize) -> usize {
        self.stem_out(frames, 1)
    }

    /// Fewest input frames that survive the stem with the two output frames
    /// attention needs.
    pub fn min_input_frames(&self) -> usize {
        (1..).find(|&t| self.output_frames(t) >= 2).unwrap()
    }

    /// Feature width entering the classifier: every decoder block doubles it.
    pub fn decoder_output_dim(&self) -> usize {
        2 * self.rnn_hidden << self.n_rnn_blocks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout on with masks derived from `seed`; batch norm uses batch statistics.
    Train { seed: u64 },
    Eval,
}

struct Ctx {
    training: bool,
    seed: u64,
    counter: u64,
}

impl Ctx {
    fn new(mode: Mode) -> Self {
        match mode {
            Mode::Train { seed } => Self { training: true, seed, counter: 0 },
            Mode::Eval => Self { training: false, seed: 0, counter: 0 },
        }
    }

    fn dropout(&mut self, g: &mut Graph, x: Var, p: f64) -> Result<Var> {
        self.counter += 1;
        let seed = self.seed ^ self.counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        g.dropout(x, p, self.training, seed)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[B, T', charset_size]`
    pub log_probs: Var,
    pub output_lengths: Vec<usize>,
    /// Per-channel batch mean and variance of the stem, in training mode.
    pub batch_norm_stats: Option<(Vec<f64>, Vec<f64>)>,
    /// Softmaxed attention weights of each decoder block.
    pub attention_weights: Vec<Var>,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct RcnnBlock {
    ln1: Norm,
    conv1: Conv,
    ln2: Norm,
    conv2: Conv,
}

#[derive(Debug, Clone, Copy)]
struct Lstm {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Gru {
    w_ih: ParamId,
    b_ih: ParamId,
    w_hh: ParamId,
    b_hh: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct EncoderBlock {
    ln: Norm,
    fwd: Lstm,
    bwd: Lstm,
}

#[derive(Debug, Clone, Copy)]
struct DecoderBlock {
    ln: Norm,
    fwd: Gru,
    bwd: Gru,
    w1: ParamId,
    w2: ParamId,
    v: Dense,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        self.store.add_uniform(name, shape, fan_in, &mut self.rng)
    }

    fn filled(&mut self, name: &str, shape: &[usize], v: f64, trainable: bool) -> Result<ParamId> {
        self.store.add(name, Tensor::full(shape, v), trainable)
    }

    fn dense(&mut self, name: &str, input: usize, output: usize, bias: bool) -> Result<Dense> {
        let w = self.uniform(&format!("{name}.weight"), &[input, output], input)?;
        let b = if bias {
            Some(self.uniform(&format!("{name}.bias"), &[output], input)?)
        } else {
            None
        };
        Ok(Dense { w, b })
    }

    fn norm(&mut self, name: &str, n: usize) -> Result<Norm> {
        Ok(Norm {
            gamma: self.filled(&format!("{name}.gamma"), &[n], 1.0, true)?,
            beta: self.filled(&format!("{name}.beta"), &[n], 0.0, true)?,
        })
    }

    fn conv(&mut self, name: &str, out: usize, inp: usize, k: [usize; 2]) -> Result<Conv> {
        let fan_in = inp * k[0] * k[1];
        Ok(Conv {
            w: self.uniform(&format!("{name}.weight"), &[out, inp, k[0], k[1]], fan_in)?,
            b: self.uniform(&format!("{name}.bias"), &[out], fan_in)?,
        })
    }

    fn lstm(&mut self, name: &str, inp: usize, h: usize) -> Result<Lstm> {
        Ok(Lstm {
            w_ih: self.uniform(&format!("{name}.w_ih"), &[inp, 4 * h], inp)?,
            w_hh: self.uniform(&format!("{name}.w_hh"), &[h, 4 * h], h)?,
            bias: self.uniform(&format!("{name}.bias"), &[4 * h], h)?,
        })
    }

    fn gru(&mut self, name: &str, inp: usize, h: usize) -> Result<Gru> {
        Ok(Gru {
            w_ih: self.uniform(&format!("{name}.w_ih"), &[inp, 3 * h], inp)?,
            b_ih: self.uniform(&format!("{name}.b_ih"), &[3 * h], h)?,
            w_hh: self.uniform(&format!("{name}.w_hh"), &[h, 3 * h], h)?,
            b_hh: self.uniform(&format!("{name}.b_hh"), &[3 * h], h)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AcousticModel {
    config: ModelConfig,
    params: ParamStore,
    stem: Conv,
    stem_bn: Option<BatchNorm>,
    rcnn: Vec<RcnnBlock>,
    flatten: Dense,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
    classifier: Dense,
}

impl AcousticModel {
    /// Freshly initialized model; weights are uniform in `±sqrt(1 / fan_in)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let c = config.cnn_channels;
        let k = config.cnn_kernel;
        let f = config.reduced_mels();
        let h = config.rnn_hidden;
        let mut b = Builder {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let stem = b.conv("stem", c, 1, k)?;
        let stem_bn = if config.stem_batch_norm {
            Some(BatchNorm {
                gamma: b.filled("stem.bn.gamma", &[c], 1.0, true)?,
                beta: b.filled("stem.bn.beta", &[c], 0.0, true)?,
                mean: b.filled("stem.bn.running_mean", &[c], 0.0, false)?,
                var: b.filled("stem.bn.running_var", &[c], 1.0, false)?,
            })
        } else {
            None
        };
        let mut rcnn = Vec::new();
        for i in 0..config.n_rcnn_blocks {
            rcnn.push(RcnnBlock {
                ln1: b.norm(&format!("rcnn.{i}.ln1"), f)?,
                conv1: b.conv(&format!("rcnn.{i}.conv1"), c, c, k)?,
                ln2: b.norm(&format!("rcnn.{i}.ln2"), f)?,
                conv2: b.conv(&format!("rcnn.{i}.conv2"), c, c, k)?,
            });
        }
        let flatten = b.dense("flatten", c * f, h, true)?;
        let mut encoder = Vec::new();
        let mut d = h;
        for i in 0..config.n_rnn_blocks {
            encoder.push(EncoderBlock {
                ln: b.norm(&format!("encoder.{i}.ln"), d)?,
                fwd: b.lstm(&format!("encoder.{i}.fwd"), d, h)?,
                bwd: b.lstm(&format!("encoder.{i}.bwd"), d, h)?,
            });
            d = 2 * h;
        }
        let mut decoder = Vec::new();
        for i in 0..config.n_rnn_blocks {
            let gh = d / 2;
            decoder.push(DecoderBlock {
                ln: b.norm(&format!("decoder.{i}.ln"), d)?,
                fwd: b.gru(&format!("decoder.{i}.fwd"), d, gh)?,
                bwd: b.gru(&format!("decoder.{i}.bwd"), d, gh)?,
                w1: b.uniform(&format!("decoder.{i}.attn.w1"), &[d, gh], d)?,
                w2: b.uniform(&format!("decoder.{i}.attn.w2"), &[gh, gh], gh)?,
                v: b.dense(&format!("decoder.{i}.attn.v"), gh, d, true)?,
            });
            d *= 2;
        }
        debug_assert_eq!(d, config.decoder_output_dim());
        let classifier = b.dense("classifier", d, config.charset_size, true)?;
        Ok(Self {
            config,
            params,
            stem,
            stem_bn,
            rcnn,
            flatten,
            encoder,
            decoder,
            classifier,
        })
    }

    /// Model whose parameter values are copied from `stored` (names and shapes must match).
    pub fn from_params(config: ModelConfig, stored: &ParamStore) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.load_values(stored)?;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Blends batch statistics into the stem's running statistics.
    pub fn update_batch_norm(&mut self, mean: &[f64], var: &[f64]) -> Result<()> {
        let Some(bn) = self.stem_bn else { return Ok(()) };
        let m = BATCH_NORM_MOMENTUM;
        let blend = |old: &Tensor, new: &[f64]| -> Vec<f64> {
            old.data().iter().zip(new).map(|(o, n)| (1.0 - m) * o + m * n).collect()
        };
        let new_mean = blend(self.params.get(bn.mean), mean);
        let new_var = blend(self.params.get(bn.var), var);
        self.params.set(bn.mean, &new_mean)?;
        self.params.set(bn.var, &new_var)
    }

    /// Evaluation-mode forward on a plain tensor `[B, n_mels, T]`.
    pub fn infer(&self, features: &Tensor, lengths: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let x = g.constant(features.clone());
        let out = self.forward(&mut g, &bound, x, lengths, Mode::Eval)?;
        Ok((g.value(out.log_probs).clone(), out.output_lengths))
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        features: Var,
        lengths: &[usize],
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let shape = g.shape(features).to_vec();
        if shape.len() != 3 || shape[1] != cfg.n_mels || lengths.len() != shape[0] {
            return Err(Error::shape(
                "model input",
                format!(
                    "features {shape:?} with {} lengths; expected [B, {}, T]",
                    lengths.len(),
                    cfg.n_mels
                ),
            ));
        }
        let (b, t_in) = (shape[0], shape[2]);
        let min_frames = cfg.min_input_frames();
        for &len in lengths {
            if len > t_in {
                return Err(Error::shape("model input", format!("length {len} exceeds {t_in} frames")));
            }
            if len < min_frames {
                return Err(Error::InputTooShort { frames: len, min_frames });
            }
        }
        let out_lengths: Vec<usize> = lengths.iter().map(|&l| cfg.output_frames(l)).collect();
        let mut ctx = Ctx::new(mode);

        let x = g.reshape(features, &[b, 1, cfg.n_mels, t_in])?;
        let x = time_mask(g, x, lengths)?;
        let x = self.conv(g, bound, x, self.stem, cfg.stem_stride)?;
        let (mut x, batch_norm_stats) = self.stem_norm(g, bound, x, &ctx)?;
        for i in 0..self.rcnn.len() {
            x = self.rcnn_block_forward_masked(g, bound, i, x, &out_lengths, &mut ctx)?;
        }
        let x = self.flatten_fc(g, bound, x)?;
        let x = self.encoder_forward_masked(g, bound, x, &out_lengths, &mut ctx)?;
        let (x, attention_weights) = self.decoder_forward_masked(g, bound, x, &out_lengths, &mut ctx)?;
        let logits = dense(g, bound, x, self.classifier)?;
        let log_probs = g.log_softmax(logits);
        Ok(ForwardOutput {
            log_probs,
            output_lengths: out_lengths,
            batch_norm_stats,
            attention_weights,
        })
    }

    fn conv(&self, g: &mut Graph, bound: &Bound, x: Var, conv: Conv, stride: usize) -> Result<Var> {
        let k = self.config.cnn_kernel;
        g.conv2d(
            x,
            bound.var(conv.w),
            Some(bound.var(conv.b)),
            (stride, stride),
            (k[0] / 2, k[1] / 2),
        )
    }

    fn stem_norm(&self, g: &mut Graph, bound: &Bound, x: Var, ctx: &Ctx) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let Some(bn) = self.stem_bn else { return Ok((x, None)) };
        let shape = g.shape(x).to_vec();
        let c = shape[1];
        let (gamma, beta) = (bound.var(bn.gamma), bound.var(bn.beta));
        if ctx.training {
            let per_channel = g.permute(x, &[1, 0, 2, 3])?;
            let flat = g.reshape(per_channel, &[c, shape[0] * shape[2] * shape[3]])?;
            let stats = channel_stats(g.value(flat));
            let z = g.standardize(flat, 1, BATCH_NORM_EPS)?;
            let z = g.reshape(z, &[c, shape[0], shape[2], shape[3]])?;
            let z = g.permute(z, &[1, 0, 2, 3])?;
            let z = g.scale_along(z, gamma, 1)?;
            Ok((g.add_along(z, beta, 1)?, Some(stats)))
        } else {
            let mean = self.params.get(bn.mean).data();
            let var = self.params.get(bn.var).data();
            let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
            let shift: Vec<f64> = mean.iter().zip(&inv).map(|(m, i)| -m * i).collect();
            let inv = g.constant(Tensor::vector(inv));
            let shift = g.constant(Tensor::vector(shift));
            let z = g.scale_along(x, inv, 1)?;
            let z = g.add_along(z, shift, 1)?;
            let z = g.scale_along(z, gamma, 1)?;
            Ok((g.add_along(z, beta, 1)?, None))
        }
    }

    /// One residual block over `[B, C, F', T']` treating every frame as valid.
    pub fn rcnn_block_forward(&self, g: &mut Graph, bound: &Bound, block: usize, x: Var, mode: Mode) -> Result<Var> {
        let t = g.shape(x)[3];
        let lengths = vec![t; g.shape(x)[0]];
        self.rcnn_block_forward_masked(g, bound, block, x, &lengths, &mut Ctx::new(mode))
    }

    fn rcnn_block_forward_masked(
        &self,
        g: &mut Graph,
        bound: &Bound,
        block: usize,
        x: Var,
        lengths: &[usize],
        ctx: &mut Ctx,
    ) -> Result<Var> {
        let blk = self.rcnn.get(block).copied().ok_or_else(|| {
            Error::Config(format!("model has {} residual blocks, asked for {block}", self.rcnn.len()))
        })?;
        let p = self.config.dropout;
        let mut y = x;
        for (ln, conv) in [(blk.ln1, blk.conv1), (blk.ln2, blk.conv2)] {
            y = g.layer_norm(y, 2, bound.var(ln.gamma), bound.var(ln.beta), LAYER_NORM_EPS)?;
            y = g.gelu(y);
            y = ctx.dropout(g, y, p)?;
            y = time_mask(g, y, lengths)?;
            y = self.conv(g, bound, y, conv, 1)?;
        }
        if g.shape(y) != g.shape(x) {
            return Err(Error::shape(
                "rcnn block",
                format!("residual branch {:?} vs input {:?}", g.shape(y), g.shape(x)),
            ));
        }
        g.add(x, y)
    }

    /// `[B, C, F', T'] -> [B, T', C * F'] -> [B, T', hidden]`.
    pub fn flatten_fc(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let y = g.permute(x, &[0, 3, 1, 2])?;
        let y = g.reshape(y, &[s[0], s[3], s[1] * s[2]])?;
        dense(g, bound, y, self.flatten)
    }

    /// Encoder stack over `[B, T', hidden]` treating every frame as valid.
    pub fn encoder_forward(&self, g: &mut Graph, bound: &Bound, x: Var, mode: Mode) -> Result<Var> {
        let s = g.shape(x).to_vec();
        self.encoder_forward_masked(g, bound, x, &vec![s[1]; s[0]], &mut Ctx::new(mode))
    }

    /// A single encoder block over `[B, T', d]` treating every frame as valid.
    pub fn encoder_block_forward(&self, g: &mut Graph, bound: &Bound, block: usize, x: Var, mode: Mode) -> Result<Var> {
        let s = g.shape(x).to_vec();
        self.encoder_block(g, bound, block, x, &vec![s[1]; s[0]], &mut Ctx::new(mode))
    }

    fn encoder_forward_masked(&self, g: &mut Graph, bound: &Bound, mut x: Var, lengths: &[usize], ctx: &mut Ctx) -> Result<Var> {
        for i in 0..self.encoder.len() {
            x = self.encoder_block(g, bound, i, x, lengths, ctx)?;
        }
        Ok(x)
    }

    fn encoder_block(&self, g: &mut Graph, bound: &Bound, block: usize, x: Var, lengths: &[usize], ctx: &mut Ctx) -> Result<Var> {
        let blk = self.encoder.get(block).copied().ok_or_else(|| {
            Error::Config(format!("model has {} encoder blocks, asked for {block}", self.encoder.len()))
        })?;
        let axis = g.shape(x).len() - 1;
        let y = g.layer_norm(x, axis, bound.var(blk.ln.gamma), bound.var(blk.ln.beta), LAYER_NORM_EPS)?;
        let y = g.gelu(y);
        let lstm = |w: Lstm, g: &Graph| {
            LstmCell::new(
                g,
                LstmWeights {
                    w_ih: bound.var(w.w_ih),
                    w_hh: bound.var(w.w_hh),
                    bias: bound.var(w.bias),
                },
            )
        };
        let (fwd, bwd) = (lstm(blk.fwd, g)?, lstm(blk.bwd, g)?);
        let (y, _) = bidirectional_rnn_with_lengths(g, y, Some(lengths), &fwd, &bwd)?;
        ctx.dropout(g, y, self.config.dropout)
    }

    /// Decoder stack; returns the output and each block's attention weights.
    pub fn decoder_forward(&self, g: &mut Graph, bound: &Bound, x: Var, mode: Mode) -> Result<(Var, Vec<Var>)> {
        let s = g.shape(x).to_vec();
        self.decoder_forward_masked(g, bound, x, &vec![s[1]; s[0]], &mut Ctx::new(mode))
    }

    fn decoder_forward_masked(
        &self,
        g: &mut Graph,
        bound: &Bound,
        mut x: Var,
        lengths: &[usize],
        ctx: &mut Ctx,
    ) -> Result<(Var, Vec<Var>)> {
        let mut weights = Vec::new();
        for blk in &self.decoder {
            let axis = g.shape(x).len() - 1;
            let y = g.layer_norm(x, axis, bound.var(blk.ln.gamma), bound.var(blk.ln.beta), LAYER_NORM_EPS)?;
            let y = g.gelu(y);
            let gru = |w: Gru, g: &Graph| {
                GruCell::new(
                    g,
                    GruWeights {
                        w_ih: bound.var(w.w_ih),
                        b_ih: bound.var(w.b_ih),
                        w_hh: bound.var(w.w_hh),
                        b_hh: bound.var(w.b_hh),
                    },
                )
            };
            let (fwd, bwd) = (gru(blk.fwd, g)?, gru(blk.bwd, g)?);
            let (out, hidden) = bidirectional_rnn_with_lengths(g, y, Some(lengths), &fwd, &bwd)?;
            let head = AttentionHead {
                w1: bound.var(blk.w1),
                w2: bound.var(blk.w2),
                v: bound.var(blk.v.w),
                v_bias: bound.var(blk.v.b.expect("attention v has a bias")),
            };
            let att = attention_apply(g, out, hidden, &head)?;
            weights.push(att.weights);
            x = ctx.dropout(g, att.output, self.config.dropout)?;
        }
        Ok((x, weights))
    }

    /// Parameter ids of one residual block's two convolutions (weight, bias each).
    pub fn rcnn_conv_params(&self, block: usize) -> Option<[ParamId; 4]> {
        self.rcnn
            .get(block)
            .map(|b| [b.conv1.w, b.conv1.b, b.conv2.w, b.conv2.b])
    }
}

fn dense(g: &mut Graph, bound: &Bound, x: Var, d: Dense) -> Result<Var> {
    g.linear(x, bound.var(d.w), d.b.map(|b| bound.var(b)))
}

/// Per-row mean and biased variance of a `[C, N]` tensor.
fn channel_stats(t: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = t.shape()[1].max(1);
    t.data()
        .chunks(n)
        .map(|row| {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            (mean, var)
        })
        .unzip()
}

/// Zeros frames at or beyond each utterance's length along the last axis.
fn time_mask(g: &mut Graph, x: Var, lengths: &[usize]) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let t = *shape.last().unwrap();
    if lengths.iter().all(|&l| l >= t) {
        return Ok(x);
    }
    let per_batch: usize = shape[1..].iter().product();
    let mut mask = Vec::with_capacity(per_batch * shape[0]);
    for &len in lengths {
        for i in 0..per_batch {
            mask.push(if i % t < len { 1.0 } else { 0.0 });
        }
    }
    let m = g.constant(Tensor::new(shape, mask)?);
    g.mul(x, m)
}

#[cfg(test)]
mod tests;
