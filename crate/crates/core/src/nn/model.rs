//! The dual-branch separation network.
//!
//! Seven common conv blocks feed two three-block branches that output the
//! estimated ground-roll and the estimated low-frequency reflections. All
//! convolutions are 3×3 with same padding and 64 feature maps; the first
//! block has no batch norm (inputs are pre-normalized) and the final block
//! of each branch is a linear-activation conv down to one channel. Dropout
//! regularizes the first two blocks of each branch.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::activation::{dropout, mix_seed, Activation};
use crate::nn::batchnorm::{BatchNorm, BnCache};
use crate::nn::conv::{conv2d_backward_batch, conv2d_forward_batch, KERNEL};

pub const HIDDEN_CHANNELS: usize = 64;
pub const COMMON_DEPTH: usize = 7;
pub const BRANCH_DEPTH: usize = 3;
pub const INPUT_CHANNELS: usize = 2;
/// Receptive-field radius of the ten stacked 3×3 layers on any output path.
pub const RECEPTIVE_RADIUS: usize = COMMON_DEPTH + BRANCH_DEPTH;

/// Training hyperparameters that shape the architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { leaky_slope: 0.01, dropout_rate: 0.5, bn_momentum: 0.1, bn_eps: 1e-5 }
    }
}

/// One conv block: 3×3 convolution, optional batch norm, activation,
/// optional dropout (train mode only).
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
    pub bn: Option<BatchNorm>,
    pub activation: Activation,
    pub dropout: Option<f64>,
}

impl ConvBlock {
    pub fn in_channels(&self) -> usize {
        self.weights.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dim().0
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub common: Vec<ConvBlock>,
    pub gr_branch: Vec<ConvBlock>,
    pub rl_branch: Vec<ConvBlock>,
    pub hyper: Hyper,
}

fn init_block<R: Rng>(
    rng: &mut R,
    c_in: usize,
    c_out: usize,
    with_bn: bool,
    activation: Activation,
    dropout: Option<f64>,
    hyper: &Hyper,
) -> ConvBlock {
    // Fan-in-scaled uniform (He for LeakyReLU): U(−b, b) with
    // b = sqrt(6 / ((1 + slope²)·fan_in)).
    let fan_in = (c_in * KERNEL * KERNEL) as f64;
    let bound = (6.0 / ((1.0 + hyper.leaky_slope * hyper.leaky_slope) * fan_in)).sqrt();
    let weights =
        Array4::from_shape_fn((c_out, c_in, KERNEL, KERNEL), |_| rng.gen_range(-bound..bound));
    ConvBlock {
        weights,
        bias: Array1::zeros(c_out),
        bn: with_bn.then(|| BatchNorm::new(c_out, hyper.bn_momentum, hyper.bn_eps)),
        activation,
        dropout,
    }
}

/// Deterministically initialize the dual-branch model from a seed.
pub fn init_model(seed: u64, hyper: Hyper) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaky = Activation::LeakyRelu(hyper.leaky_slope);
    let mut common = Vec::with_capacity(COMMON_DEPTH);
    common.push(init_block(&mut rng, INPUT_CHANNELS, HIDDEN_CHANNELS, false, leaky, None, &hyper));
    for _ in 1..COMMON_DEPTH {
        common.push(init_block(&mut rng, HIDDEN_CHANNELS, HIDDEN_CHANNELS, true, leaky, None, &hyper));
    }
    let branch = |rng: &mut ChaCha8Rng| {
        vec![
            init_block(rng, HIDDEN_CHANNELS, HIDDEN_CHANNELS, true, leaky, Some(hyper.dropout_rate), &hyper),
            init_block(rng, HIDDEN_CHANNELS, HIDDEN_CHANNELS, true, leaky, Some(hyper.dropout_rate), &hyper),
            init_block(rng, HIDDEN_CHANNELS, 1, false, Activation::Linear, None, &hyper),
        ]
    };
    let gr_branch = branch(&mut rng);
    let rl_branch = branch(&mut rng);
    Model { common, gr_branch, rl_branch, hyper }
}

/// Per-block forward state kept for the backward pass. `conv_out` is only
/// stored when the block has batch norm (it is the BN input); activation
/// signs are recovered from `out`.
#[derive(Debug)]
pub struct BlockCache {
    conv_out: Option<Array4<f64>>,
    bn: Option<BnCache>,
    mask: Option<Vec<u8>>,
    out: Array4<f64>,
}

/// Everything the backward pass needs from one train-mode forward.
#[derive(Debug)]
pub struct ForwardCache {
    input: Array4<f64>,
    common: Vec<BlockCache>,
    gr: Vec<BlockCache>,
    rl: Vec<BlockCache>,
}

fn run_block_train(
    block: &mut ConvBlock,
    input: &Array4<f64>,
    dropout_seed: Option<u64>,
) -> Result<BlockCache> {
    let conv_out = conv2d_forward_batch(input, &block.weights, &block.bias)?;
    let (mut act_in, conv_out_kept, bn_cache) = match block.bn.as_mut() {
        Some(bn) => {
            let (normed, cache) = bn.forward_train(&conv_out)?;
            (normed, Some(conv_out), Some(cache))
        }
        None => (conv_out, None, None),
    };
    block.activation.apply_in_place(&mut act_in);
    let (out, mask) = match (block.dropout, dropout_seed) {
        (Some(rate), Some(seed)) => {
            let (dropped, mask) = dropout(&act_in, rate, seed, true)?;
            (dropped, Some(mask))
        }
        _ => (act_in, None),
    };
    Ok(BlockCache { conv_out: conv_out_kept, bn: bn_cache, mask, out })
}

fn run_block_eval(block: &ConvBlock, input: &Array4<f64>) -> Result<Array4<f64>> {
    let conv_out = conv2d_forward_batch(input, &block.weights, &block.bias)?;
    let mut out = match &block.bn {
        Some(bn) => bn.forward_eval(&conv_out)?,
        None => conv_out,
    };
    block.activation.apply_in_place(&mut out);
    Ok(out)
}

/// Gradients for one block, shaped like its parameters.
#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

/// Full-model gradients in declaration order.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub common: Vec<BlockGrads>,
    pub gr: Vec<BlockGrads>,
    pub rl: Vec<BlockGrads>,
}

impl Gradients {
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for section in [&self.common, &self.gr, &self.rl] {
            for b in section {
                out.push(b.weights.as_slice().unwrap());
                out.push(b.bias.as_slice().unwrap());
                if let Some(g) = &b.gamma {
                    out.push(g.as_slice().unwrap());
                }
                if let Some(g) = &b.beta {
                    out.push(g.as_slice().unwrap());
                }
            }
        }
        out
    }
}

fn backward_block(
    block: &ConvBlock,
    conv_in: &Array4<f64>,
    cache: &BlockCache,
    mut grad: Array4<f64>,
) -> Result<(Array4<f64>, BlockGrads)> {
    // Through dropout: zero dropped units, rescale survivors.
    if let (Some(rate), Some(mask)) = (block.dropout, cache.mask.as_ref()) {
        let inv_keep = 1.0 / (1.0 - rate);
        for (g, &m) in grad.iter_mut().zip(mask) {
            *g = if m == 1 { *g * inv_keep } else { 0.0 };
        }
    }
    // Through the activation, reading signs off the block output (valid for
    // positive LeakyReLU slopes; dropped units already have zero gradient).
    match block.activation {
        Activation::Linear => {}
        act => {
            for (g, &o) in grad.iter_mut().zip(cache.out.iter()) {
                *g *= act.backward_factor(o);
            }
        }
    }
    // Through batch norm.
    let (grad, dgamma, dbeta) = match (&block.bn, &cache.conv_out, &cache.bn) {
        (Some(bn), Some(conv_out), Some(bn_cache)) => {
            let (g, dgamma, dbeta) = bn.backward(conv_out, bn_cache, &grad)?;
            (g, Some(dgamma), Some(dbeta))
        }
        _ => (grad, None, None),
    };
    // Through the convolution.
    let (grad_in, d_weights, d_bias) = conv2d_backward_batch(conv_in, &block.weights, &grad)?;
    Ok((grad_in, BlockGrads { weights: d_weights, bias: d_bias, gamma: dgamma, beta: dbeta }))
}

fn backward_section(
    blocks: &[ConvBlock],
    section_input: &Array4<f64>,
    caches: &[BlockCache],
    mut grad: Array4<f64>,
) -> Result<(Array4<f64>, Vec<BlockGrads>)> {
    let mut grads = Vec::with_capacity(blocks.len());
    for k in (0..blocks.len()).rev() {
        let conv_in = if k == 0 { section_input } else { &caches[k - 1].out };
        let (g_in, bg) = backward_block(&blocks[k], conv_in, &caches[k], grad)?;
        grads.push(bg);
        grad = g_in;
    }
    grads.reverse();
    Ok((grad, grads))
}

impl Model {
    /// Train-mode forward. Batch norm uses batch statistics and updates the
    /// running averages; dropout draws masks from `dropout_seed` (pass
    /// `None` to disable dropout, e.g. for gradient checks). Returns
    /// (ĝ, r̂_low, cache).
    pub fn forward_train(
        &mut self,
        input: &Array4<f64>,
        dropout_seed: Option<u64>,
    ) -> Result<(Array4<f64>, Array4<f64>, ForwardCache)> {
        self.check_input(input)?;
        let mut common: Vec<BlockCache> = Vec::with_capacity(self.common.len());
        for (k, block) in self.common.iter_mut().enumerate() {
            let cache = {
                let prev = if k == 0 { input } else { &common[k - 1].out };
                run_block_train(block, prev, dropout_seed.map(|s| mix_seed(s, k as u64)))?
            };
            common.push(cache);
        }
        let common_out = &common[self.common.len() - 1].out;

        let run_branch = |blocks: &mut [ConvBlock], tag: u64| -> Result<Vec<BlockCache>> {
            let mut caches: Vec<BlockCache> = Vec::with_capacity(blocks.len());
            for (k, block) in blocks.iter_mut().enumerate() {
                let cache = {
                    let prev = if k == 0 { common_out } else { &caches[k - 1].out };
                    run_block_train(
                        block,
                        prev,
                        dropout_seed.map(|s| mix_seed(s, 100 * tag + k as u64)),
                    )?
                };
                caches.push(cache);
            }
            Ok(caches)
        };
        let gr = run_branch(&mut self.gr_branch, 1)?;
        let rl = run_branch(&mut self.rl_branch, 2)?;

        let g_hat = gr.last().unwrap().out.clone();
        let r_hat = rl.last().unwrap().out.clone();
        Ok((g_hat, r_hat, ForwardCache { input: input.clone(), common, gr, rl }))
    }

    /// Eval-mode forward: running batch-norm statistics, no dropout, fully
    /// convolutional in the spatial dimensions. Deterministic.
    pub fn forward_eval(&self, input: &Array4<f64>) -> Result<(Array4<f64>, Array4<f64>)> {
        self.check_input(input)?;
        let mut x = input.clone();
        for block in &self.common {
            x = run_block_eval(block, &x)?;
        }
        let mut g = x.clone();
        for block in &self.gr_branch {
            g = run_block_eval(block, &g)?;
        }
        let mut r = x;
        for block in &self.rl_branch {
            r = run_block_eval(block, &r)?;
        }
        Ok((g, r))
    }

    /// Backpropagate loss gradients at the two outputs down to every
    /// parameter.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_g_hat: &Array4<f64>,
        grad_r_low_hat: &Array4<f64>,
    ) -> Result<Gradients> {
        let common_out = &cache.common[self.common.len() - 1].out;
        let (grad_from_gr, gr) =
            backward_section(&self.gr_branch, common_out, &cache.gr, grad_g_hat.clone())?;
        let (grad_from_rl, rl) =
            backward_section(&self.rl_branch, common_out, &cache.rl, grad_r_low_hat.clone())?;
        let grad_common_out = grad_from_gr + grad_from_rl;
        let (_, common) =
            backward_section(&self.common, &cache.input, &cache.common, grad_common_out)?;
        Ok(Gradients { common, gr, rl })
    }

    fn check_input(&self, input: &Array4<f64>) -> Result<()> {
        let expect = self.common[0].in_channels();
        if input.dim().1 != expect {
            return Err(Error::Model(format!(
                "expected {expect} input channels, got {}",
                input.dim().1
            )));
        }
        Ok(())
    }

    /// Flat views of all parameters in declaration order: per block weights,
    /// bias, then batch-norm scale and shift when present.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for section in [&mut self.common, &mut self.gr_branch, &mut self.rl_branch] {
            for b in section.iter_mut() {
                out.push(b.weights.as_slice_mut().unwrap());
                out.push(b.bias.as_slice_mut().unwrap());
                if let Some(bn) = b.bn.as_mut() {
                    out.push(bn.gamma.as_slice_mut().unwrap());
                    out.push(bn.beta.as_slice_mut().unwrap());
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for section in [&self.common, &self.gr_branch, &self.rl_branch] {
            for b in section {
                n += b.weights.len() + b.bias.len();
                if let Some(bn) = &b.bn {
                    n += bn.gamma.len() + bn.beta.len();
                }
            }
        }
        n
    }
}

// ---- checkpoint format ----------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRCNNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How gathers were normalized for training; inference must match.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Divide all channels and labels by the mixture's max |amplitude|,
    /// one scale per source gather.
    GatherMaxAbs,
}

/// Training-time metadata stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub cutoff_hz: f64,
    pub taper_hz: f64,
    pub norm: NormMode,
}

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.w.write_all(&[v])
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }
    fn f64s<'a>(&mut self, vs: impl Iterator<Item = &'a f64>) -> std::io::Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.r.read_exact(&mut b).map_err(|_| Error::format("checkpoint", "truncated"))?;
        Ok(u32::from_le_bytes(b))
    }
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.r.read_exact(&mut b).map_err(|_| Error::format("checkpoint", "truncated"))?;
        Ok(b[0])
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b).map_err(|_| Error::format("checkpoint", "truncated"))?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = Writer { w: BufWriter::new(file) };
    let run = |w: &mut Writer<BufWriter<File>>| -> std::io::Result<()> {
        w.w.write_all(CHECKPOINT_MAGIC)?;
        w.u32(CHECKPOINT_VERSION)?;
        w.f64(meta.cutoff_hz)?;
        w.f64(meta.taper_hz)?;
        w.u32(match meta.norm {
            NormMode::GatherMaxAbs => 0,
        })?;
        w.f64(model.hyper.leaky_slope)?;
        w.f64(model.hyper.dropout_rate)?;
        w.f64(model.hyper.bn_momentum)?;
        w.f64(model.hyper.bn_eps)?;
        w.u32(model.common.len() as u32)?;
        w.u32(model.gr_branch.len() as u32)?;
        w.u32(model.rl_branch.len() as u32)?;
        for section in [&model.common, &model.gr_branch, &model.rl_branch] {
            for b in section {
                w.u32(b.in_channels() as u32)?;
                w.u32(b.out_channels() as u32)?;
                w.u8(u8::from(b.bn.is_some()))?;
                w.u8(u8::from(b.dropout.is_some()))?;
                w.u8(match b.activation {
                    Activation::LeakyRelu(_) => 0,
                    Activation::Linear => 1,
                })?;
            }
        }
        for section in [&model.common, &model.gr_branch, &model.rl_branch] {
            for b in section {
                w.f64s(b.weights.iter())?;
                w.f64s(b.bias.iter())?;
                if let Some(bn) = &b.bn {
                    w.f64s(bn.gamma.iter())?;
                    w.f64s(bn.beta.iter())?;
                    w.f64s(bn.running_mean.iter())?;
                    w.f64s(bn.running_var.iter())?;
                    w.u8(u8::from(bn.initialized))?;
                }
            }
        }
        w.w.flush()
    };
    run(&mut w).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointMeta)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader { r: BufReader::new(file) };

    let mut magic = [0u8; 8];
    r.r.read_exact(&mut magic).map_err(|_| Error::format("checkpoint", "truncated"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format("magic", "not a model checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let cutoff_hz = r.f64()?;
    let taper_hz = r.f64()?;
    let norm = match r.u32()? {
        0 => NormMode::GatherMaxAbs,
        other => return Err(Error::format("norm_mode", format!("unknown mode {other}"))),
    };
    let hyper = Hyper {
        leaky_slope: r.f64()?,
        dropout_rate: r.f64()?,
        bn_momentum: r.f64()?,
        bn_eps: r.f64()?,
    };
    let n_common = r.u32()? as usize;
    let n_gr = r.u32()? as usize;
    let n_rl = r.u32()? as usize;

    struct Spec {
        c_in: usize,
        c_out: usize,
        has_bn: bool,
        has_dropout: bool,
        activation: Activation,
    }
    let mut specs = Vec::new();
    for _ in 0..n_common + n_gr + n_rl {
        let c_in = r.u32()? as usize;
        let c_out = r.u32()? as usize;
        let has_bn = r.u8()? == 1;
        let has_dropout = r.u8()? == 1;
        let activation = match r.u8()? {
            0 => Activation::LeakyRelu(hyper.leaky_slope),
            1 => Activation::Linear,
            other => return Err(Error::format("activation", format!("unknown kind {other}"))),
        };
        specs.push(Spec { c_in, c_out, has_bn, has_dropout, activation });
    }

    let mut blocks = Vec::new();
    for s in &specs {
        let weights = Array1::from_vec(r.f64s(s.c_out * s.c_in * KERNEL * KERNEL)?)
            .into_shape_with_order((s.c_out, s.c_in, KERNEL, KERNEL))
            .map_err(|e| Error::format("weights", e.to_string()))?;
        let bias = Array1::from_vec(r.f64s(s.c_out)?);
        let bn = if s.has_bn {
            let mut bn = BatchNorm::new(s.c_out, hyper.bn_momentum, hyper.bn_eps);
            bn.gamma = Array1::from_vec(r.f64s(s.c_out)?);
            bn.beta = Array1::from_vec(r.f64s(s.c_out)?);
            bn.running_mean = Array1::from_vec(r.f64s(s.c_out)?);
            bn.running_var = Array1::from_vec(r.f64s(s.c_out)?);
            bn.initialized = r.u8()? == 1;
            Some(bn)
        } else {
            None
        };
        blocks.push(ConvBlock {
            weights,
            bias,
            bn,
            activation: s.activation,
            dropout: s.has_dropout.then_some(hyper.dropout_rate),
        });
    }
    let rl_blocks = blocks.split_off(n_common + n_gr);
    let gr_blocks = blocks.split_off(n_common);
    let model = Model { common: blocks, gr_branch: gr_blocks, rl_branch: rl_blocks, hyper };
    Ok((model, CheckpointMeta { cutoff_hz, taper_hz, norm }))
}
