//! LeakyReLU, linear activation, and inverted dropout.

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Linear,
}

impl Activation {
    pub fn apply_in_place(&self, x: &mut Array4<f64>) {
        if let Activation::LeakyRelu(slope) = *self {
            for v in x.iter_mut() {
                if *v < 0.0 {
                    *v *= slope;
                }
            }
        }
    }

    /// Gradient factor given the activation *output*. Valid because the
    /// LeakyReLU slope is positive, so output sign equals input sign; the
    /// kink at exactly 0 takes the positive-side derivative.
    pub fn backward_factor(&self, output: f64) -> f64 {
        match *self {
            Activation::LeakyRelu(slope) => {
                if output < 0.0 {
                    slope
                } else {
                    1.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// y = x for x ≥ 0, slope·x otherwise.
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x < 0.0 {
        slope * x
    } else {
        x
    }
}

/// Derivative of [`leaky_relu`] w.r.t. its input (1 at x = 0).
pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x < 0.0 {
        slope
    } else {
        1.0
    }
}

/// Inverted dropout. Train mode zeroes each unit with probability `rate`
/// and scales survivors by 1/(1−rate); eval mode is the identity. Returns
/// the output and the keep mask (all ones in eval mode). Deterministic for
/// a given seed, independent of thread count: each sample draws from its
/// own counter-derived stream.
pub fn dropout(x: &Array4<f64>, rate: f64, seed: u64, train: bool) -> Result<(Array4<f64>, Vec<u8>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("rate", format!("must be in [0, 1), got {rate}")));
    }
    let len = x.len();
    if !train || rate == 0.0 {
        return Ok((x.clone(), vec![1u8; len]));
    }
    let (n, c, h, w) = x.dim();
    let plane = c * h * w;
    let keep = 1.0 - rate;
    let inv_keep = 1.0 / keep;
    let mut out = x.clone();
    let mut mask = vec![0u8; len];

    let flat = out.as_slice_mut().expect("standard layout");
    // One RNG stream per sample keeps masks independent of scheduling.
    let masks = par::map_indexed(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
        let mut m = vec![0u8; plane];
        for b in m.iter_mut() {
            *b = u8::from(rng.gen::<f64>() >= rate);
        }
        m
    });
    for (i, m) in masks.iter().enumerate() {
        mask[i * plane..][..plane].copy_from_slice(m);
    }
    par::for_each_chunk_mut(flat, plane, |i, chunk| {
        for (v, &keep_it) in chunk.iter_mut().zip(&masks[i]) {
            *v = if keep_it == 1 { *v * inv_keep } else { 0.0 };
        }
    });
    Ok((out, mask))
}

/// SplitMix64-style combiner for deriving per-sample/per-block streams.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
