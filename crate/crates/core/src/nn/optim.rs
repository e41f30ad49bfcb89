//! RMSprop: v ← ρ·v + (1−ρ)·g², param ← param − lr·g/(√v + ε).

use crate::error::{Error, Result};

/// One RMSprop update on a flat parameter slice.
pub fn rmsprop_step(param: &mut [f64], grad: &[f64], v: &mut [f64], lr: f64, rho: f64, eps: f64) {
    for ((p, &g), vi) in param.iter_mut().zip(grad).zip(v.iter_mut()) {
        *vi = rho * *vi + (1.0 - rho) * g * g;
        *p -= lr * g / (vi.sqrt() + eps);
    }
}

/// Optimizer state: one squared-gradient accumulator per parameter tensor,
/// lazily shaped on the first step.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    v: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64, rho: f64, eps: f64) -> Self {
        RmsProp { lr, rho, eps, v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Model(format!(
                "optimizer got {} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.v.is_empty() {
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.v.iter_mut()) {
            if p.len() != g.len() || p.len() != v.len() {
                return Err(Error::Model("optimizer shape mismatch".into()));
            }
            rmsprop_step(p, g, v, self.lr, self.rho, self.eps);
        }
        Ok(())
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.v
    }
}
