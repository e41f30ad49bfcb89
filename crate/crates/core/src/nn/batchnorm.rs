//! Per-channel batch normalization over (N, H, W) with running statistics.

use ndarray::{Array1, Array4};

use crate::error::{Error, Result};
use crate::par;

/// Batch statistics captured by a train-mode forward pass, needed by the
/// backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub mean: Array1<f64>,
    pub inv_std: Array1<f64>,
}

/// Batch normalization layer state. Normalization in train mode uses biased
/// batch variance; the running variance is updated with the unbiased
/// estimate, and eval mode normalizes with the stored running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    /// Set by the first train-mode forward; eval before that is an error.
    pub initialized: bool,
}

impl BatchNorm {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum,
            eps,
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel (sum, sum of squares) over batch and spatial dims,
    /// reduced in sample order.
    fn batch_moments(x: &Array4<f64>) -> (Vec<f64>, Vec<f64>) {
        let (n, c, h, w) = x.dim();
        let plane = h * w;
        let flat = x.as_slice().expect("standard layout");
        let partials = par::map_indexed(n, |i| {
            let sample = &flat[i * c * plane..][..c * plane];
            let mut sums = vec![0.0; c];
            let mut sqs = vec![0.0; c];
            for ch in 0..c {
                for &v in &sample[ch * plane..][..plane] {
                    sums[ch] += v;
                    sqs[ch] += v * v;
                }
            }
            (sums, sqs)
        });
        let mut sums = vec![0.0; c];
        let mut sqs = vec![0.0; c];
        for (s, q) in partials {
            for ch in 0..c {
                sums[ch] += s[ch];
                sqs[ch] += q[ch];
            }
        }
        (sums, sqs)
    }

    /// Train-mode forward: normalize with batch statistics and update the
    /// running mean/variance.
    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<(Array4<f64>, BnCache)> {
        let (n, c, h, w) = x.dim();
        if c != self.channels() {
            return Err(Error::Model(format!(
                "batchnorm expects {} channels, got {c}",
                self.channels()
            )));
        }
        let m = (n * h * w) as f64;
        let (sums, sqs) = Self::batch_moments(x);
        let mut mean = Array1::zeros(c);
        let mut inv_std = Array1::zeros(c);
        for ch in 0..c {
            let mu = sums[ch] / m;
            let var = (sqs[ch] / m - mu * mu).max(0.0);
            mean[ch] = mu;
            inv_std[ch] = 1.0 / (var + self.eps).sqrt();
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean[ch] =
                (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mu;
            self.running_var[ch] =
                (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
        }
        self.initialized = true;

        let out = self.normalize(x, &mean, &inv_std);
        Ok((out, BnCache { mean, inv_std }))
    }

    /// Eval-mode forward using running statistics.
    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        if !self.initialized {
            return Err(Error::Model(
                "batchnorm statistics uninitialized: run a training step first".into(),
            ));
        }
        let c = self.channels();
        if x.dim().1 != c {
            return Err(Error::Model(format!("batchnorm expects {c} channels, got {}", x.dim().1)));
        }
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        Ok(self.normalize(x, &self.running_mean, &inv_std))
    }

    fn normalize(&self, x: &Array4<f64>, mean: &Array1<f64>, inv_std: &Array1<f64>) -> Array4<f64> {
        let (_, c, h, w) = x.dim();
        let plane = h * w;
        let flat = x.as_slice().expect("standard layout");
        let mut out = x.clone();
        {
            let out_flat = out.as_slice_mut().unwrap();
            par::for_each_chunk_mut(out_flat, c * plane, |i, chunk| {
                let src = &flat[i * c * plane..][..c * plane];
                for ch in 0..c {
                    let (mu, is) = (mean[ch], inv_std[ch]);
                    let (g, b) = (self.gamma[ch], self.beta[ch]);
                    for (o, &v) in
                        chunk[ch * plane..][..plane].iter_mut().zip(&src[ch * plane..][..plane])
                    {
                        *o = g * (v - mu) * is + b;
                    }
                }
            });
        }
        out
    }

    /// Backward through the train-mode normalization, including the batch
    /// statistics. Returns (grad_input, grad_gamma, grad_beta).
    pub fn backward(
        &self,
        x: &Array4<f64>,
        cache: &BnCache,
        grad_out: &Array4<f64>,
    ) -> Result<(Array4<f64>, Array1<f64>, Array1<f64>)> {
        let (n, c, h, w) = x.dim();
        if grad_out.dim() != x.dim() {
            return Err(Error::Model("batchnorm backward shape mismatch".into()));
        }
        let plane = h * w;
        let m = (n * plane) as f64;
        let x_flat = x.as_slice().expect("standard layout");
        let g_flat = grad_out.as_slice().expect("standard layout");

        // dgamma = Σ dy·x̂, dbeta = Σ dy (per channel, sample-ordered sums).
        let partials = par::map_indexed(n, |i| {
            let xs = &x_flat[i * c * plane..][..c * plane];
            let gs = &g_flat[i * c * plane..][..c * plane];
            let mut dg = vec![0.0; c];
            let mut db = vec![0.0; c];
            for ch in 0..c {
                let (mu, is) = (cache.mean[ch], cache.inv_std[ch]);
                for (&xv, &gv) in xs[ch * plane..][..plane].iter().zip(&gs[ch * plane..][..plane])
                {
                    dg[ch] += gv * (xv - mu) * is;
                    db[ch] += gv;
                }
            }
            (dg, db)
        });
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        for (dg, db) in partials {
            for ch in 0..c {
                dgamma[ch] += dg[ch];
                dbeta[ch] += db[ch];
            }
        }

        // dx = (γ·inv_std)·(dy − mean(dy) − x̂·mean(dy·x̂))
        let mut grad_in = Array4::zeros(x.dim());
        {
            let gi_flat = grad_in.as_slice_mut().unwrap();
            par::for_each_chunk_mut(gi_flat, c * plane, |i, chunk| {
                let xs = &x_flat[i * c * plane..][..c * plane];
                let gs = &g_flat[i * c * plane..][..c * plane];
                for ch in 0..c {
                    let (mu, is) = (cache.mean[ch], cache.inv_std[ch]);
                    let scale = self.gamma[ch] * is;
                    let mean_dy = dbeta[ch] / m;
                    let mean_dy_xhat = dgamma[ch] / m;
                    for ((o, &xv), &gv) in chunk[ch * plane..][..plane]
                        .iter_mut()
                        .zip(&xs[ch * plane..][..plane])
                        .zip(&gs[ch * plane..][..plane])
                    {
                        let xhat = (xv - mu) * is;
                        *o = scale * (gv - mean_dy - xhat * mean_dy_xhat);
                    }
                }
            });
        }
        Ok((grad_in, dgamma, dbeta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random4(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dims, |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random4(&mut rng, (4, 3, 5, 5));
        let mut bn = BatchNorm::new(3, 0.1, 1e-5);
        let (y, _) = bn.forward_train(&x).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> =
                y.index_axis(ndarray::Axis(1), ch).iter().cloned().collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6, "mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "var {v}");
        }
    }

    #[test]
    fn inverse_parameterization_recovers_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random4(&mut rng, (2, 2, 4, 4));
        let mut bn = BatchNorm::new(2, 0.1, 1e-12);
        // First run to learn the batch stats, then set gamma/beta to invert.
        let (_, cache) = bn.forward_train(&x).unwrap();
        for ch in 0..2 {
            bn.gamma[ch] = 1.0 / cache.inv_std[ch];
            bn.beta[ch] = cache.mean[ch];
        }
        let (y, _) = bn.forward_train(&x).unwrap();
        let err = (&y - &x).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-6, "max err {err}");
    }

    #[test]
    fn eval_before_training_is_an_error() {
        let bn = BatchNorm::new(2, 0.1, 1e-5);
        let x = Array4::zeros((1, 2, 3, 3));
        assert!(bn.forward_eval(&x).is_err());
    }

    #[test]
    fn running_stats_follow_the_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random4(&mut rng, (2, 1, 8, 8)).mapv(|v| v * 3.0 + 5.0);
        let mut bn = BatchNorm::new(1, 0.1, 1e-5);
        for _ in 0..200 {
            bn.forward_train(&x).unwrap();
        }
        // Repeated identical batches converge the running stats onto them.
        let vals: Vec<f64> = x.iter().cloned().collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var =
            vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (vals.len() as f64 - 1.0);
        assert!((bn.running_mean[0] - m).abs() < 1e-6);
        assert!((bn.running_var[0] - var).abs() < 1e-4);
        // Eval mode then nearly standardizes that same batch.
        let y = bn.forward_eval(&x).unwrap();
        let ym = y.iter().sum::<f64>() / y.len() as f64;
        assert!(ym.abs() < 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random4(&mut rng, (2, 3, 4, 4));
        let probe = random4(&mut rng, (2, 3, 4, 4));
        let mut bn = BatchNorm::new(3, 0.1, 1e-5);
        for ch in 0..3 {
            bn.gamma[ch] = rng.gen_range(0.5..1.5);
            bn.beta[ch] = rng.gen_range(-0.5..0.5);
        }
        let loss = |bn: &BatchNorm, x: &Array4<f64>| -> f64 {
            let mut b = bn.clone();
            let (y, _) = b.forward_train(x).unwrap();
            y.iter().zip(probe.iter()).map(|(a, p)| a * p).sum()
        };
        let (y, cache) = bn.clone().forward_train(&x).unwrap();
        assert_eq!(y.dim(), x.dim());
        let (gin, dgamma, dbeta) = bn.backward(&x, &cache, &probe).unwrap();

        let h = 1e-5;
        let rel = |fd: f64, an: f64| (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);

        let mut xm = x.clone();
        for idx in [[0, 0, 0, 0], [1, 2, 3, 3], [0, 1, 2, 1]] {
            let orig = xm[idx];
            xm[idx] = orig + h;
            let up = loss(&bn, &xm);
            xm[idx] = orig - h;
            let down = loss(&bn, &xm);
            xm[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(rel(fd, gin[idx]) < 1e-5, "dx {idx:?}: fd={fd}, an={}", gin[idx]);
        }
        for ch in 0..3 {
            let mut b2 = bn.clone();
            b2.gamma[ch] += h;
            let up = loss(&b2, &x);
            b2.gamma[ch] -= 2.0 * h;
            let down = loss(&b2, &x);
            let fd = (up - down) / (2.0 * h);
            assert!(rel(fd, dgamma[ch]) < 1e-5, "dgamma {ch}: fd={fd}, an={}", dgamma[ch]);

            let mut b3 = bn.clone();
            b3.beta[ch] += h;
            let up = loss(&b3, &x);
            b3.beta[ch] -= 2.0 * h;
            let down = loss(&b3, &x);
            let fd = (up - down) / (2.0 * h);
            assert!(rel(fd, dbeta[ch]) < 1e-5, "dbeta {ch}: fd={fd}, an={}", dbeta[ch]);
        }
    }
}
