//! Combined similarity + discriminative loss.
//!
//! loss = mean((r̂_low − r_low)²) + mean((ĝ − g)²) + mean((ĝ + r̂_low − m_low)²)
//!        − λ·mean(|r̂_low − ĝ|)
//!
//! Every norm is averaged per element so λ keeps its meaning across batch
//! and patch sizes. The L1 gradient uses sign() with sign(0) = 0.

use ndarray::Array4;

use crate::error::{Error, Result};

/// Loss split into its two parts: `similarity` is the three squared-error
/// terms, `discriminative` is the unweighted mean |r̂_low − ĝ| (entering the
/// total as −λ·discriminative).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub similarity: f64,
    pub discriminative: f64,
}

fn check_dims(
    g_hat: &Array4<f64>,
    r_low_hat: &Array4<f64>,
    g: &Array4<f64>,
    r_low: &Array4<f64>,
    m_low: &Array4<f64>,
) -> Result<()> {
    let d = g_hat.dim();
    for (name, a) in [("r_low_hat", r_low_hat), ("g", g), ("r_low", r_low), ("m_low", m_low)] {
        if a.dim() != d {
            return Err(Error::invalid(
                "loss",
                format!("{name} has shape {:?}, expected {:?}", a.dim(), d),
            ));
        }
    }
    Ok(())
}

pub fn combined_loss(
    g_hat: &Array4<f64>,
    r_low_hat: &Array4<f64>,
    g: &Array4<f64>,
    r_low: &Array4<f64>,
    m_low: &Array4<f64>,
    lambda: f64,
) -> Result<LossValue> {
    if lambda < 0.0 {
        return Err(Error::invalid("lambda", "must be >= 0"));
    }
    check_dims(g_hat, r_low_hat, g, r_low, m_low)?;
    let count = g_hat.len() as f64;
    let mut sq_r = 0.0;
    let mut sq_g = 0.0;
    let mut sq_sum = 0.0;
    let mut l1 = 0.0;
    for ((((&gh, &rh), &gv), &rv), &mv) in g_hat
        .iter()
        .zip(r_low_hat.iter())
        .zip(g.iter())
        .zip(r_low.iter())
        .zip(m_low.iter())
    {
        sq_r += (rh - rv) * (rh - rv);
        sq_g += (gh - gv) * (gh - gv);
        let s = gh + rh - mv;
        sq_sum += s * s;
        l1 += (rh - gh).abs();
    }
    let similarity = (sq_r + sq_g + sq_sum) / count;
    let discriminative = l1 / count;
    Ok(LossValue { total: similarity - lambda * discriminative, similarity, discriminative })
}

/// Loss plus its gradients w.r.t. the two network outputs.
pub fn combined_loss_grads(
    g_hat: &Array4<f64>,
    r_low_hat: &Array4<f64>,
    g: &Array4<f64>,
    r_low: &Array4<f64>,
    m_low: &Array4<f64>,
    lambda: f64,
) -> Result<(LossValue, Array4<f64>, Array4<f64>)> {
    let value = combined_loss(g_hat, r_low_hat, g, r_low, m_low, lambda)?;
    let count = g_hat.len() as f64;
    let mut d_g = Array4::zeros(g_hat.dim());
    let mut d_r = Array4::zeros(g_hat.dim());
    for (i, (dg, dr)) in d_g.iter_mut().zip(d_r.iter_mut()).enumerate() {
        let gh = g_hat.as_slice().unwrap()[i];
        let rh = r_low_hat.as_slice().unwrap()[i];
        let gv = g.as_slice().unwrap()[i];
        let rv = r_low.as_slice().unwrap()[i];
        let mv = m_low.as_slice().unwrap()[i];
        let sum_res = gh + rh - mv;
        let sign = (rh - gh).signum() * f64::from(rh != gh);
        *dg = (2.0 * (gh - gv) + 2.0 * sum_res + lambda * sign) / count;
        *dr = (2.0 * (rh - rv) + 2.0 * sum_res - lambda * sign) / count;
    }
    Ok((value, d_g, d_r))
}
