//! Loss terms and their gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use super::Tensor;
use crate::error::{Error, Result};
use crate::sphere::UnitVector;

/// Side length of the padded frame every model consumes and produces.
pub const FRAME: usize = 68;
/// Pixels around the edge excluded from the reconstruction loss.
pub const BORDER: usize = 2;

/// Loss terms for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub regularization: f64,
    pub spread: f64,
    pub spread_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(reconstruction: f64, regularization: f64, spread: f64, spread_weight: f64) -> Self {
        let total = reconstruction + regularization + spread_weight * spread;
        Self { reconstruction, regularization, spread, spread_weight, total }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.reconstruction.is_finite() && self.regularization.is_finite()
    }
}

fn check_frames(x: &Tensor, x_hat: &Tensor) -> Result<(usize, usize)> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x.shape(), x_hat.shape())));
    }
    let sh = x.shape();
    if sh.len() != 4 || sh[2] != FRAME || sh[3] != FRAME {
        return Err(Error::Shape(format!("expected [B, C, {FRAME}, {FRAME}], got {sh:?}")));
    }
    Ok((sh[0], sh[1]))
}

/// Per-item sum of squared differences over the central region, summed over
/// channels.
pub fn masked_sse_per_item(x: &Tensor, x_hat: &Tensor) -> Result<Vec<f64>> {
    let (b, c) = check_frames(x, x_hat)?;
    let lo = BORDER;
    let hi = FRAME - BORDER;
    let mut out = vec![0.0f64; b];
    for (i, o) in out.iter_mut().enumerate() {
        let (xa, xb) = (x.item(i), x_hat.item(i));
        for ch in 0..c {
            for y in lo..hi {
                let row = (ch * FRAME + y) * FRAME;
                for xx in lo..hi {
                    let d = (xb[row + xx] - xa[row + xx]) as f64;
                    *o += d * d;
                }
            }
        }
    }
    Ok(out)
}

/// Batch mean of the masked sum of squared errors.
pub fn masked_reconstruction_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    let per = masked_sse_per_item(x, x_hat)?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

/// Gradient of [`masked_reconstruction_loss`] with respect to `x_hat`.
pub fn masked_reconstruction_grad(x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    let (b, c) = check_frames(x, x_hat)?;
    let mut g = Tensor::zeros(x.shape());
    let scale = 2.0 / b as f32;
    for i in 0..b {
        let (xa, xb) = (x.item(i), x_hat.item(i));
        let gi = g.item_mut(i);
        for ch in 0..c {
            for y in BORDER..FRAME - BORDER {
                let row = (ch * FRAME + y) * FRAME;
                for xx in BORDER..FRAME - BORDER {
                    gi[row + xx] = scale * (xb[row + xx] - xa[row + xx]);
                }
            }
        }
    }
    Ok(g)
}

/// `KL(N(μ, σ²I) ‖ N(0, I)) = ½ Σᵢ (μᵢ² + σ² − 1 − ln σ²)`.
pub fn kl_gaussian_standard(mu: &[f64], sigma: f64) -> f64 {
    let m = mu.len() as f64;
    let s2 = sigma * sigma;
    let kl = 0.5 * (mu.iter().map(|x| x * x).sum::<f64>() + m * s2 - m - m * s2.ln());
    kl.max(0.0)
}

/// `(∂KL/∂μ, ∂KL/∂σ)`.
pub fn kl_gaussian_standard_grad(mu: &[f64], sigma: f64) -> (Vec<f64>, f64) {
    let m = mu.len() as f64;
    (mu.to_vec(), m * sigma - m / sigma)
}

/// `z = μ + σ ε` with `ε ∼ N(0, I)`; returns `(z, ε)`.
pub fn reparameterize_gaussian<R: Rng + ?Sized>(mu: &[f64], sigma: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let eps: Vec<f64> = mu.iter().map(|_| rng.sample(StandardNormal)).collect();
    let z = mu.iter().zip(&eps).map(|(m, e)| m + sigma * e).collect();
    (z, eps)
}

/// Mean inner product over ordered pairs `i ≠ j`:
/// `(‖Σz‖² − N) / (N(N−1))`.
pub fn spread_loss(batch: &[UnitVector]) -> Result<f64> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::Domain(format!("spread loss needs at least 2 points, got {n}")));
    }
    let m = batch[0].dim();
    let mut s = vec![0.0; m];
    for z in batch {
        if z.dim() != m {
            return Err(Error::DimensionMismatch { expected: m, got: z.dim() });
        }
        s.iter_mut().zip(z.as_slice()).for_each(|(a, b)| *a += b);
    }
    // unit norm is a type invariant, so the diagonal contributes exactly N
    let total: f64 = s.iter().map(|x| x * x).sum();
    Ok((total - n as f64) / (n * (n - 1)) as f64)
}

pub(crate) fn spread_loss_raw(rows: &[&[f64]]) -> Result<f64> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Domain(format!("spread loss needs at least 2 points, got {n}")));
    }
    let m = rows[0].len();
    let mut s = vec![0.0; m];
    let mut sq = 0.0;
    for r in rows {
        if r.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: r.len() });
        }
        s.iter_mut().zip(*r).for_each(|(a, b)| *a += b);
        sq += r.iter().map(|x| x * x).sum::<f64>();
    }
    let total: f64 = s.iter().map(|x| x * x).sum();
    // Σ‖zᵢ‖² equals N for unit rows
    Ok((total - sq) / (n * (n - 1)) as f64)
}

/// Gradient of the spread loss with respect to each `zᵢ`: `2(Σz − zᵢ)/(N(N−1))`.
pub fn spread_loss_grad(rows: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    let mut s = vec![0.0; m];
    for r in rows {
        s.iter_mut().zip(*r).for_each(|(a, b)| *a += b);
    }
    let c = 2.0 / (n * (n.saturating_sub(1))).max(1) as f64;
    rows.iter().map(|r| s.iter().zip(*r).map(|(a, b)| c * (a - b)).collect()).collect()
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
