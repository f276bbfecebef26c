use nalgebra::{DMatrix, DVector};

use super::MetricField;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicOptions {
    pub knots: usize,
    pub iters: usize,
    pub lr: f64,
    pub tol: f64,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self { knots: 16, iters: 500, lr: 1e-2, tol: 1e-8 }
    }
}

/// Discretized curve between two fixed endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicCurve {
    pub knots: Vec<Vec<f64>>,
    /// Energy after initialization and after every accepted update.
    pub energy_history: Vec<f64>,
    pub start_fixed: bool,
    pub end_fixed: bool,
    /// False when the iteration budget ran out before the energy settled.
    pub converged: bool,
}

impl GeodesicCurve {
    pub fn energy(&self) -> f64 {
        *self.energy_history.last().expect("history starts with the initial energy")
    }
}

/// `Σ_k Δ_kᵀ G(z̄_k) Δ_k` with `Δ_k = z_{k+1} − z_k` and `z̄_k` the midpoint.
pub fn geodesic_energy(field: &MetricField, knots: &[Vec<f64>]) -> Result<f64> {
    let mut e = 0.0;
    for w in knots.windows(2) {
        let (delta, mid) = segment(&w[0], &w[1]);
        let g = field.metric(mid.as_slice())?;
        e += delta.dot(&(&g * &delta));
    }
    Ok(e)
}

fn segment(a: &[f64], b: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let a = DVector::from_column_slice(a);
    let b = DVector::from_column_slice(b);
    (&b - &a, (&a + &b) * 0.5)
}

/// Gradient of [`geodesic_energy`] with respect to every knot (endpoint rows
/// included; callers zero them when the endpoints are fixed).
pub fn geodesic_energy_grad(field: &MetricField, knots: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = field.dim();
    let mut grad = vec![DVector::<f64>::zeros(d); knots.len()];
    for (k, w) in knots.windows(2).enumerate() {
        let (delta, mid) = segment(&w[0], &w[1]);
        let g: DMatrix<f64> = field.metric(mid.as_slice())?;
        let gd = &g * &delta;
        // ∂/∂z̄ (Δᵀ G Δ) = −(GΔ)ᵀ ∂G⁻¹_l (GΔ), split evenly over both knots
        let mut dmid = DVector::zeros(d);
        if !field.is_constant() {
            for (l, dm) in field.inverse_metric_grad(mid.as_slice())?.iter().enumerate() {
                dmid[l] = -gd.dot(&(dm * &gd));
            }
        }
        grad[k] += &dmid * 0.5 - &gd * 2.0;
        grad[k + 1] += &dmid * 0.5 + &gd * 2.0;
    }
    Ok(grad.into_iter().map(|g| g.as_slice().to_vec()).collect())
}

/// Minimizes the discrete energy over interior knots by gradient descent
/// starting from the straight segment. Updates that raise the energy are
/// rejected and the step is halved, so the recorded energy never increases.
pub fn geodesic_path(field: &MetricField, a: &[f64], b: &[f64], opts: &GeodesicOptions) -> Result<GeodesicCurve> {
    let d = field.dim();
    for p in [a, b] {
        if p.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: p.len() });
        }
    }
    if opts.knots < 2 {
        return Err(Error::Domain("a geodesic needs at least two knots".into()));
    }
    if a == b {
        return Err(Error::Domain("geodesic endpoints coincide".into()));
    }
    let k = opts.knots;
    let mut knots: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let t = i as f64 / (k - 1) as f64;
            a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
        })
        .collect();
    knots[0] = a.to_vec();
    knots[k - 1] = b.to_vec();

    let mut energy = geodesic_energy(field, &knots)?;
    let mut history = vec![energy];
    let mut converged = k == 2;
    let mut lr = opts.lr;
    let mut it = 0;
    while !converged && it < opts.iters {
        it += 1;
        let grad = geodesic_energy_grad(field, &knots)?;
        let grad_norm: f64 = grad[1..k - 1].iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < 1e-12 {
            converged = true;
            break;
        }
        let candidate: Vec<Vec<f64>> =
            knots
                .iter()
                .zip(&grad)
                .enumerate()
                .map(|(i, (z, g))| {
                    if i == 0 || i == k - 1 {
                        z.clone()
                    } else {
                        z.iter().zip(g).map(|(zi, gi)| zi - lr * gi).collect()
                    }
                })
                .collect();
        let e_new = geodesic_energy(field, &candidate)?;
        if !e_new.is_finite() || e_new > energy {
            lr *= 0.5;
            if lr < 1e-14 {
                converged = true;
            }
            continue;
        }
        let decrease = energy - e_new;
        knots = candidate;
        energy = e_new;
        history.push(energy);
        if decrease < opts.tol {
            converged = true;
        }
    }
    Ok(GeodesicCurve { knots, energy_history: history, start_fixed: true, end_fixed: true, converged })
}
