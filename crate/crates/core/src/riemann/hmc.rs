use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::MetricField;
use crate::error::{Error, Result};

const FIXED_POINT_ITERS: usize = 3;

/// Unnormalized log density of the sampling target.
pub trait LogTarget {
    fn log_density(&self, z: &[f64]) -> f64;
    fn grad_log_density(&self, z: &[f64]) -> Vec<f64>;
}

/// Isotropic Gaussian target `N(mean, variance·I)`.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl GaussianTarget {
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], variance: 1.0 }
    }
}

impl LogTarget for GaussianTarget {
    fn log_density(&self, z: &[f64]) -> f64 {
        -0.5 * z.iter().zip(&self.mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / self.variance
    }

    fn grad_log_density(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).map(|(a, b)| -(a - b) / self.variance).collect()
    }
}

/// Adapts a plain closure; the gradient is taken by central differences.
pub struct FnTarget<F>(pub F);

impl<F: Fn(&[f64]) -> f64> LogTarget for FnTarget<F> {
    fn log_density(&self, z: &[f64]) -> f64 {
        (self.0)(z)
    }

    fn grad_log_density(&self, z: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let mut p = z.to_vec();
        (0..z.len())
            .map(|i| {
                p[i] = z[i] + h;
                let up = (self.0)(&p);
                p[i] = z[i] - h;
                let dn = (self.0)(&p);
                p[i] = z[i];
                (up - dn) / (2.0 * h)
            })
            .collect()
    }
}

/// Position and velocity of the fictive particle.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub z: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhasePoint {
    pub fn new(z: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if z.len() != v.len() {
            return Err(Error::DimensionMismatch { expected: z.len(), got: v.len() });
        }
        Ok(Self { z, v })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhmcConfig {
    pub step: f64,
    pub n_leapfrog: usize,
    pub metropolis: bool,
}

impl Default for RhmcConfig {
    fn default() -> Self {
        Self { step: 0.01, n_leapfrog: 3, metropolis: true }
    }
}

/// `K(v, z) = ½[ln((2π)^d |G(z)|) + vᵀ G⁻¹(z) v]`.
pub fn kinetic_energy(field: &MetricField, p: &PhasePoint) -> Result<f64> {
    let d = field.dim() as f64;
    let inv = field.inverse_metric(&p.z)?;
    if p.v.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: p.v.len() });
    }
    let v = DVector::from_column_slice(&p.v);
    let quad = v.dot(&(&inv * &v));
    let log_det_g = 2.0 * field.log_sqrt_det_metric(&p.z)?;
    Ok(0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det_g + quad))
}

/// `H = −ln p(z) + K(v, z)`.
pub fn hamiltonian<T: LogTarget + ?Sized>(field: &MetricField, p: &PhasePoint, target: &T) -> Result<f64> {
    let lp = target.log_density(&p.z);
    if !lp.is_finite() {
        return Err(Error::NonFinite(format!("log target is {lp}")));
    }
    Ok(-lp + kinetic_energy(field, p)?)
}

/// `∂H/∂z` with `M = G⁻¹`:
/// `−∇ln p + ½ vᵀ ∂M_l v − ½ tr(G ∂M_l)`.
fn dh_dz<T: LogTarget + ?Sized>(field: &MetricField, z: &[f64], v: &DVector<f64>, target: &T) -> Result<DVector<f64>> {
    let mut g: DVector<f64> = DVector::from_vec(target.grad_log_density(z)).map(|x| -x);
    if field.is_constant() {
        return Ok(g);
    }
    let metric = field.metric(z)?;
    for (l, dm) in field.inverse_metric_grad(z)?.iter().enumerate() {
        let quad = v.dot(&(dm * v));
        let tr = (&metric * dm).trace();
        g[l] += 0.5 * quad - 0.5 * tr;
    }
    Ok(g)
}

fn finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!("non-finite {what} during leapfrog")))
    }
}

/// One generalized leapfrog step (implicit half-steps solved by a fixed
/// number of fixed-point iterations). Reduces to the explicit leapfrog when
/// the metric is constant.
pub fn leapfrog_step<T: LogTarget + ?Sized>(
    field: &MetricField,
    p: &PhasePoint,
    step: f64,
    target: &T,
) -> Result<PhasePoint> {
    if !(step > 0.0) {
        return Err(Error::Domain(format!("leapfrog step {step} must be positive")));
    }
    if p.z.len() != field.dim() || p.v.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: p.z.len() });
    }
    let h = 0.5 * step;
    let z0 = DVector::from_column_slice(&p.z);
    let v0 = DVector::from_column_slice(&p.v);

    let iters = if field.is_constant() { 1 } else { FIXED_POINT_ITERS };
    let mut v_half = v0.clone();
    for _ in 0..iters {
        v_half = &v0 - dh_dz(field, z0.as_slice(), &v_half, target)? * h;
    }
    finite(&v_half, "velocity")?;

    let m0 = field.inverse_metric(z0.as_slice())?;
    let mut z1 = &z0 + &m0 * &v_half * step;
    if !field.is_constant() {
        let m0v = &m0 * &v_half;
        for _ in 0..FIXED_POINT_ITERS {
            let m1 = field.inverse_metric(z1.as_slice())?;
            z1 = &z0 + (&m0v + &m1 * &v_half) * h;
        }
    }
    finite(&z1, "position")?;

    let v1 = &v_half - dh_dz(field, z1.as_slice(), &v_half, target)? * h;
    finite(&v1, "velocity")?;
    Ok(PhasePoint { z: z1.as_slice().to_vec(), v: v1.as_slice().to_vec() })
}

fn trajectory<T: LogTarget + ?Sized>(
    field: &MetricField,
    mut p: PhasePoint,
    config: &RhmcConfig,
    target: &T,
) -> Result<PhasePoint> {
    for _ in 0..config.n_leapfrog {
        p = leapfrog_step(field, &p, config.step, target)?;
    }
    Ok(p)
}

/// Draws `v ∼ N(0, G(z))`.
fn sample_velocity<R: Rng + ?Sized>(field: &MetricField, z: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let xi: DVector<f64> = DVector::from_fn(field.dim(), |_, _| rng.sample(StandardNormal));
    if field.is_constant() {
        let s = (1.0 / field.regularization()).sqrt();
        return Ok((xi * s).as_slice().to_vec());
    }
    let g: DMatrix<f64> = field.metric(z)?;
    let chol = g.cholesky().ok_or(Error::Singular { condition: f64::INFINITY })?;
    Ok((chol.l() * xi).as_slice().to_vec())
}

/// Riemannian HMC chain of `n_steps` transitions from `init`, with a full
/// momentum refresh per transition. Without Metropolis correction the chain
/// is a deterministic-given-noise flow and divergences are errors; with it,
/// divergent proposals are rejected.
pub fn rhmc_sample<T: LogTarget + ?Sized, R: Rng + ?Sized>(
    field: &MetricField,
    init: &[f64],
    n_steps: usize,
    config: &RhmcConfig,
    target: &T,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if init.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: init.len() });
    }
    let mut z = init.to_vec();
    for _ in 0..n_steps {
        let v = sample_velocity(field, &z, rng)?;
        let start = PhasePoint { z: z.clone(), v };
        if !config.metropolis {
            z = trajectory(field, start, config, target)?.z;
            continue;
        }
        let h0 = hamiltonian(field, &start, target)?;
        let u: f64 = rng.random();
        let proposal = trajectory(field, start, config, target);
        let accepted = match proposal {
            Ok(p) => match hamiltonian(field, &p, target) {
                Ok(h1) if h1.is_finite() && u.ln() < h0 - h1 => Some(p.z),
                _ => None,
            },
            Err(Error::Divergence(_)) | Err(Error::NonFinite(_)) | Err(Error::Singular { .. }) => None,
            Err(e) => return Err(e),
        };
        if let Some(nz) = accepted {
            z = nz;
        }
    }
    Ok(z)
}
