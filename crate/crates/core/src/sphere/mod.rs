//! Hypersphere geometry and von Mises–Fisher numerics.

mod bessel;
mod vmf;

pub use bessel::{
    bessel_ratio, log_bessel_i, log_bessel_ratio, log_vmf_normalizer, mean_resultant_length,
    mean_resultant_length_derivative,
};
pub use vmf::{
    kl_vmf_uniform, kl_vmf_uniform_grad, sample_omega, sample_omega_draw, sample_omega_with_limit,
    sample_uniform_sphere, sample_vmf, sample_vmf_draw, vmf_log_pdf, OmegaDraw, VmfDraw, VmfParams,
    MAX_REJECTION_ITERATIONS,
};

use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-6;
const HOUSEHOLDER_EPS: f64 = 1e-8;

/// A point on S^(m−1).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps `components` after checking that they already have unit norm.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("unit vector must have at least one component".into()));
        }
        let n = norm(&components);
        if !n.is_finite() || (n - 1.0).abs() > NORM_TOL {
            return Err(Error::Domain(format!("vector norm {n} is not 1")));
        }
        Ok(Self(components))
    }

    /// Projects a non-zero vector onto the sphere.
    pub fn normalize(mut components: Vec<f64>) -> Result<Self> {
        let n = norm(&components);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain("cannot normalize a zero or non-finite vector".into()));
        }
        components.iter_mut().for_each(|c| *c /= n);
        Ok(Self(components))
    }

    /// The i-th standard basis vector of R^m.
    pub fn basis(m: usize, i: usize) -> Self {
        assert!(i < m, "basis index {i} out of range for dimension {m}");
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        Self(v)
    }

    pub(crate) fn from_raw_unchecked(components: Vec<f64>) -> Self {
        Self(components)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> Result<f64> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }
}

impl std::ops::Neg for UnitVector {
    type Output = UnitVector;
    fn neg(self) -> UnitVector {
        UnitVector(self.0.into_iter().map(|x| -x).collect())
    }
}

/// Reflection `H = I − 2hhᵀ` sending e₁ to μ.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholderReflection {
    h: UnitVector,
    identity: bool,
}

impl HouseholderReflection {
    pub fn axis(&self) -> &UnitVector {
        &self.h
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// `H z` for an arbitrary (not necessarily unit) vector.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        if self.identity {
            return z.to_vec();
        }
        let h = self.h.as_slice();
        let proj = 2.0 * dot(h, z);
        z.iter().zip(h).map(|(zi, hi)| zi - proj * hi).collect()
    }

    pub fn apply_unit(&self, z: &UnitVector) -> Result<UnitVector> {
        check_same_dim(self.dim(), z.dim())?;
        Ok(UnitVector(self.apply(z.as_slice())))
    }
}

/// Builds the reflection taking e₁ to `mu`. Degenerates to the identity when
/// μ is within 1e−8 of e₁, where the axis direction is undefined.
pub fn householder(mu: &UnitVector) -> HouseholderReflection {
    let mut a: Vec<f64> = mu.as_slice().iter().map(|x| -x).collect();
    a[0] += 1.0;
    let n = norm(&a);
    if n < HOUSEHOLDER_EPS {
        return HouseholderReflection { h: UnitVector::basis(mu.dim(), 0), identity: true };
    }
    a.iter_mut().for_each(|x| *x /= n);
    HouseholderReflection { h: UnitVector(a), identity: false }
}

/// Great-circle distance in [0, π].
pub fn geodesic_distance(z1: &UnitVector, z2: &UnitVector) -> Result<f64> {
    check_same_dim(z1.dim(), z2.dim())?;
    let c = dot(&z1.0, &z2.0) / (norm(&z1.0) * norm(&z2.0));
    Ok(c.clamp(-1.0, 1.0).acos())
}

/// Constant-speed interpolation along the great circle from `z1` to `z2`.
pub fn slerp(z1: &UnitVector, z2: &UnitVector, t: f64) -> Result<UnitVector> {
    check_same_dim(z1.dim(), z2.dim())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("interpolation parameter t={t} outside [0, 1]")));
    }
    let c = dot(&z1.0, &z2.0).clamp(-1.0, 1.0);
    if c < -1.0 + NORM_TOL {
        return Err(Error::Antipodal);
    }
    let theta = c.acos();
    if theta < 1e-12 {
        return Ok(z1.clone());
    }
    let s = theta.sin();
    let w1 = ((1.0 - t) * theta).sin() / s;
    let w2 = (t * theta).sin() / s;
    let v: Vec<f64> = z1.0.iter().zip(&z2.0).map(|(a, b)| w1 * a + w2 * b).collect();
    // renormalize to absorb rounding in the weights
    UnitVector::normalize(v)
}

/// `r^m · 2π^{m/2} / Γ(m/2)`.
///
/// Evaluated through the exact recurrence `A(m) = A(m−2)·2π/(m−2)` starting
/// from A(1) = 2 and A(2) = 2π, which keeps small dimensions exact.
pub fn sphere_surface_area(m: usize, r: f64) -> Result<f64> {
    if m < 1 {
        return Err(Error::Domain("dimension m must be at least 1".into()));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("radius r={r} must be positive")));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let (mut area, mut k) = if m % 2 == 1 { (2.0, 1) } else { (two_pi, 2) };
    while k < m {
        area *= two_pi / k as f64;
        k += 2;
    }
    Ok(area * r.powi(m as i32))
}

/// `ln |S^{m−1}|` at unit radius, stable for large m.
pub fn log_sphere_surface_area(m: usize) -> f64 {
    let half = m as f64 / 2.0;
    std::f64::consts::LN_2 + half * std::f64::consts::PI.ln() - libm::lgamma(half)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_same_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
