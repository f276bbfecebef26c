//! von Mises–Fisher density, divergence from the uniform law, and sampling.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::bessel::{log_vmf_normalizer, mean_resultant_length, mean_resultant_length_derivative};
use super::{dot, householder, log_sphere_surface_area, HouseholderReflection, UnitVector};
use crate::error::{Error, Result};

/// Per-draw cap on the ω rejection loop.
pub const MAX_REJECTION_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    mu: UnitVector,
    kappa: f64,
}

impl VmfParams {
    pub fn new(mu: UnitVector, kappa: f64) -> Result<Self> {
        if mu.dim() < 2 {
            return Err(Error::Domain("vMF requires dimension at least 2".into()));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::Domain(format!("kappa={kappa} must be finite and non-negative")));
        }
        Ok(Self { mu, kappa })
    }

    pub fn mu(&self) -> &UnitVector {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }
}

/// `ln C_m(κ) + κ μᵀz`, with respect to surface measure.
pub fn vmf_log_pdf(params: &VmfParams, z: &UnitVector) -> Result<f64> {
    let c = params.mu.dot(z)?;
    Ok(log_vmf_normalizer(params.dim(), params.kappa)? + params.kappa * c)
}

/// `KL(vMF(μ, κ) ‖ U(S^{m−1})) = κ A_m(κ) + ln C_m(κ) + ln |S^{m−1}|`.
pub fn kl_vmf_uniform(params: &VmfParams) -> f64 {
    kl_vmf_uniform_dim(params.dim(), params.kappa).expect("params validated on construction")
}

pub(crate) fn kl_vmf_uniform_dim(m: usize, kappa: f64) -> Result<f64> {
    if kappa == 0.0 {
        return Ok(0.0);
    }
    let a = mean_resultant_length(m, kappa)?;
    let kl = kappa * a + log_vmf_normalizer(m, kappa)? + log_sphere_surface_area(m);
    Ok(kl.max(0.0))
}

/// `d KL / dκ = κ A′_m(κ)`.
pub fn kl_vmf_uniform_grad(m: usize, kappa: f64) -> Result<f64> {
    Ok(kappa * mean_resultant_length_derivative(m, kappa)?)
}

/// One accepted ω together with the proposal noise that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaDraw {
    pub omega: f64,
    /// Accepted Beta((m−1)/2, (m−1)/2) variate.
    pub eps: f64,
    /// Envelope parameter b(κ).
    pub b: f64,
}

struct Envelope {
    d1: f64,
    b: f64,
    x0: f64,
    c: f64,
}

impl Envelope {
    fn new(m: usize, kappa: f64) -> Self {
        let d1 = m as f64 - 1.0;
        let b = d1 / (2.0 * kappa + (4.0 * kappa * kappa + d1 * d1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + d1 * (1.0 - x0 * x0).ln();
        Self { d1, b, x0, c }
    }
}

/// Draws ω ∼ g(ω | κ, m) ∝ exp(κω)(1−ω²)^{(m−3)/2}.
pub fn sample_omega<R: Rng + ?Sized>(m: usize, kappa: f64, rng: &mut R) -> Result<f64> {
    sample_omega_with_limit(m, kappa, MAX_REJECTION_ITERATIONS, rng)
}

pub fn sample_omega_with_limit<R: Rng + ?Sized>(m: usize, kappa: f64, limit: usize, rng: &mut R) -> Result<f64> {
    Ok(omega_draw(m, kappa, limit, rng)?.omega)
}

/// Like [`sample_omega`] but also returns the accepted proposal noise, which
/// the reparameterized gradient needs.
pub fn sample_omega_draw<R: Rng + ?Sized>(m: usize, kappa: f64, rng: &mut R) -> Result<OmegaDraw> {
    omega_draw(m, kappa, MAX_REJECTION_ITERATIONS, rng)
}

fn omega_draw<R: Rng + ?Sized>(m: usize, kappa: f64, limit: usize, rng: &mut R) -> Result<OmegaDraw> {
    if m < 2 {
        return Err(Error::Domain(format!("dimension m={m} must be at least 2")));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!("kappa={kappa} must be finite and non-negative")));
    }
    let half = (m as f64 - 1.0) / 2.0;
    let beta = Beta::new(half, half).map_err(|e| Error::Domain(e.to_string()))?;
    if kappa == 0.0 {
        let eps: f64 = beta.sample(rng);
        return Ok(OmegaDraw { omega: 2.0 * eps - 1.0, eps, b: 1.0 });
    }
    let env = Envelope::new(m, kappa);
    for _ in 0..limit {
        let eps: f64 = beta.sample(rng);
        let u: f64 = rng.random();
        let omega = (1.0 - (1.0 + env.b) * eps) / (1.0 - (1.0 - env.b) * eps);
        let t = kappa * omega + env.d1 * (1.0 - env.x0 * omega).ln() - env.c;
        if t >= u.ln() {
            return Ok(OmegaDraw { omega: omega.clamp(-1.0, 1.0), eps, b: env.b });
        }
    }
    Err(Error::IterationLimit { limit, dim: m, kappa })
}

/// Uniform draws on S^{m−1} by normalizing isotropic Gaussians.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Vec<UnitVector> {
    (0..n).map(|_| uniform_unit(m, rng)).collect()
}

fn uniform_unit<R: Rng + ?Sized>(m: usize, rng: &mut R) -> UnitVector {
    assert!(m >= 1, "sphere dimension must be at least 1");
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 {
            return UnitVector::from_raw_unchecked(v.into_iter().map(|x| x / n).collect());
        }
    }
}

/// `n` independent draws from vMF(μ, κ); κ = 0 samples the uniform law.
pub fn sample_vmf<R: Rng + ?Sized>(params: &VmfParams, n: usize, rng: &mut R) -> Result<Vec<UnitVector>> {
    if params.kappa == 0.0 {
        return Ok(sample_uniform_sphere(params.dim(), n, rng));
    }
    let h = householder(&params.mu);
    (0..n).map(|_| Ok(VmfDraw::sample_with(&h, params.dim(), params.kappa, rng)?.z)).collect()
}

/// A single vMF draw that retains the noise needed to differentiate the
/// sample with respect to (μ, κ).
#[derive(Debug, Clone)]
pub struct VmfDraw {
    pub z: UnitVector,
    pub omega: OmegaDraw,
    /// Tangential direction on S^{m−2}.
    pub v: Vec<f64>,
    reflection: HouseholderReflection,
    z_prime: Vec<f64>,
    kappa: f64,
}

pub fn sample_vmf_draw<R: Rng + ?Sized>(params: &VmfParams, rng: &mut R) -> Result<VmfDraw> {
    let h = householder(&params.mu);
    VmfDraw::sample_with(&h, params.dim(), params.kappa, rng)
}

impl VmfDraw {
    fn sample_with<R: Rng + ?Sized>(h: &HouseholderReflection, m: usize, kappa: f64, rng: &mut R) -> Result<Self> {
        let omega = sample_omega_draw(m, kappa, rng)?;
        let v = uniform_unit(m - 1, rng).into_inner();
        let s = (1.0 - omega.omega * omega.omega).max(0.0).sqrt();
        let mut z_prime = Vec::with_capacity(m);
        z_prime.push(omega.omega);
        z_prime.extend(v.iter().map(|x| s * x));
        let z = UnitVector::from_raw_unchecked(h.apply(&z_prime));
        Ok(Self { z, omega, v, reflection: h.clone(), z_prime, kappa })
    }

    /// `∂ω/∂κ` along the accepted proposal, holding ε fixed.
    pub fn domega_dkappa(&self, m: usize) -> f64 {
        let kappa = self.kappa;
        let d1 = m as f64 - 1.0;
        let b = self.omega.b;
        let eps = self.omega.eps;
        let r = (4.0 * kappa * kappa + d1 * d1).sqrt();
        let db = -b * (2.0 + 4.0 * kappa / r) / (2.0 * kappa + r);
        let den = 1.0 - (1.0 - b) * eps;
        let dh_db = -2.0 * eps * (1.0 - eps) / (den * den);
        dh_db * db
    }

    /// `d/dκ ln[g(h(ε,κ)|κ) |∂h/∂ε|]`, the score of the accepted-proposal
    /// density. Multiplying a per-sample loss by this gives the correction
    /// term that removes the bias of the pathwise estimator.
    pub fn score(&self, m: usize) -> f64 {
        let kappa = self.kappa;
        let d1 = m as f64 - 1.0;
        let b = self.omega.b;
        let eps = self.omega.eps;
        let w = self.omega.omega;
        let r = (4.0 * kappa * kappa + d1 * d1).sqrt();
        let db = -b * (2.0 + 4.0 * kappa / r) / (2.0 * kappa + r);
        let den = 1.0 - (1.0 - b) * eps;
        let dh = self.domega_dkappa(m);
        let a = mean_resultant_length(m, kappa).unwrap_or(0.0);
        let one_minus = (1.0 - w * w).max(1e-300);
        w - a + (kappa - (m as f64 - 3.0) * w / one_minus) * dh + (1.0 / b - 2.0 * eps / den) * db
    }

    /// Pulls an upstream gradient `dz` back to `(dμ, dκ)` through the
    /// pathwise map `z = H(μ)·(ω(κ), √(1−ω²) v)`. `dμ` is with respect to the
    /// unit mean direction; project it further if μ was normalized.
    pub fn pullback(&self, dz: &[f64]) -> (Vec<f64>, f64) {
        let m = self.z.dim();
        assert_eq!(dz.len(), m, "gradient dimension mismatch");
        // dL/dz' = Hᵀ dz = H dz
        let dzp = self.reflection.apply(dz);
        let w = self.omega.omega;
        let s = (1.0 - w * w).max(0.0).sqrt();
        let mut domega = dzp[0];
        if s > 1e-12 {
            domega -= w / s * dot(&dzp[1..], &self.v);
        }
        let dkappa = domega * self.domega_dkappa(m);

        let dmu = if self.reflection.is_identity() {
            vec![0.0; m]
        } else {
            // H = I − 2aaᵀ/s with a = e₁ − μ
            let mu = {
                // recover μ = H e₁
                let mut e1 = vec![0.0; m];
                e1[0] = 1.0;
                self.reflection.apply(&e1)
            };
            let mut a: Vec<f64> = mu.iter().map(|x| -x).collect();
            a[0] += 1.0;
            let ss = dot(&a, &a);
            let azp = dot(&a, &self.z_prime);
            let ag = dot(&a, dz);
            (0..m)
                .map(|i| {
                    let da = -2.0 / ss * (azp * dz[i] + self.z_prime[i] * ag) + 4.0 / (ss * ss) * azp * ag * a[i];
                    -da
                })
                .collect()
        };
        (dmu, dkappa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(mu: Vec<f64>, kappa: f64) -> VmfParams {
        VmfParams::new(UnitVector::normalize(mu).unwrap(), kappa).unwrap()
    }

    #[test]
    fn uniform_density_at_zero_kappa() {
        let p = params(vec![1.0, 0.0, 0.0], 0.0);
        let z = UnitVector::normalize(vec![0.2, 0.4, -0.1]).unwrap();
        let lp = vmf_log_pdf(&p, &z).unwrap();
        assert!((lp + (4.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn exponent_difference() {
        let z = UnitVector::normalize(vec![0.3, 0.9, 0.1]).unwrap();
        let plus = VmfParams::new(z.clone(), 2.0).unwrap();
        let minus = VmfParams::new(-z.clone(), 2.0).unwrap();
        let d = vmf_log_pdf(&plus, &z).unwrap() - vmf_log_pdf(&minus, &z).unwrap();
        assert!((d - 4.0).abs() < 1e-12);
    }

    #[test]
    fn kl_reference_values() {
        // mpmath, 50 digits
        for (k, want) in [(0.5, 0.040_651_852_256_408_3), (5.0, 1.303_084_513_864_51), (20.0, 2.688_879_454_113_94)] {
            let got = kl_vmf_uniform(&params(vec![1.0, 0.0, 0.0], k));
            assert!((got - want).abs() < 1e-10, "k={k}: {got}");
        }
        assert_eq!(kl_vmf_uniform(&params(vec![1.0, 0.0, 0.0], 0.0)), 0.0);
    }

    #[test]
    fn kl_gradient_matches_finite_difference() {
        for &(m, k) in &[(3usize, 5.0), (16, 120.0), (64, 300.0)] {
            let h = 1e-4 * k;
            let fd = (kl_vmf_uniform_dim(m, k + h).unwrap() - kl_vmf_uniform_dim(m, k - h).unwrap()) / (2.0 * h);
            let an = kl_vmf_uniform_grad(m, k).unwrap();
            assert!(((fd - an) / an).abs() < 1e-5, "m={m} k={k}: {fd} vs {an}");
        }
    }

    #[test]
    fn iteration_cap_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut hit = false;
        for _ in 0..50 {
            if let Err(Error::IterationLimit { limit: 1, .. }) = sample_omega_with_limit(3, 1.0, 1, &mut rng) {
                hit = true;
            }
        }
        assert!(hit);
    }

    #[test]
    fn pullback_matches_finite_differences() {
        // fixed noise, perturbed parameters: rebuild z from (ε, v)
        let m = 5;
        let mu0 = vec![0.2, -0.4, 0.5, 0.6, 0.1];
        let kappa = 7.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = params(mu0.clone(), kappa);
        let draw = sample_vmf_draw(&p, &mut rng).unwrap();
        let eps = draw.omega.eps;
        let v = draw.v.clone();
        let rebuild = |mu: &[f64], k: f64| -> Vec<f64> {
            let env = Envelope::new(m, k);
            let w = (1.0 - (1.0 + env.b) * eps) / (1.0 - (1.0 - env.b) * eps);
            let s = (1.0 - w * w).sqrt();
            let mut zp = vec![w];
            zp.extend(v.iter().map(|x| s * x));
            // Householder built from an arbitrary (near-unit) μ, no renormalization
            let mut a: Vec<f64> = mu.iter().map(|x| -x).collect();
            a[0] += 1.0;
            let ss = dot(&a, &a);
            let az = dot(&a, &zp);
            zp.iter().zip(&a).map(|(z, ai)| z - 2.0 * ai * az / ss).collect()
        };
        let dz = [0.7, -0.3, 0.2, 0.5, -0.9];
        let loss = |mu: &[f64], k: f64| dot(&rebuild(mu, k), &dz);
        let mu = p.mu().as_slice().to_vec();
        let (dmu, dk) = draw.pullback(&dz);
        let h = 1e-6;
        let fdk = (loss(&mu, kappa + h) - loss(&mu, kappa - h)) / (2.0 * h);
        assert!((fdk - dk).abs() < 1e-6, "{fdk} vs {dk}");
        for i in 0..m {
            let mut up = mu.clone();
            let mut dn = mu.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (loss(&up, kappa) - loss(&dn, kappa)) / (2.0 * h);
            assert!((fd - dmu[i]).abs() < 1e-6, "i={i}: {fd} vs {}", dmu[i]);
        }
    }
}
