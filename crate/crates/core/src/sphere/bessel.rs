//! Modified Bessel functions of the first kind, evaluated in log space.
//!
//! Raw `I_ν(κ)` overflows an `f64` once κ passes ~700, so every quantity the
//! vMF code needs is expressed either as a logarithm or as the bounded ratio
//! `I_ν(κ) / I_{ν-1}(κ)`.

use crate::error::{Error, Result};

const LN_SCALE: f64 = 575.646_273_248_511_4; // ln(1e250)
const SCALE: f64 = 1e250;
const SERIES_LIMIT: f64 = 1e5;
const CF_MAX_ITER: usize = 2_000_000;

/// `ln Σ_k (x²/4)^k Γ(ν+1) / (k! Γ(ν+k+1))`, the normalized power series of
/// `I_ν(x)` after factoring out `(x/2)^ν / Γ(ν+1)`. Equals 0 at x = 0.
pub(crate) fn log_series_sum(nu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let q = 0.25 * x * x;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut offset = 0.0_f64;
    let mut k = 0.0_f64;
    loop {
        k += 1.0;
        term *= q / (k * (nu + k));
        sum += term;
        if sum > SCALE {
            sum /= SCALE;
            term /= SCALE;
            offset += LN_SCALE;
        }
        // terms grow until k ≈ x/2, then decay geometrically
        if k > 0.5 * x && term < sum * 1e-17 {
            break;
        }
    }
    sum.ln() + offset
}

/// `ln I_ν(x)` for ν ≥ 0 and x ≥ 0.
pub fn log_bessel_i(nu: f64, x: f64) -> f64 {
    debug_assert!(nu >= 0.0 && x >= 0.0);
    if x == 0.0 {
        return if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x <= SERIES_LIMIT {
        nu * (0.5 * x).ln() - libm::lgamma(nu + 1.0) + log_series_sum(nu, x)
    } else if nu >= 10.0 {
        log_bessel_i_debye(nu, x)
    } else {
        log_bessel_i_hankel(nu, x)
    }
}

/// Uniform (Debye) asymptotic expansion, accurate for large ν at any x.
fn log_bessel_i_debye(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let s = (1.0 + z * z).sqrt();
    let t = 1.0 / s;
    let eta = s + (z / (1.0 + s)).ln();
    let t2 = t * t;
    let u1 = t * (3.0 - 5.0 * t2) / 24.0;
    let u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0;
    let u3 = t * t2 * (30375.0 - 369_603.0 * t2 + 765_765.0 * t2 * t2 - 425_425.0 * t2 * t2 * t2) / 414_720.0;
    let corr = 1.0 + u1 / nu + u2 / (nu * nu) + u3 / (nu * nu * nu);
    nu * eta - 0.5 * (2.0 * std::f64::consts::PI * nu).ln() - 0.5 * s.ln() + corr.ln()
}

/// Large-argument Hankel expansion for small orders.
fn log_bessel_i_hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..8 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        term *= -(mu - odd * odd) / (kf * 8.0 * x);
        sum += term;
    }
    x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
}

/// `I_ν(x) / I_{ν-1}(x)` via the Gauss continued fraction, evaluated with
/// the modified Lentz algorithm. Requires ν ≥ 1/2... in practice ν = m/2 ≥ 1.
pub fn bessel_ratio(nu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    const TINY: f64 = 1e-300;
    let b = |j: usize| 2.0 * (nu + j as f64) / x;
    let mut f = b(0).max(TINY);
    let mut c = f;
    let mut d = 0.0_f64;
    for j in 1..CF_MAX_ITER {
        let bj = b(j);
        d += bj;
        if d.abs() < TINY {
            d = TINY;
        }
        c = bj + 1.0 / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// `ln(I_{m/2}(κ) / I_{m/2-1}(κ))`: the log of the vMF mean resultant length
/// `A_m(κ)` in dimension `m`. Returns `-inf` at κ = 0.
pub fn log_bessel_ratio(m: usize, kappa: f64) -> Result<f64> {
    check_dim_kappa(m, kappa)?;
    Ok(bessel_ratio(m as f64 / 2.0, kappa).ln())
}

/// `A_m(κ) = I_{m/2}(κ) / I_{m/2-1}(κ) = E[μᵀz]` under vMF(μ, κ).
pub fn mean_resultant_length(m: usize, kappa: f64) -> Result<f64> {
    check_dim_kappa(m, kappa)?;
    Ok(bessel_ratio(m as f64 / 2.0, kappa))
}

/// `dA_m/dκ = 1 − A² − (m−1)A/κ`.
pub fn mean_resultant_length_derivative(m: usize, kappa: f64) -> Result<f64> {
    check_dim_kappa(m, kappa)?;
    if kappa == 0.0 {
        return Ok(1.0 / m as f64);
    }
    let a = bessel_ratio(m as f64 / 2.0, kappa);
    Ok(1.0 - a * a - (m as f64 - 1.0) * a / kappa)
}

/// `ln C_m(κ)`, the log normalizer of the vMF density on S^{m−1}.
/// Continuous at κ = 0, where it equals −ln |S^{m−1}|.
pub fn log_vmf_normalizer(m: usize, kappa: f64) -> Result<f64> {
    check_dim_kappa(m, kappa)?;
    let nu = m as f64 / 2.0 - 1.0;
    let half_m = m as f64 / 2.0;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    if kappa <= SERIES_LIMIT {
        // κ^ν cancels against the (κ/2)^ν prefactor of the series
        Ok(nu * std::f64::consts::LN_2 + libm::lgamma(nu + 1.0) - log_series_sum(nu, kappa) - half_m * ln_2pi)
    } else {
        Ok(nu * kappa.ln() - half_m * ln_2pi - log_bessel_i(nu, kappa))
    }
}

fn check_dim_kappa(m: usize, kappa: f64) -> Result<()> {
    if m < 2 {
        return Err(Error::Domain(format!("dimension m={m} must be at least 2")));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!("concentration kappa={kappa} must be finite and non-negative")));
    }
    Ok(())
}
