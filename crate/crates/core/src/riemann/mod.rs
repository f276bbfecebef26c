//! Learned Riemannian metric over a Euclidean latent space, Hamiltonian
//! dynamics under that metric, and discrete geodesics.

mod geodesic;
mod hmc;

pub use geodesic::{geodesic_energy, geodesic_energy_grad, geodesic_path, GeodesicCurve, GeodesicOptions};
pub use hmc::{
    hamiltonian, kinetic_energy, leapfrog_step, rhmc_sample, FnTarget, GaussianTarget, LogTarget, PhasePoint,
    RhmcConfig,
};

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 1.5;
pub const DEFAULT_REGULARIZATION: f64 = 0.01;
pub const DEFAULT_CENTROID_CAP: usize = 1000;

/// `G⁻¹(z) = Σᵢ Lᵢ Lᵢᵀ exp(−‖z − cᵢ‖² / T²) + λ I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MetricFieldRepr", into = "MetricFieldRepr")]
pub struct MetricField {
    dim: usize,
    centroids: Vec<DVector<f64>>,
    factors: Vec<DMatrix<f64>>,
    covs: Vec<DMatrix<f64>>,
    temperature: f64,
    regularization: f64,
}

#[derive(Serialize, Deserialize)]
struct MetricFieldRepr {
    dim: usize,
    centroids: Vec<Vec<f64>>,
    /// Row-major lower-triangular factors.
    factors: Vec<Vec<f64>>,
    temperature: f64,
    regularization: f64,
}

impl TryFrom<MetricFieldRepr> for MetricField {
    type Error = Error;
    fn try_from(r: MetricFieldRepr) -> Result<Self> {
        let d = r.dim;
        let factors = r
            .factors
            .into_iter()
            .map(|f| {
                if f.len() != d * d {
                    return Err(Error::DimensionMismatch { expected: d * d, got: f.len() });
                }
                Ok(DMatrix::from_row_slice(d, d, &f))
            })
            .collect::<Result<Vec<_>>>()?;
        MetricField::new(r.centroids, factors, r.temperature, r.regularization, d)
    }
}

impl From<MetricField> for MetricFieldRepr {
    fn from(f: MetricField) -> Self {
        MetricFieldRepr {
            dim: f.dim,
            centroids: f.centroids.iter().map(|c| c.iter().copied().collect()).collect(),
            factors: f.factors.iter().map(|l| l.transpose().iter().copied().collect()).collect(),
            temperature: f.temperature,
            regularization: f.regularization,
        }
    }
}

impl MetricField {
    pub fn new(
        centroids: Vec<Vec<f64>>,
        factors: Vec<DMatrix<f64>>,
        temperature: f64,
        regularization: f64,
        dim: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("latent dimension must be positive".into()));
        }
        if centroids.len() != factors.len() {
            return Err(Error::Shape(format!("{} centroids but {} factor matrices", centroids.len(), factors.len())));
        }
        if !(temperature > 0.0) || !(regularization > 0.0) {
            return Err(Error::Domain("temperature and regularization must be positive".into()));
        }
        let mut cs = Vec::with_capacity(centroids.len());
        for c in centroids {
            if c.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.len() });
            }
            cs.push(DVector::from_vec(c));
        }
        for l in &factors {
            if l.nrows() != dim || l.ncols() != dim {
                return Err(Error::Shape(format!("factor must be {dim}x{dim}")));
            }
            for i in 0..dim {
                if !(l[(i, i)] > 0.0) {
                    return Err(Error::Domain("factor diagonal must be strictly positive".into()));
                }
                for j in i + 1..dim {
                    if l[(i, j)] != 0.0 {
                        return Err(Error::Domain("factor must be lower triangular".into()));
                    }
                }
            }
        }
        let covs = factors.iter().map(|l| l * l.transpose()).collect();
        Ok(Self { dim, centroids: cs, factors, covs, temperature, regularization })
    }

    /// A field with no centroids: `G⁻¹ = λ I` everywhere.
    pub fn constant(dim: usize, regularization: f64) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), DEFAULT_TEMPERATURE, regularization, dim)
    }

    /// Builds the field from encoded training data: one centroid per posterior
    /// mean with factor `σᵢ I`. Past `cap` points the means are grouped by
    /// k-means and each group contributes its mean and average σ.
    pub fn from_latents<R: Rng + ?Sized>(
        means: &[Vec<f64>],
        sigmas: &[f64],
        temperature: f64,
        regularization: f64,
        cap: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dim = means.first().map(Vec::len).ok_or_else(|| Error::EmptySplit("no latents".into()))?;
        if sigmas.len() != means.len() {
            return Err(Error::DimensionMismatch { expected: means.len(), got: sigmas.len() });
        }
        let (centroids, scales) =
            if means.len() <= cap { (means.to_vec(), sigmas.to_vec()) } else { kmeans(means, sigmas, cap.max(1), rng) };
        let factors = scales.iter().map(|&s| DMatrix::from_diagonal_element(dim, dim, s.max(1e-6))).collect();
        Self::new(centroids, factors, temperature, regularization, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn n_centroids(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> impl Iterator<Item = &[f64]> {
        self.centroids.iter().map(|c| c.as_slice())
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    /// True when the metric does not depend on position.
    pub fn is_constant(&self) -> bool {
        self.centroids.is_empty()
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: z.len() });
        }
        Ok(())
    }

    fn weights(&self, z: &[f64]) -> Vec<f64> {
        let t2 = self.temperature * self.temperature;
        self.centroids
            .iter()
            .map(|c| {
                let d2: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / t2).exp()
            })
            .collect()
    }

    pub fn inverse_metric(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.check(z)?;
        let mut m = DMatrix::from_diagonal_element(self.dim, self.dim, self.regularization);
        for (w, cov) in self.weights(z).into_iter().zip(&self.covs) {
            if w > 0.0 {
                m += cov * w;
            }
        }
        Ok(m)
    }

    /// `∂G⁻¹/∂z_l` for each l.
    pub fn inverse_metric_grad(&self, z: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.check(z)?;
        let t2 = self.temperature * self.temperature;
        let mut out = vec![DMatrix::zeros(self.dim, self.dim); self.dim];
        for ((w, cov), c) in self.weights(z).into_iter().zip(&self.covs).zip(&self.centroids) {
            if w == 0.0 {
                continue;
            }
            for (l, g) in out.iter_mut().enumerate() {
                let coef = w * (-2.0 * (z[l] - c[l]) / t2);
                *g += cov * coef;
            }
        }
        Ok(out)
    }

    /// `G(z) = (G⁻¹(z))⁻¹` via Cholesky.
    pub fn metric(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let inv = self.inverse_metric(z)?;
        invert_spd(&inv)
    }

    /// `ln √det G(z) = −½ ln det G⁻¹(z)`.
    pub fn log_sqrt_det_metric(&self, z: &[f64]) -> Result<f64> {
        let inv = self.inverse_metric(z)?;
        let chol = cholesky(&inv)?;
        let log_det: f64 = (0..self.dim).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
        Ok(-0.5 * log_det)
    }

    /// Writes `z1,z2,log_sqrt_det` rows over a regular grid of a 2-D field.
    pub fn export_volume_grid<W: Write>(
        &self,
        x_range: (f64, f64),
        y_range: (f64, f64),
        n: (usize, usize),
        mut out: W,
    ) -> Result<()> {
        if self.dim != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: self.dim });
        }
        let io = |e| Error::io("<volume grid>", e);
        writeln!(out, "z1,z2,log_sqrt_det").map_err(io)?;
        let step = |r: (f64, f64), k: usize, i: usize| {
            if k <= 1 {
                r.0
            } else {
                r.0 + (r.1 - r.0) * i as f64 / (k - 1) as f64
            }
        };
        for iy in 0..n.1 {
            for ix in 0..n.0 {
                let z = [step(x_range, n.0, ix), step(y_range, n.1, iy)];
                let v = self.log_sqrt_det_metric(&z)?;
                writeln!(out, "{},{},{}", z[0], z[1], v).map_err(io)?;
            }
        }
        Ok(())
    }
}

fn cholesky(m: &DMatrix<f64>) -> Result<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>> {
    m.clone().cholesky().ok_or_else(|| Error::Singular { condition: condition_number(m) })
}

pub(crate) fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = condition_number(m);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::Singular { condition: cond });
    }
    Ok(cholesky(m)?.inverse())
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = m.clone().symmetric_eigenvalues();
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], sigmas: &[f64], k: usize, rng: &mut R) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(rng);
    let mut centers: Vec<Vec<f64>> = order[..k].iter().map(|&i| points[i].clone()).collect();
    let mut assign = vec![0usize; points.len()];
    for _ in 0..10 {
        for (a, p) in assign.iter_mut().zip(points) {
            *a = nearest(&centers, p);
        }
        let d = points[0].len();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for ((c, s), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
    }
    let mut sig = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&a, &s) in assign.iter().zip(sigmas) {
        sig[a] += s;
        counts[a] += 1;
    }
    let keep: Vec<usize> = (0..k).filter(|&i| counts[i] > 0).collect();
    (keep.iter().map(|&i| centers[i].clone()).collect(), keep.iter().map(|&i| sig[i] / counts[i] as f64).collect())
}

fn nearest(centers: &[Vec<f64>], p: &[f64]) -> usize {
    let d = |c: &Vec<f64>| c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    (0..centers.len()).min_by(|&a, &b| d(&centers[a]).total_cmp(&d(&centers[b]))).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn single_centroid_at_z() {
        let f = MetricField::new(vec![vec![0.5, -0.2]], vec![DMatrix::identity(2, 2)], 1.5, 0.01, 2).unwrap();
        let m = f.inverse_metric(&[0.5, -0.2]).unwrap();
        assert!((m - DMatrix::identity(2, 2) * 1.01).norm() < 1e-15);
    }

    #[test]
    fn rejects_bad_factors() {
        let upper = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(MetricField::new(vec![vec![0.0, 0.0]], vec![upper], 1.5, 0.01, 2).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(MetricField::new(vec![vec![0.0, 0.0]], vec![neg], 1.5, 0.01, 2).is_err());
    }

    #[test]
    fn kmeans_caps_centroids() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.1, (i % 7) as f64]).collect();
        let sig = vec![0.3; 50];
        let f = MetricField::from_latents(&pts, &sig, 1.5, 0.01, 8, &mut rng).unwrap();
        assert!(f.n_centroids() <= 8 && f.n_centroids() > 0);
        let f = MetricField::from_latents(&pts, &sig, 1.5, 0.01, 1000, &mut rng).unwrap();
        assert_eq!(f.n_centroids(), 50);
    }

    #[test]
    fn serde_round_trip() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 2.0]);
        let f = MetricField::new(vec![vec![0.1, 0.2]], vec![l], 1.5, 0.01, 2).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        let g: MetricField = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
    }
}
