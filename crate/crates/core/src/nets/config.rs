use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latent sizes supported by every model family.
pub const LATENT_GRID: [usize; 8] = [3, 8, 16, 32, 64, 128, 256, 512];

/// Largest latent size a variational spherical model trains stably at.
pub const MAX_SPHERICAL_VARIATIONAL_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Spherical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: Family,
    pub variational: bool,
    pub equivariant: bool,
    /// Gaussian VAE whose latent geometry is described by a learned metric.
    pub riemannian: bool,
    pub latent_dim: usize,
    pub kappa_min: f64,
    /// Concentration assumed by non-variational spherical models.
    pub kappa_fixed: Option<f64>,
    pub group_order: usize,
    pub spread_loss_weight: f64,
    pub widths: [usize; 3],
    pub expansion: usize,
    pub channels: usize,
    pub kernel_size: usize,
    /// Adds the score-function term to the rejection-sampler gradient.
    pub score_correction: bool,
    /// Leapfrog steps of the Riemannian flow applied to sampled latents
    /// during training (0 disables the flow).
    pub flow_leapfrog: usize,
    pub flow_step: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Spherical,
            variational: true,
            equivariant: false,
            riemannian: false,
            latent_dim: 16,
            kappa_min: 100.0,
            kappa_fixed: Some(1000.0),
            group_order: 8,
            spread_loss_weight: 0.0,
            widths: [32, 64, 128],
            expansion: 4,
            channels: 3,
            kernel_size: 5,
            score_correction: true,
            flow_leapfrog: 0,
            flow_step: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.latent_dim;
        if !LATENT_GRID.contains(&m) {
            return Err(Error::Config(format!("latent_dim {m} is not one of {LATENT_GRID:?}")));
        }
        if self.equivariant && m < 8 {
            return Err(Error::Config(format!(
                "equivariant models need latent_dim >= 8 so the rotation representation has room, got {m}"
            )));
        }
        if self.family == Family::Spherical && self.variational && m > MAX_SPHERICAL_VARIATIONAL_DIM {
            return Err(Error::Config(format!(
                "spherical variational models are refused above latent_dim {MAX_SPHERICAL_VARIATIONAL_DIM}: \
                 the vMF rejection sampler and KL become numerically unstable in high dimensions even \
                 with concentration clamped at kappa_min, so latent_dim {m} cannot be trained"
            )));
        }
        if self.riemannian && !(self.family == Family::Gaussian && self.variational) {
            return Err(Error::Config("riemannian models must be gaussian and variational".into()));
        }
        if !(self.kappa_min >= 0.0) || !self.kappa_min.is_finite() {
            return Err(Error::Config("kappa_min must be finite and non-negative".into()));
        }
        if let Some(k) = self.kappa_fixed {
            if !(k > 0.0) {
                return Err(Error::Config("kappa_fixed must be positive".into()));
            }
        }
        if self.group_order == 0 {
            return Err(Error::Config("group_order must be at least 1".into()));
        }
        if !(self.spread_loss_weight >= 0.0) {
            return Err(Error::Config("spread_loss_weight must be non-negative".into()));
        }
        if self.widths.contains(&0) || self.expansion == 0 {
            return Err(Error::Config("widths and expansion must be positive".into()));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config("kernel_size must be odd".into()));
        }
        if !(self.flow_step > 0.0) {
            return Err(Error::Config("flow_step must be positive".into()));
        }
        Ok(())
    }

    /// Group order actually used by the layers (1 for ordinary CNNs).
    pub fn effective_order(&self) -> usize {
        if self.equivariant {
            self.group_order
        } else {
            1
        }
    }

    /// Short model tag: N-VAE, N-AE, S-VAE, S-AE or RHVAE, prefixed with
    /// "E" for equivariant variants.
    pub fn tag(&self) -> String {
        let base = match (self.family, self.variational, self.riemannian) {
            (Family::Gaussian, true, true) => "RHVAE",
            (Family::Gaussian, true, false) => "N-VAE",
            (Family::Gaussian, false, _) => "N-AE",
            (Family::Spherical, true, _) => "S-VAE",
            (Family::Spherical, false, _) => "S-AE",
        };
        if self.equivariant {
            format!("E{base}")
        } else {
            base.to_string()
        }
    }
}
