//! Encoder/decoder architecture and the training objective of every model
//! variant.

use std::cell::RefCell;

use rand::Rng;

use super::blocks::ConvNextBlock;
use super::config::{Family, ModelConfig};
use super::layers::{MaxPool, Pointwise, Upsample2};
use super::losses::{
    kl_gaussian_standard, kl_gaussian_standard_grad, masked_reconstruction_grad, masked_sse_per_item,
    reparameterize_gaussian, sigmoid, softplus, spread_loss_grad, spread_loss_raw, LossBreakdown, BORDER, FRAME,
};
use super::{HasParams, Param, Tensor};
use crate::equivariance::{
    project_invariant, project_mean_backward, BlockRotation, DecoderHead, EncoderHead, GroupConv, GroupConvKind,
    PoseDescriptor, Projection,
};
use crate::error::{Error, Result};
use crate::riemann::{rhmc_sample, LogTarget, MetricField, RhmcConfig};
use crate::sphere::{kl_vmf_uniform, kl_vmf_uniform_grad, sample_vmf_draw, UnitVector, VmfDraw, VmfParams};

const ENC_OUT: usize = 9;
const DEC_IN: usize = 8;
const SIGMA_FLOOR: f64 = 1e-6;

/// Encoder output for one item.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentHeadOutput {
    /// Mean descriptor in the input's own orientation (unit norm for
    /// spherical families).
    pub mu: Vec<f64>,
    /// `ρ(pose)⁻¹ μ`; equal to `mu` for non-equivariant models.
    pub canonical: Vec<f64>,
    /// σ for Gaussian families, κ for spherical ones.
    pub scale: f64,
    pub pose: Option<PoseDescriptor>,
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub x_hat: Tensor,
    pub heads: Vec<LatentHeadOutput>,
    pub z: Vec<Vec<f64>>,
    pub loss: LossBreakdown,
    pub per_item_reconstruction: Vec<f64>,
}

/// Encoder: lifting conv, three ConvNeXt stages each followed by pooling,
/// and the equivariant latent readout.
#[derive(Debug, Clone)]
pub struct Encoder {
    lift: GroupConv,
    blocks: [ConvNextBlock; 3],
    pools: [MaxPool; 3],
    transitions: [Pointwise; 2],
    head: EncoderHead,
    feature_shape: Vec<usize>,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let n = cfg.effective_order();
        let [w1, w2, w3] = cfg.widths;
        let (k, e) = (cfg.kernel_size, cfg.expansion);
        Self {
            lift: GroupConv::new("enc.lift", GroupConvKind::Lifting, cfg.channels, w1, k, n, seed),
            blocks: [
                ConvNextBlock::new("enc.block1", w1, e, k, n, seed),
                ConvNextBlock::new("enc.block2", w2, e, k, n, seed),
                ConvNextBlock::new("enc.block3", w3, e, k, n, seed),
            ],
            pools: [MaxPool::new(2, 2, 0), MaxPool::new(2, 2, 0), MaxPool::new(3, 2, 1)],
            transitions: [Pointwise::new("enc.pw1", w1, w2, seed), Pointwise::new("enc.pw2", w2, w3, seed)],
            head: EncoderHead::new("enc.head", w3, n, ENC_OUT, cfg.latent_dim, seed),
            feature_shape: Vec::new(),
        }
    }

    /// Group feature map fed to the latent head, `[B, w3, N, 9, 9]`.
    pub fn features(&mut self, x: &Tensor) -> Result<Tensor> {
        let sh = x.shape();
        if sh.len() != 4 || sh[2] != FRAME || sh[3] != FRAME {
            return Err(Error::Shape(format!("encoder expects [B, C, {FRAME}, {FRAME}], got {sh:?}")));
        }
        let mut h = self.lift.forward(x)?;
        for i in 0..3 {
            h = self.blocks[i].forward(&h)?;
            h = self.pools[i].forward(&h);
            if i < 2 {
                h = self.transitions[i].forward(&h);
            }
        }
        self.feature_shape = h.shape().to_vec();
        Ok(h)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<super::super::equivariance::HeadOutput> {
        let f = self.features(x)?;
        Ok(self.head.forward(&f))
    }

    pub fn backward_features(&mut self, df: &Tensor) {
        let mut g = df.clone();
        for i in (0..3).rev() {
            if i < 2 {
                g = self.transitions[i].backward(&g);
            }
            g = self.pools[i].backward(&g);
            g = self.blocks[i].backward(&g);
        }
        self.lift.backward(&g);
    }

    pub fn backward(&mut self, dmu_raw: &[f32], dscale_raw: &[f32]) {
        let shape = self.feature_shape.clone();
        let df = self.head.backward(dmu_raw, dscale_raw, &shape);
        self.backward_features(&df);
    }
}

impl HasParams for Encoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.lift.visit_params(f);
        for i in 0..3 {
            self.blocks[i].visit_params(f);
            if i < 2 {
                self.transitions[i].visit_params(f);
            }
        }
        self.head.visit_params(f);
    }
}

/// Decoder mirroring the encoder: latent injection at 8×8, three stages with
/// nearest upsampling to 64×64, a final group conv to image channels, mean
/// projection over the group axis, and zero padding back to the 68×68 frame.
#[derive(Debug, Clone)]
pub struct Decoder {
    head: DecoderHead,
    blocks: [ConvNextBlock; 3],
    transitions: [Pointwise; 2],
    up: Upsample2,
    out: GroupConv,
    order: usize,
    latent: usize,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let n = cfg.effective_order();
        let [w1, w2, w3] = cfg.widths;
        let (k, e) = (cfg.kernel_size, cfg.expansion);
        Self {
            head: DecoderHead::new("dec.head", cfg.latent_dim, w3, n, DEC_IN, seed),
            blocks: [
                ConvNextBlock::new("dec.block3", w3, e, k, n, seed),
                ConvNextBlock::new("dec.block2", w2, e, k, n, seed),
                ConvNextBlock::new("dec.block1", w1, e, k, n, seed),
            ],
            transitions: [Pointwise::new("dec.pw3", w3, w2, seed), Pointwise::new("dec.pw2", w2, w1, seed)],
            up: Upsample2,
            out: GroupConv::new("dec.out", GroupConvKind::Group, w1, cfg.channels, k, n, seed),
            order: n,
            latent: cfg.latent_dim,
        }
    }

    /// `z` is `[B, m]` row-major.
    pub fn forward(&mut self, z: &[f32]) -> Result<Tensor> {
        if !z.len().is_multiple_of(self.latent) {
            return Err(Error::DimensionMismatch { expected: self.latent, got: z.len() });
        }
        let mut h = self.head.forward(z);
        for i in 0..3 {
            h = self.blocks[i].forward(&h)?;
            if i < 2 {
                h = self.transitions[i].forward(&h);
            }
            h = self.up.forward(&h);
        }
        let h = self.out.forward(&h)?;
        let img = project_invariant(&h, Projection::Mean)?;
        Ok(pad_frame(&img))
    }

    /// Returns the `[B, m]` latent gradient.
    pub fn backward(&mut self, dx_hat: &Tensor) -> Vec<f32> {
        let d = crop_frame(dx_hat);
        let d = project_mean_backward(&d, self.order);
        let mut g = self.out.backward(&d);
        for i in (0..3).rev() {
            g = self.up.backward(&g);
            if i < 2 {
                g = self.transitions[i].backward(&g);
            }
            g = self.blocks[i].backward(&g);
        }
        self.head.backward(&g)
    }
}

impl HasParams for Decoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.head.visit_params(f);
        for i in 0..3 {
            self.blocks[i].visit_params(f);
            if i < 2 {
                self.transitions[i].visit_params(f);
            }
        }
        self.out.visit_params(f);
    }
}

fn pad_frame(img: &Tensor) -> Tensor {
    let sh = img.shape();
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let mut out = Tensor::zeros(&[b, c, h + 2 * BORDER, w + 2 * BORDER]);
    let ow = w + 2 * BORDER;
    let oh = h + 2 * BORDER;
    for p in 0..b * c {
        let src = &img.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..h {
            dst[(y + BORDER) * ow + BORDER..][..w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    out
}

fn crop_frame(img: &Tensor) -> Tensor {
    let sh = img.shape();
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let (ih, iw) = (h - 2 * BORDER, w - 2 * BORDER);
    let mut out = Tensor::zeros(&[b, c, ih, iw]);
    for p in 0..b * c {
        let src = &img.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * ih * iw..(p + 1) * ih * iw];
        for y in 0..ih {
            dst[y * iw..(y + 1) * iw].copy_from_slice(&src[(y + BORDER) * w + BORDER..][..iw]);
        }
    }
    out
}

enum Posterior {
    Gaussian { eps: Vec<f64> },
    Vmf(Box<VmfDraw>),
    Point,
}

struct ItemState {
    mu_raw_norm: f64,
    scale_raw: f64,
    head: LatentHeadOutput,
    posterior: Posterior,
}

/// A complete autoencoder of any supported family.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    rho: BlockRotation,
    metric: Option<MetricField>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rho = BlockRotation::new(config.latent_dim, config.effective_order());
        Ok(Self {
            encoder: Encoder::new(&config, seed),
            decoder: Decoder::new(&config, seed),
            config,
            rho,
            metric: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn representation(&self) -> &BlockRotation {
        &self.rho
    }

    /// Metric field used by the training-time Riemannian flow.
    pub fn set_metric(&mut self, metric: Option<MetricField>) {
        self.metric = metric;
    }

    pub fn metric(&self) -> Option<&MetricField> {
        self.metric.as_ref()
    }

    fn interpret(&self, mu_raw: &[f32], scale_raw: f32, pose: usize) -> Result<(LatentHeadOutput, f64)> {
        let cfg = &self.config;
        let raw: Vec<f64> = mu_raw.iter().map(|&v| v as f64).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("encoder mean".into()));
        }
        let mu = match cfg.family {
            Family::Gaussian => raw,
            Family::Spherical => raw.iter().map(|x| x / norm.max(1e-12)).collect(),
        };
        let s = scale_raw as f64;
        let scale = match (cfg.family, cfg.variational) {
            (Family::Gaussian, _) => softplus(s) + SIGMA_FLOOR,
            (Family::Spherical, true) => (softplus(s) + 1.0).max(cfg.kappa_min),
            (Family::Spherical, false) => cfg.kappa_fixed.unwrap_or(1000.0),
        };
        let (canonical, pose) = if cfg.equivariant {
            let p = PoseDescriptor::new(pose, cfg.effective_order());
            let mut c = mu.clone();
            self.rho.apply_inverse(pose, &mut c);
            (c, Some(p))
        } else {
            (mu.clone(), None)
        };
        Ok((LatentHeadOutput { mu, canonical, scale, pose }, norm))
    }

    /// Posterior summaries of a batch `[B, C, 68, 68]`.
    pub fn encode(&mut self, x: &Tensor) -> Result<Vec<LatentHeadOutput>> {
        let out = self.encoder.forward(x)?;
        let m = self.config.latent_dim;
        (0..x.batch())
            .map(|i| Ok(self.interpret(&out.mu_raw[i * m..(i + 1) * m], out.scale_raw[i], out.pose[i])?.0))
            .collect()
    }

    /// Decodes latent vectors given in the data's own orientation.
    pub fn decode(&mut self, z: &[Vec<f64>]) -> Result<Tensor> {
        let m = self.config.latent_dim;
        let mut flat = Vec::with_capacity(z.len() * m);
        for v in z {
            if v.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: v.len() });
            }
            flat.extend(v.iter().map(|&x| x as f32));
        }
        self.decoder.forward(&flat)
    }

    /// Loss of a batch without touching gradients.
    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, rng: &mut R) -> Result<ForwardOutput> {
        self.run(x, rng, false)
    }

    /// Forward pass plus backpropagation; parameter gradients are reset and
    /// then hold the gradient of `loss.total`.
    pub fn train_step<R: Rng + ?Sized>(&mut self, x: &Tensor, rng: &mut R) -> Result<ForwardOutput> {
        self.zero_grad();
        self.run(x, rng, true)
    }

    fn run<R: Rng + ?Sized>(&mut self, x: &Tensor, rng: &mut R, backward: bool) -> Result<ForwardOutput> {
        let cfg = self.config.clone();
        let m = cfg.latent_dim;
        let b = x.batch();
        let enc = self.encoder.forward(x)?;

        let mut items = Vec::with_capacity(b);
        let mut z = Vec::with_capacity(b);
        for i in 0..b {
            let (head, norm) = self.interpret(&enc.mu_raw[i * m..(i + 1) * m], enc.scale_raw[i], enc.pose[i])?;
            let (z0, posterior) = match (cfg.family, cfg.variational) {
                (Family::Gaussian, true) => {
                    let (z0, eps) = reparameterize_gaussian(&head.canonical, head.scale, rng);
                    (z0, Posterior::Gaussian { eps })
                }
                (Family::Spherical, true) => {
                    let p = VmfParams::new(UnitVector::normalize(head.canonical.clone())?, head.scale)?;
                    let d = sample_vmf_draw(&p, rng)?;
                    (d.z.as_slice().to_vec(), Posterior::Vmf(Box::new(d)))
                }
                _ => (head.canonical.clone(), Posterior::Point),
            };
            let mut zi = z0;
            if let Some(p) = head.pose {
                self.rho.apply(p.index(), &mut zi);
            }
            z.push(zi);
            items.push(ItemState { mu_raw_norm: norm, scale_raw: enc.scale_raw[i] as f64, head, posterior });
        }

        if cfg.riemannian && cfg.flow_leapfrog > 0 && backward {
            if let Some(field) = self.metric.clone() {
                z = self.riemannian_flow(&field, x, z, rng)?;
            }
        }

        let x_hat = self.decode(&z)?;
        let per_item = masked_sse_per_item(x, &x_hat)?;
        let reconstruction = per_item.iter().sum::<f64>() / b as f64;
        let regularization = items
            .iter()
            .map(|it| match (&it.posterior, cfg.family) {
                (Posterior::Gaussian { .. }, _) => kl_gaussian_standard(&it.head.canonical, it.head.scale),
                (Posterior::Vmf(_), _) => {
                    let p = VmfParams::new(UnitVector::normalize(it.head.canonical.clone()).unwrap(), it.head.scale)
                        .expect("validated concentration");
                    kl_vmf_uniform(&p)
                }
                (Posterior::Point, _) => 0.0,
            })
            .sum::<f64>()
            / b as f64;
        let use_spread = cfg.spread_loss_weight > 0.0 && b >= 2;
        let rows: Vec<&[f64]> = z.iter().map(|v| v.as_slice()).collect();
        let spread = if use_spread { spread_loss_raw(&rows)? } else { 0.0 };
        let loss = LossBreakdown::new(reconstruction, regularization, spread, cfg.spread_loss_weight);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss:?}")));
        }

        if backward {
            let dx_hat = masked_reconstruction_grad(x, &x_hat)?;
            let dz_flat = self.decoder.backward(&dx_hat);
            let mut dz: Vec<Vec<f64>> = dz_flat.chunks(m).map(|r| r.iter().map(|&v| v as f64).collect()).collect();
            if use_spread {
                for (d, g) in dz.iter_mut().zip(spread_loss_grad(&rows)) {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += cfg.spread_loss_weight * b);
                }
            }
            let mut dmu_raw = vec![0.0f32; b * m];
            let mut dscale_raw = vec![0.0f32; b];
            for (i, it) in items.iter().enumerate() {
                let (dmu, dscale) = self.item_backward(it, &mut dz[i], per_item[i] / b as f64, b);
                for (o, v) in dmu_raw[i * m..(i + 1) * m].iter_mut().zip(dmu) {
                    *o = v as f32;
                }
                dscale_raw[i] = dscale as f32;
            }
            self.encoder.backward(&dmu_raw, &dscale_raw);
        }

        Ok(ForwardOutput {
            x_hat,
            heads: items.into_iter().map(|it| it.head).collect(),
            z,
            loss,
            per_item_reconstruction: per_item,
        })
    }

    /// Gradient with respect to the raw head outputs of one item, given the
    /// upstream latent gradient `dz` and the item's share of the
    /// reconstruction loss (used by the score correction).
    fn item_backward(&self, it: &ItemState, dz: &mut [f64], recon_share: f64, b: usize) -> (Vec<f64>, f64) {
        let cfg = &self.config;
        let bf = b as f64;
        if let Some(p) = it.head.pose {
            self.rho.apply_inverse(p.index(), dz);
        }
        let (mut dmu, dscale) = match &it.posterior {
            Posterior::Gaussian { eps } => {
                let (dkl_mu, dkl_sigma) = kl_gaussian_standard_grad(&it.head.canonical, it.head.scale);
                let dmu: Vec<f64> = dz.iter().zip(&dkl_mu).map(|(a, k)| a + k / bf).collect();
                let dsigma = dz.iter().zip(eps).map(|(a, e)| a * e).sum::<f64>() + dkl_sigma / bf;
                (dmu, dsigma * sigmoid(it.scale_raw))
            }
            Posterior::Vmf(draw) => {
                let (dmu, mut dkappa) = draw.pullback(dz);
                dkappa += kl_vmf_uniform_grad(cfg.latent_dim, it.head.scale).unwrap_or(0.0) / bf;
                if cfg.score_correction {
                    dkappa += recon_share * draw.score(cfg.latent_dim);
                }
                let unclamped = softplus(it.scale_raw) + 1.0;
                let draw_grad = if unclamped >= cfg.kappa_min { dkappa * sigmoid(it.scale_raw) } else { 0.0 };
                (dmu, draw_grad)
            }
            Posterior::Point => (dz.to_vec(), 0.0),
        };
        if let Some(p) = it.head.pose {
            self.rho.apply(p.index(), &mut dmu);
        }
        if cfg.family == Family::Spherical {
            let mu = &it.head.mu;
            let dot: f64 = mu.iter().zip(&dmu).map(|(a, b)| a * b).sum();
            let n = it.mu_raw_norm.max(1e-12);
            dmu.iter_mut().zip(mu).for_each(|(d, u)| *d = (*d - u * dot) / n);
        }
        (dmu, dscale)
    }

    /// Moves each sampled latent along a short Hamiltonian trajectory under
    /// the metric toward high posterior density `−SSE(x, dec(z)) − ½‖z‖²`.
    /// The encoder receives a straight-through gradient.
    fn riemannian_flow<R: Rng + ?Sized>(
        &mut self,
        field: &MetricField,
        x: &Tensor,
        z: Vec<Vec<f64>>,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        let cfg = RhmcConfig { step: self.config.flow_step, n_leapfrog: self.config.flow_leapfrog, metropolis: false };
        let mut out = Vec::with_capacity(z.len());
        for (i, zi) in z.into_iter().enumerate() {
            let xi = Tensor::stack(&[x.item(i)], &x.shape()[1..])?;
            let target = DecoderPosterior { decoder: RefCell::new(&mut self.decoder), x: xi };
            let moved = rhmc_sample(field, &zi, 1, &cfg, &target, rng);
            out.push(match moved {
                Ok(v) if v.iter().all(|a| a.is_finite()) => v,
                _ => zi,
            });
        }
        self.decoder.zero_grad();
        Ok(out)
    }
}

struct DecoderPosterior<'a> {
    decoder: RefCell<&'a mut Decoder>,
    x: Tensor,
}

impl LogTarget for DecoderPosterior<'_> {
    fn log_density(&self, z: &[f64]) -> f64 {
        let zf: Vec<f32> = z.iter().map(|&v| v as f32).collect();
        let mut dec = self.decoder.borrow_mut();
        match dec.forward(&zf) {
            Ok(xh) => {
                let sse = super::losses::masked_reconstruction_loss(&self.x, &xh).unwrap_or(f64::INFINITY);
                -sse - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn grad_log_density(&self, z: &[f64]) -> Vec<f64> {
        let zf: Vec<f32> = z.iter().map(|&v| v as f32).collect();
        let mut dec = self.decoder.borrow_mut();
        let Ok(xh) = dec.forward(&zf) else { return vec![f64::NAN; z.len()] };
        let Ok(dxh) = masked_reconstruction_grad(&self.x, &xh) else { return vec![f64::NAN; z.len()] };
        let dz = dec.backward(&dxh);
        dz.iter().zip(z).map(|(&g, &v)| -(g as f64) - v).collect()
    }
}

impl HasParams for Model {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encoder.visit_params(f);
        self.decoder.visit_params(f);
    }
}
