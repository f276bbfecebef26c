//! Latent readout and injection layers that intertwine the spatial group
//! action with the block-rotation representation ρ on latent vectors.

use super::rotation::GroupAction;
use super::{estimate_pose_item, BlockRotation};
use crate::nets::gemm::gemm;
use crate::nets::{HasParams, Param, Tensor};

/// Encoder readout: `μ = Σ_h ρ(h) B(T_{−h} f)`, `s = mean_h b(T_{−h} f)`.
/// Rotating the input by g rotates μ by ρ(g) and leaves s unchanged.
#[derive(Debug, Clone)]
pub struct EncoderHead {
    order: usize,
    features: usize,
    latent: usize,
    plane: usize,
    rho: BlockRotation,
    actions: Vec<GroupAction>,
    pub mu_weight: Param,
    pub mu_bias: Param,
    pub scale_weight: Param,
    pub scale_bias: Param,
    cache: Option<Vec<Vec<f32>>>,
}

/// Result of an encoder-head forward pass on a batch.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// `[B, m]` pre-normalization mean descriptors.
    pub mu_raw: Vec<f32>,
    /// `[B]` unconstrained spread parameters.
    pub scale_raw: Vec<f32>,
    pub pose: Vec<usize>,
}

impl EncoderHead {
    /// `channels × order × size × size` features in, `latent` out.
    pub fn new(name: &str, channels: usize, order: usize, size: usize, latent: usize, seed: u64) -> Self {
        let features = channels * order * size * size;
        Self {
            order,
            features,
            latent,
            plane: size * size,
            rho: BlockRotation::new(latent, order),
            actions: (0..order).map(|h| GroupAction::new(size, (order - h) % order, order)).collect(),
            mu_weight: Param::uniform(format!("{name}.mu.weight"), &[latent, features], features, seed),
            mu_bias: Param::uniform(format!("{name}.mu.bias"), &[latent], features, seed),
            scale_weight: Param::uniform(format!("{name}.scale.weight"), &[1, features], features, seed),
            scale_bias: Param::zeros(format!("{name}.scale.bias"), &[1]),
            cache: None,
        }
    }

    pub fn forward(&mut self, f: &Tensor) -> HeadOutput {
        let b = f.batch();
        let (d, m, n) = (self.features, self.latent, self.order);
        assert_eq!(f.len(), b * d, "encoder head feature size");
        let pose = (0..b).map(|i| estimate_pose_item(f.item(i), n, self.plane)).collect();
        let mut mu = vec![0.0f32; b * m];
        let mut scale = vec![0.0f32; b];
        let mut rotated = Vec::with_capacity(n);
        let mut y = vec![0.0f32; b * m];
        for h in 0..n {
            let mut xh = vec![0.0f32; b * d];
            for i in 0..b {
                self.actions[h].apply(f.item(i), &mut xh[i * d..(i + 1) * d]);
            }
            for row in y.chunks_mut(m) {
                row.copy_from_slice(&self.mu_bias.value);
            }
            gemm(b, d, m, 1.0, &xh, false, &self.mu_weight.value, true, 1.0, &mut y);
            for i in 0..b {
                let yi = &mut y[i * m..(i + 1) * m];
                self.rho.apply_f32(h, yi);
                mu[i * m..(i + 1) * m].iter_mut().zip(yi.iter()).for_each(|(a, v)| *a += v);
                let s: f32 = xh[i * d..(i + 1) * d].iter().zip(&self.scale_weight.value).map(|(a, w)| a * w).sum();
                scale[i] += (s + self.scale_bias.value[0]) / n as f32;
            }
            rotated.push(xh);
        }
        self.cache = Some(rotated);
        HeadOutput { mu_raw: mu, scale_raw: scale, pose }
    }

    /// Takes `[B, m]` and `[B]` upstream gradients, returns the feature gradient.
    pub fn backward(&mut self, dmu: &[f32], dscale: &[f32], feature_shape: &[usize]) -> Tensor {
        let rotated = self.cache.take().expect("encoder head backward before forward");
        let (d, m, n) = (self.features, self.latent, self.order);
        let b = dscale.len();
        let mut df = Tensor::zeros(feature_shape);
        let mut dy = vec![0.0f32; b * m];
        let mut dx = vec![0.0f32; b * d];
        for (h, xh) in rotated.iter().enumerate() {
            dy.copy_from_slice(dmu);
            for i in 0..b {
                self.rho.apply_transpose_f32(h, &mut dy[i * m..(i + 1) * m]);
            }
            gemm(m, b, d, 1.0, &dy, true, xh, false, 1.0, &mut self.mu_weight.grad);
            for row in dy.chunks(m) {
                self.mu_bias.grad.iter_mut().zip(row).for_each(|(g, v)| *g += v);
            }
            gemm(b, m, d, 1.0, &dy, false, &self.mu_weight.value, false, 0.0, &mut dx);
            for i in 0..b {
                let ds = dscale[i] / n as f32;
                self.scale_bias.grad[0] += ds;
                let xi = &xh[i * d..(i + 1) * d];
                let dxi = &mut dx[i * d..(i + 1) * d];
                for ((g, w), (dxv, xv)) in
                    self.scale_weight.grad.iter_mut().zip(&self.scale_weight.value).zip(dxi.iter_mut().zip(xi))
                {
                    *g += ds * xv;
                    *dxv += ds * w;
                }
                self.actions[h].apply_transpose_add(dxi, df.item_mut(i));
            }
        }
        df
    }
}

impl HasParams for EncoderHead {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.mu_weight);
        f(&mut self.mu_bias);
        f(&mut self.scale_weight);
        f(&mut self.scale_bias);
    }
}

/// Decoder injection: `D(z) = Σ_h T_h B(ρ(h)⁻¹ z)`, so `D(ρ(g) z) = T_g D(z)`.
#[derive(Debug, Clone)]
pub struct DecoderHead {
    order: usize,
    features: usize,
    latent: usize,
    shape: [usize; 4],
    rho: BlockRotation,
    actions: Vec<GroupAction>,
    pub weight: Param,
    pub bias: Param,
    cache: Option<Vec<Vec<f32>>>,
}

impl DecoderHead {
    pub fn new(name: &str, latent: usize, channels: usize, order: usize, size: usize, seed: u64) -> Self {
        let features = channels * order * size * size;
        Self {
            order,
            features,
            latent,
            shape: [channels, order, size, size],
            rho: BlockRotation::new(latent, order),
            actions: (0..order).map(|h| GroupAction::new(size, h, order)).collect(),
            weight: Param::uniform(format!("{name}.weight"), &[features, latent], latent, seed),
            bias: Param::uniform(format!("{name}.bias"), &[features], latent, seed),
            cache: None,
        }
    }

    /// `z` is `[B, m]`; output `[B, C, N, s, s]`.
    pub fn forward(&mut self, z: &[f32]) -> Tensor {
        let (d, m, n) = (self.features, self.latent, self.order);
        let b = z.len() / m;
        let mut out = vec![0.0f32; b * d];
        let mut v = vec![0.0f32; b * d];
        let mut us = Vec::with_capacity(n);
        for h in 0..n {
            let mut u = z.to_vec();
            for i in 0..b {
                self.rho.apply_inverse_f32(h, &mut u[i * m..(i + 1) * m]);
            }
            for row in v.chunks_mut(d) {
                row.copy_from_slice(&self.bias.value);
            }
            gemm(b, m, d, 1.0, &u, false, &self.weight.value, true, 1.0, &mut v);
            let mut tv = vec![0.0f32; d];
            for i in 0..b {
                self.actions[h].apply(&v[i * d..(i + 1) * d], &mut tv);
                out[i * d..(i + 1) * d].iter_mut().zip(&tv).for_each(|(o, x)| *o += x);
            }
            us.push(u);
        }
        self.cache = Some(us);
        let [c, nn, s1, s2] = self.shape;
        Tensor::from_vec(&[b, c, nn, s1, s2], out).expect("decoder head shape")
    }

    /// Returns `[B, m]` latent gradient.
    pub fn backward(&mut self, dout: &Tensor) -> Vec<f32> {
        let us = self.cache.take().expect("decoder head backward before forward");
        let (d, m) = (self.features, self.latent);
        let b = dout.batch();
        let mut dz = vec![0.0f32; b * m];
        let mut dv = vec![0.0f32; b * d];
        let mut du = vec![0.0f32; b * m];
        for (h, u) in us.iter().enumerate() {
            dv.fill(0.0);
            for i in 0..b {
                self.actions[h].apply_transpose_add(dout.item(i), &mut dv[i * d..(i + 1) * d]);
            }
            gemm(d, b, m, 1.0, &dv, true, u, false, 1.0, &mut self.weight.grad);
            for row in dv.chunks(d) {
                self.bias.grad.iter_mut().zip(row).for_each(|(g, x)| *g += x);
            }
            gemm(b, d, m, 1.0, &dv, false, &self.weight.value, false, 0.0, &mut du);
            for i in 0..b {
                let r = &mut du[i * m..(i + 1) * m];
                // (ρ(h)⁻¹)ᵀ = ρ(h)
                self.rho.apply_f32(h, r);
                dz[i * m..(i + 1) * m].iter_mut().zip(r.iter()).for_each(|(a, x)| *a += x);
            }
        }
        dz
    }
}

impl HasParams for DecoderHead {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
