//! Discrete rotation-group convolutions built on a shared grouped-conv core.

use super::rotation::RotationMap;
use crate::error::{Error, Result};
use crate::nets::layers::{conv_backward, conv_forward, ConvGeom};
use crate::nets::{HasParams, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupConvKind {
    /// Plain image → group feature map; kernels rotated per group element.
    Lifting,
    /// Group feature map → group feature map, mixing all channels.
    Group,
    /// Group feature map → group feature map, one channel at a time.
    Depthwise,
}

/// Rotation-equivariant convolution over the cyclic group of order `N`.
/// With `N = 1` every kind reduces to the corresponding ordinary convolution.
#[derive(Debug, Clone)]
pub struct GroupConv {
    kind: GroupConvKind,
    order: usize,
    cin: usize,
    cout: usize,
    k: usize,
    pub weight: Param,
    pub bias: Param,
    rots: Vec<RotationMap>,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl GroupConv {
    pub fn new(name: &str, kind: GroupConvKind, cin: usize, cout: usize, k: usize, order: usize, seed: u64) -> Self {
        assert!(order >= 1 && k % 2 == 1, "group order ≥ 1 and odd kernel required");
        let (shape, fan_in) = match kind {
            GroupConvKind::Lifting => (vec![cout, cin, k, k], cin * k * k),
            GroupConvKind::Group => (vec![cout, cin, order, k, k], cin * order * k * k),
            GroupConvKind::Depthwise => {
                assert_eq!(cin, cout, "depthwise conv keeps the channel count");
                (vec![cin, order, k, k], order * k * k)
            }
        };
        Self {
            kind,
            order,
            cin,
            cout,
            k,
            weight: Param::uniform(format!("{name}.weight"), &shape, fan_in, seed),
            bias: Param::uniform(format!("{name}.bias"), &[cout], fan_in, seed),
            rots: (0..order).map(|n| RotationMap::for_group(k, n, order)).collect(),
            cache: None,
        }
    }

    pub fn kind(&self) -> GroupConvKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn geom(&self, h: usize, w: usize) -> ConvGeom {
        let n = self.order;
        match self.kind {
            GroupConvKind::Lifting => ConvGeom { cin: self.cin, cout: self.cout * n, groups: 1, k: self.k, h, w },
            GroupConvKind::Group => ConvGeom { cin: self.cin * n, cout: self.cout * n, groups: 1, k: self.k, h, w },
            GroupConvKind::Depthwise => {
                ConvGeom { cin: self.cin * n, cout: self.cout * n, groups: self.cin, k: self.k, h, w }
            }
        }
    }

    /// Effective ordinary-convolution weight, with rows indexed `o·N + n`.
    pub fn expanded_weight(&self) -> Vec<f32> {
        let (n_ord, k2) = (self.order, self.k * self.k);
        let w = &self.weight.value;
        match self.kind {
            GroupConvKind::Lifting => {
                let mut eff = vec![0.0; self.cout * n_ord * self.cin * k2];
                for o in 0..self.cout {
                    for n in 0..n_ord {
                        for c in 0..self.cin {
                            let src = &w[(o * self.cin + c) * k2..][..k2];
                            let dst = &mut eff[((o * n_ord + n) * self.cin + c) * k2..][..k2];
                            self.rots[n].apply(src, dst);
                        }
                    }
                }
                eff
            }
            GroupConvKind::Group => {
                let cin_n = self.cin * n_ord;
                let mut eff = vec![0.0; self.cout * n_ord * cin_n * k2];
                for o in 0..self.cout {
                    for n in 0..n_ord {
                        for c in 0..self.cin {
                            for np in 0..n_ord {
                                let j = (np + n_ord - n) % n_ord;
                                let src = &w[((o * self.cin + c) * n_ord + j) * k2..][..k2];
                                let dst = &mut eff[((o * n_ord + n) * cin_n + c * n_ord + np) * k2..][..k2];
                                self.rots[n].apply(src, dst);
                            }
                        }
                    }
                }
                eff
            }
            GroupConvKind::Depthwise => {
                let mut eff = vec![0.0; self.cin * n_ord * n_ord * k2];
                for c in 0..self.cin {
                    for n in 0..n_ord {
                        for np in 0..n_ord {
                            let j = (np + n_ord - n) % n_ord;
                            let src = &w[(c * n_ord + j) * k2..][..k2];
                            let dst = &mut eff[((c * n_ord + n) * n_ord + np) * k2..][..k2];
                            self.rots[n].apply(src, dst);
                        }
                    }
                }
                eff
            }
        }
    }

    fn fold_weight_grad(&mut self, deff: &[f32]) {
        let (n_ord, k2) = (self.order, self.k * self.k);
        let g = &mut self.weight.grad;
        match self.kind {
            GroupConvKind::Lifting => {
                for o in 0..self.cout {
                    for n in 0..n_ord {
                        for c in 0..self.cin {
                            let src = &deff[((o * n_ord + n) * self.cin + c) * k2..][..k2];
                            self.rots[n].apply_transpose_add(src, &mut g[(o * self.cin + c) * k2..][..k2]);
                        }
                    }
                }
            }
            GroupConvKind::Group => {
                let cin_n = self.cin * n_ord;
                for o in 0..self.cout {
                    for n in 0..n_ord {
                        for c in 0..self.cin {
                            for np in 0..n_ord {
                                let j = (np + n_ord - n) % n_ord;
                                let src = &deff[((o * n_ord + n) * cin_n + c * n_ord + np) * k2..][..k2];
                                let dst = &mut g[((o * self.cin + c) * n_ord + j) * k2..][..k2];
                                self.rots[n].apply_transpose_add(src, dst);
                            }
                        }
                    }
                }
            }
            GroupConvKind::Depthwise => {
                for c in 0..self.cin {
                    for n in 0..n_ord {
                        for np in 0..n_ord {
                            let j = (np + n_ord - n) % n_ord;
                            let src = &deff[((c * n_ord + n) * n_ord + np) * k2..][..k2];
                            let dst = &mut g[(c * n_ord + j) * k2..][..k2];
                            self.rots[n].apply_transpose_add(src, dst);
                        }
                    }
                }
            }
        }
    }

    fn expanded_bias(&self) -> Vec<f32> {
        self.bias.value.iter().flat_map(|&b| std::iter::repeat_n(b, self.order)).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        let sh = x.shape();
        let n = sh.len();
        let (h, w) = (sh[n - 2], sh[n - 1]);
        let want = match self.kind {
            GroupConvKind::Lifting => self.cin,
            _ => self.cin * self.order,
        };
        if x.len() != x.batch() * want * h * w {
            return Err(Error::Shape(format!("group conv expects {want} input planes per item, got shape {sh:?}")));
        }
        Ok((h, w))
    }

    /// Output is `[B, cout, N, H, W]`.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = self.check_input(x)?;
        let g = self.geom(h, w);
        let eff = self.expanded_weight();
        let y = conv_forward(&g, x.data(), x.batch(), &eff, &self.expanded_bias());
        let out = Tensor::from_vec(&[x.batch(), self.cout, self.order, h, w], y)?;
        self.cache = Some((x.clone(), eff));
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (x, eff) = self.cache.take().expect("group conv backward before forward");
        let sh = x.shape();
        let (h, w) = (sh[sh.len() - 2], sh[sh.len() - 1]);
        let g = self.geom(h, w);
        let mut deff = vec![0.0; eff.len()];
        let mut db = vec![0.0; g.cout];
        let dx = conv_backward(&g, x.data(), x.batch(), &eff, dy.data(), &mut deff, &mut db);
        self.fold_weight_grad(&deff);
        for (o, chunk) in db.chunks(self.order).enumerate() {
            self.bias.grad[o] += chunk.iter().sum::<f32>();
        }
        Tensor::from_vec(x.shape(), dx).expect("group conv dx shape")
    }
}

impl HasParams for GroupConv {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Max,
    Mean,
    Sum,
}

/// Collapses the group axis of `[B, C, N, H, W]` into `[B, C, H, W]`.
pub fn project_invariant(f: &Tensor, mode: Projection) -> Result<Tensor> {
    let sh = f.shape();
    if sh.len() != 5 {
        return Err(Error::Shape(format!("expected [B, C, N, H, W], got {sh:?}")));
    }
    let (b, c, n, h, w) = (sh[0], sh[1], sh[2], sh[3], sh[4]);
    let hw = h * w;
    let mut out = vec![0.0; b * c * hw];
    for (bc, dst) in out.chunks_mut(hw).enumerate() {
        let base = bc * n * hw;
        for (j, d) in dst.iter_mut().enumerate() {
            let vals = (0..n).map(|g| f.data()[base + g * hw + j]);
            *d = match mode {
                Projection::Max => vals.fold(f32::NEG_INFINITY, f32::max),
                Projection::Mean => vals.sum::<f32>() / n as f32,
                Projection::Sum => vals.sum(),
            };
        }
    }
    Tensor::from_vec(&[b, c, h, w], out)
}

/// Backward of the mean projection: spreads `dy / N` over the group axis.
pub fn project_mean_backward(dy: &Tensor, order: usize) -> Tensor {
    let sh = dy.shape();
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let hw = h * w;
    let mut dx = vec![0.0; b * c * order * hw];
    for (bc, src) in dy.data().chunks(hw).enumerate() {
        for g in 0..order {
            let dst = &mut dx[(bc * order + g) * hw..][..hw];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = s / order as f32);
        }
    }
    Tensor::from_vec(&[b, c, order, h, w], dx).expect("projection shape")
}
