//! Layers with explicit forward and backward passes.
//!
//! Feature maps are `[B, C, N, H, W]` tensors: `N` is the group axis (1 for
//! ordinary CNNs) and channel `c` of group element `n` lives at flat channel
//! index `c·N + n`. Every layer caches what its backward pass needs during
//! `forward` and accumulates parameter gradients in `backward`.

use super::gemm::gemm;
use super::param::{HasParams, Param};
use super::tensor::Tensor;

/// Geometry of a same-padded, stride-1 grouped convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn rows(&self) -> usize {
        self.cin_g() * self.k * self.k
    }
    fn hw(&self) -> usize {
        self.h * self.w
    }
}

fn im2col(g: &ConvGeom, x: &[f32], cols: &mut [f32]) {
    let (h, w, k) = (g.h, g.w, g.k);
    let p = k / 2;
    let hw = h * w;
    for c in 0..g.cin_g() {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                let x_lo = p.saturating_sub(kx);
                let x_hi = (w + p).saturating_sub(kx).min(w);
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - p as isize;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        out.fill(0.0);
                        continue;
                    }
                    out[..x_lo].fill(0.0);
                    out[x_hi..].fill(0.0);
                    let sx0 = x_lo + kx - p;
                    let src = &plane[sy as usize * w + sx0..][..x_hi - x_lo];
                    out[x_lo..x_hi].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f32], dx: &mut [f32]) {
    let (h, w, k) = (g.h, g.w, g.k);
    let p = k / 2;
    let hw = h * w;
    for c in 0..g.cin_g() {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                let x_lo = p.saturating_sub(kx);
                let x_hi = (w + p).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sx0 = x_lo + kx - p;
                    let dst = &mut plane[sy as usize * w + sx0..][..x_hi - x_lo];
                    for (d, s) in dst.iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// `y = conv(x, w) + b` over a batch; `x` is `[B, cin·H·W]` flattened.
pub(crate) fn conv_forward(g: &ConvGeom, x: &[f32], batch: usize, w: &[f32], b: &[f32]) -> Vec<f32> {
    let hw = g.hw();
    let mut out = vec![0.0; batch * g.cout * hw];
    let mut cols = vec![0.0; g.rows() * hw];
    let wg = g.cout_g() * g.rows();
    for bi in 0..batch {
        let xb = &x[bi * g.cin * hw..(bi + 1) * g.cin * hw];
        let yb = &mut out[bi * g.cout * hw..(bi + 1) * g.cout * hw];
        for o in 0..g.cout {
            yb[o * hw..(o + 1) * hw].fill(b[o]);
        }
        for gi in 0..g.groups {
            im2col(g, &xb[gi * g.cin_g() * hw..], &mut cols);
            gemm(
                g.cout_g(),
                g.rows(),
                hw,
                1.0,
                &w[gi * wg..(gi + 1) * wg],
                false,
                &cols,
                false,
                1.0,
                &mut yb[gi * g.cout_g() * hw..(gi + 1) * g.cout_g() * hw],
            );
        }
    }
    out
}

/// Returns `dx` and accumulates into `dw`, `db`.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f32],
    batch: usize,
    w: &[f32],
    dy: &[f32],
    dw: &mut [f32],
    db: &mut [f32],
) -> Vec<f32> {
    let hw = g.hw();
    let mut dx = vec![0.0; batch * g.cin * hw];
    let mut cols = vec![0.0; g.rows() * hw];
    let mut dcols = vec![0.0; g.rows() * hw];
    let wg = g.cout_g() * g.rows();
    for bi in 0..batch {
        let xb = &x[bi * g.cin * hw..(bi + 1) * g.cin * hw];
        let dyb = &dy[bi * g.cout * hw..(bi + 1) * g.cout * hw];
        for o in 0..g.cout {
            db[o] += dyb[o * hw..(o + 1) * hw].iter().sum::<f32>();
        }
        for gi in 0..g.groups {
            let dyg = &dyb[gi * g.cout_g() * hw..(gi + 1) * g.cout_g() * hw];
            im2col(g, &xb[gi * g.cin_g() * hw..], &mut cols);
            gemm(g.cout_g(), hw, g.rows(), 1.0, dyg, false, &cols, true, 1.0, &mut dw[gi * wg..(gi + 1) * wg]);
            gemm(g.rows(), g.cout_g(), hw, 1.0, &w[gi * wg..(gi + 1) * wg], true, dyg, false, 0.0, &mut dcols);
            let dxb = &mut dx[bi * g.cin * hw..(bi + 1) * g.cin * hw];
            col2im_add(g, &dcols, &mut dxb[gi * g.cin_g() * hw..]);
        }
    }
    dx
}

/// Channel mixing shared across group elements and pixels: on the view
/// `[B, C, S]` computes `y[b] = W x[b] + bias`.
#[derive(Debug, Clone)]
pub struct Pointwise {
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Pointwise {
    pub fn new(name: &str, cin: usize, cout: usize, seed: u64) -> Self {
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[cout, cin], cin, seed),
            bias: Param::uniform(format!("{name}.bias"), &[cout], cin, seed),
            cache: None,
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.shape[1], self.weight.shape[0])
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let (cin, cout) = self.dims();
        let b = x.batch();
        let s = x.len() / (b * cin);
        let mut out = vec![0.0; b * cout * s];
        for bi in 0..b {
            let y = &mut out[bi * cout * s..(bi + 1) * cout * s];
            for o in 0..cout {
                y[o * s..(o + 1) * s].fill(self.bias.value[o]);
            }
            gemm(cout, cin, s, 1.0, &self.weight.value, false, x.item(bi), false, 1.0, y);
        }
        let mut shape = x.shape().to_vec();
        shape[1] = cout;
        self.cache = Some(x.clone());
        Tensor::from_vec(&shape, out).expect("pointwise shape")
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.cache.take().expect("pointwise backward before forward");
        let (cin, cout) = self.dims();
        let b = x.batch();
        let s = x.len() / (b * cin);
        let mut dx = Tensor::zeros(x.shape());
        for bi in 0..b {
            let dyb = dy.item(bi);
            for o in 0..cout {
                self.bias.grad[o] += dyb[o * s..(o + 1) * s].iter().sum::<f32>();
            }
            gemm(cout, s, cin, 1.0, dyb, false, x.item(bi), true, 1.0, &mut self.weight.grad);
            gemm(cin, cout, s, 1.0, &self.weight.value, true, dyb, false, 0.0, dx.item_mut(bi));
        }
        dx
    }
}

impl HasParams for Pointwise {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Normalizes over the channel axis independently at every group element
/// and pixel.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    eps: f32,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl LayerNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.gamma"), &[channels], 1.0),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            eps: 1e-6,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let c = self.gamma.len();
        let b = x.batch();
        let s = x.len() / (b * c);
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0f32; b * s];
        let mut out = Tensor::zeros(x.shape());
        for bi in 0..b {
            let xb = x.item(bi);
            let mut mean = vec![0.0f32; s];
            let mut var = vec![0.0f32; s];
            for ci in 0..c {
                for (m, v) in mean.iter_mut().zip(&xb[ci * s..(ci + 1) * s]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= c as f32);
            for ci in 0..c {
                for ((v, xv), m) in var.iter_mut().zip(&xb[ci * s..(ci + 1) * s]).zip(&mean) {
                    *v += (xv - m) * (xv - m);
                }
            }
            let is = &mut inv_std[bi * s..(bi + 1) * s];
            for (i, v) in is.iter_mut().zip(&var) {
                *i = 1.0 / (v / c as f32 + self.eps).sqrt();
            }
            let xh = xhat.item_mut(bi);
            for ci in 0..c {
                for j in 0..s {
                    xh[ci * s + j] = (xb[ci * s + j] - mean[j]) * is[j];
                }
            }
            let ob = out.item_mut(bi);
            for ci in 0..c {
                let (g, be) = (self.gamma.value[ci], self.beta.value[ci]);
                for j in 0..s {
                    ob[ci * s + j] = g * xh[ci * s + j] + be;
                }
            }
        }
        self.cache = Some((xhat, inv_std));
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.take().expect("layernorm backward before forward");
        let c = self.gamma.len();
        let b = dy.batch();
        let s = dy.len() / (b * c);
        let mut dx = Tensor::zeros(dy.shape());
        for bi in 0..b {
            let (dyb, xh) = (dy.item(bi), xhat.item(bi));
            let mut mg = vec![0.0f32; s];
            let mut mgx = vec![0.0f32; s];
            for ci in 0..c {
                let g = self.gamma.value[ci];
                let (mut gs, mut bs) = (0.0f32, 0.0f32);
                for j in 0..s {
                    let d = dyb[ci * s + j];
                    gs += d * xh[ci * s + j];
                    bs += d;
                    let gd = d * g;
                    mg[j] += gd;
                    mgx[j] += gd * xh[ci * s + j];
                }
                self.gamma.grad[ci] += gs;
                self.beta.grad[ci] += bs;
            }
            let inv_c = 1.0 / c as f32;
            let is = &inv_std[bi * s..(bi + 1) * s];
            let dxb = dx.item_mut(bi);
            for ci in 0..c {
                let g = self.gamma.value[ci];
                for j in 0..s {
                    let gd = dyb[ci * s + j] * g;
                    dxb[ci * s + j] = is[j] * (gd - mg[j] * inv_c - xh[ci * s + j] * mgx[j] * inv_c);
                }
            }
        }
        dx
    }
}

impl HasParams for LayerNorm {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// Exact (erf-based) GELU.
#[derive(Debug, Clone, Default)]
pub struct Gelu {
    cache: Option<Tensor>,
}

const INV_SQRT2: f32 = std::f32::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f32 = 0.398_942_3;

impl Gelu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = 0.5 * *v * (1.0 + libm::erff(*v * INV_SQRT2)));
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.cache.take().expect("gelu backward before forward");
        let mut dx = dy.clone();
        for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
            let cdf = 0.5 * (1.0 + libm::erff(v * INV_SQRT2));
            let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
            *d *= cdf + v * pdf;
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        self.mask = x.data().iter().map(|&v| v > 0.0).collect();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        for (d, &m) in dx.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *d = 0.0;
            }
        }
        dx
    }
}

/// Max pooling over every H×W plane. Padding cells never win.
#[derive(Debug, Clone)]
pub struct MaxPool {
    k: usize,
    stride: usize,
    pad: usize,
    cache: Option<(Vec<usize>, Vec<u32>)>,
}

impl MaxPool {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        Self { k, stride, pad, cache: None }
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let sh = x.shape();
        let (h, w) = (sh[sh.len() - 2], sh[sh.len() - 1]);
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let planes = x.len() / (h * w);
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut arg = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut bi = 0u32;
                    for ky in 0..self.k {
                        let y = (oy * self.stride + ky) as isize - self.pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let xx = (ox * self.stride + kx) as isize - self.pad as isize;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let idx = y as usize * w + xx as usize;
                            if src[idx] > best {
                                best = src[idx];
                                bi = idx as u32;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(bi);
                }
            }
        }
        let mut shape = sh.to_vec();
        let n = shape.len();
        shape[n - 2] = oh;
        shape[n - 1] = ow;
        self.cache = Some((sh.to_vec(), arg));
        Tensor::from_vec(&shape, out).expect("pool shape")
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (shape, arg) = self.cache.take().expect("pool backward before forward");
        let n = shape.len();
        let hw = shape[n - 2] * shape[n - 1];
        let ohw = dy.shape()[n - 2] * dy.shape()[n - 1];
        let mut dx = Tensor::zeros(&shape);
        for (i, (&d, &a)) in dy.data().iter().zip(&arg).enumerate() {
            let p = i / ohw;
            dx.data_mut()[p * hw + a as usize] += d;
        }
        dx
    }
}

/// Nearest-neighbour ×2 upsampling of every H×W plane.
#[derive(Debug, Clone, Default)]
pub struct Upsample2;

impl Upsample2 {
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let sh = x.shape();
        let n = sh.len();
        let (h, w) = (sh[n - 2], sh[n - 1]);
        let planes = x.len() / (h * w);
        let mut out = vec![0.0; planes * 4 * h * w];
        for p in 0..planes {
            let src = &x.data()[p * h * w..];
            let dst = &mut out[p * 4 * h * w..];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let mut shape = sh.to_vec();
        shape[n - 2] = 2 * h;
        shape[n - 1] = 2 * w;
        Tensor::from_vec(&shape, out).expect("upsample shape")
    }

    pub fn backward(&self, dy: &Tensor) -> Tensor {
        let sh = dy.shape();
        let n = sh.len();
        let (h, w) = (sh[n - 2] / 2, sh[n - 1] / 2);
        let planes = dy.len() / (4 * h * w);
        let mut out = vec![0.0; planes * h * w];
        for p in 0..planes {
            let src = &dy.data()[p * 4 * h * w..];
            let dst = &mut out[p * h * w..];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                }
            }
        }
        let mut shape = sh.to_vec();
        shape[n - 2] = h;
        shape[n - 1] = w;
        Tensor::from_vec(&shape, out).expect("upsample shape")
    }
}

/// Fully connected layer on `[B, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, input: usize, output: usize, seed: u64) -> Self {
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[output, input], input, seed),
            bias: Param::uniform(format!("{name}.bias"), &[output], input, seed),
            cache: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let (i, o, b) = (self.input_dim(), self.output_dim(), x.batch());
        let mut y = vec![0.0; b * o];
        for row in y.chunks_mut(o) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(b, i, o, 1.0, x.data(), false, &self.weight.value, true, 1.0, &mut y);
        self.cache = Some(x.clone());
        Tensor::from_vec(&[b, o], y).expect("linear shape")
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.cache.take().expect("linear backward before forward");
        let (i, o, b) = (self.input_dim(), self.output_dim(), x.batch());
        for row in dy.data().chunks(o) {
            self.bias.grad.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        gemm(o, b, i, 1.0, dy.data(), true, x.data(), false, 1.0, &mut self.weight.grad);
        let mut dx = vec![0.0; b * i];
        gemm(b, o, i, 1.0, dy.data(), false, &self.weight.value, false, 0.0, &mut dx);
        Tensor::from_vec(x.shape(), dx).expect("linear shape")
    }
}

impl HasParams for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
