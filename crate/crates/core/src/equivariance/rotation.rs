//! Planar rotations of square grids about their centre.

use std::f64::consts::FRAC_PI_2;

/// Sparse linear map rotating a `size × size` grid. Multiples of 90° are exact
/// pixel permutations; other angles use bilinear interpolation with zero
/// padding outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMap {
    size: usize,
    taps: Vec<Vec<(u32, f32)>>,
}

impl RotationMap {
    /// Counter-clockwise rotation by `angle` radians.
    pub fn new(size: usize, angle: f64) -> Self {
        let quarters = angle / FRAC_PI_2;
        let q = quarters.round();
        let taps = if (quarters - q).abs() < 1e-9 {
            exact_taps(size, (q as i64).rem_euclid(4) as u8)
        } else {
            bilinear_taps(size, angle)
        };
        Self { size, taps }
    }

    /// Rotation by the group element `g` of the cyclic group of order `n`.
    pub fn for_group(size: usize, g: usize, n: usize) -> Self {
        Self::new(size, 2.0 * std::f64::consts::PI * (g % n) as f64 / n as f64)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_permutation(&self) -> bool {
        self.taps.iter().all(|t| t.len() == 1 && t[0].1 == 1.0)
    }

    /// `dst = R src`.
    pub fn apply(&self, src: &[f32], dst: &mut [f32]) {
        debug_assert_eq!(src.len(), self.size * self.size);
        for (d, taps) in dst.iter_mut().zip(&self.taps) {
            *d = taps.iter().map(|&(i, w)| w * src[i as usize]).sum();
        }
    }

    /// `dst += Rᵀ src`, the adjoint used in backward passes.
    pub fn apply_transpose_add(&self, src: &[f32], dst: &mut [f32]) {
        for (s, taps) in src.iter().zip(&self.taps) {
            for &(i, w) in taps {
                dst[i as usize] += w * s;
            }
        }
    }

    pub fn rotate(&self, src: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; src.len()];
        self.apply(src, &mut out);
        out
    }
}

fn exact_taps(size: usize, q: u8) -> Vec<Vec<(u32, f32)>> {
    let last = size - 1;
    let mut taps = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            // source pixel that lands on (r, c) after a CCW quarter turn
            let (sr, sc) = match q {
                0 => (r, c),
                1 => (c, last - r),
                2 => (last - r, last - c),
                _ => (last - c, r),
            };
            taps.push(vec![((sr * size + sc) as u32, 1.0)]);
        }
    }
    taps
}

fn bilinear_taps(size: usize, angle: f64) -> Vec<Vec<(u32, f32)>> {
    let centre = (size as f64 - 1.0) / 2.0;
    let (s, c) = angle.sin_cos();
    let mut taps = Vec::with_capacity(size * size);
    for r in 0..size {
        for col in 0..size {
            let u = col as f64 - centre;
            let v = centre - r as f64;
            // inverse rotation into source coordinates
            let su = c * u + s * v;
            let sv = -s * u + c * v;
            let fc = centre + su;
            let fr = centre - sv;
            let (r0, c0) = (fr.floor(), fc.floor());
            let (ar, ac) = (fr - r0, fc - c0);
            let mut t = Vec::with_capacity(4);
            for (dr, wr) in [(0.0, 1.0 - ar), (1.0, ar)] {
                for (dc, wc) in [(0.0, 1.0 - ac), (1.0, ac)] {
                    let (rr, cc) = (r0 + dr, c0 + dc);
                    let w = wr * wc;
                    if w > 1e-12 && rr >= 0.0 && cc >= 0.0 && rr < size as f64 && cc < size as f64 {
                        t.push(((rr as usize * size + cc as usize) as u32, w as f32));
                    }
                }
            }
            taps.push(t);
        }
    }
    taps
}

/// The action `T_g` on a single group feature map `[C, N, H, W]`: rotate each
/// plane spatially and shift the group axis by `g`.
#[derive(Debug, Clone)]
pub struct GroupAction {
    order: usize,
    shift: usize,
    rot: RotationMap,
}

impl GroupAction {
    pub fn new(size: usize, g: usize, order: usize) -> Self {
        Self { order, shift: g % order, rot: RotationMap::for_group(size, g, order) }
    }

    pub fn apply(&self, src: &[f32], dst: &mut [f32]) {
        let plane = self.rot.size() * self.rot.size();
        let per_c = self.order * plane;
        debug_assert_eq!(src.len() % per_c, 0);
        for c in 0..src.len() / per_c {
            for n in 0..self.order {
                let from = (n + self.order - self.shift) % self.order;
                let s = &src[c * per_c + from * plane..][..plane];
                let d = &mut dst[c * per_c + n * plane..][..plane];
                self.rot.apply(s, d);
            }
        }
    }

    pub fn apply_transpose_add(&self, src: &[f32], dst: &mut [f32]) {
        let plane = self.rot.size() * self.rot.size();
        let per_c = self.order * plane;
        for c in 0..src.len() / per_c {
            for n in 0..self.order {
                let from = (n + self.order - self.shift) % self.order;
                let s = &src[c * per_c + n * plane..][..plane];
                let d = &mut dst[c * per_c + from * plane..][..plane];
                self.rot.apply_transpose_add(s, d);
            }
        }
    }
}

/// Rotates every `size × size` plane of a buffer (images with any number of
/// channels or batch items).
pub fn rotate_planes(src: &[f32], size: usize, angle: f64) -> Vec<f32> {
    let map = RotationMap::new(size, angle);
    let plane = size * size;
    let mut out = vec![0.0; src.len()];
    for (s, d) in src.chunks(plane).zip(out.chunks_mut(plane)) {
        map.apply(s, d);
    }
    out
}
