//! Regular discrete-rotation group convolutions, pose estimation and latent
//! canonicalization.

mod conv;
mod head;
mod rotation;

pub use conv::{project_invariant, project_mean_backward, GroupConv, GroupConvKind, Projection};
pub use head::{DecoderHead, EncoderHead, HeadOutput};
pub use rotation::{rotate_planes, GroupAction, RotationMap};

use crate::error::{Error, Result};
use crate::nets::Tensor;

/// A `[B, C, N, H, W]` tensor tagged with its group order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFeatureMap {
    tensor: Tensor,
    order: usize,
}

impl GroupFeatureMap {
    pub fn new(tensor: Tensor, order: usize) -> Result<Self> {
        let sh = tensor.shape();
        if sh.len() != 5 || sh[2] != order {
            return Err(Error::Shape(format!("expected group axis of length {order}, got shape {sh:?}")));
        }
        Ok(Self { tensor, order })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    /// Estimated pose of every batch item.
    pub fn poses(&self) -> Vec<PoseDescriptor> {
        let sh = self.tensor.shape();
        let plane = sh[3] * sh[4];
        (0..self.tensor.batch())
            .map(|i| PoseDescriptor::new(estimate_pose_item(self.tensor.item(i), self.order, plane), self.order))
            .collect()
    }
}

/// Orientation of an input, quantized to the group `C_N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoseDescriptor {
    index: usize,
    order: usize,
}

impl PoseDescriptor {
    pub fn new(index: usize, order: usize) -> Self {
        assert!(order >= 1 && index < order, "pose index {index} out of range for order {order}");
        Self { index, order }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn angle(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.index as f64 / self.order as f64
    }
}

/// Argmax over group elements of the energy `Σ_c (mean_x f[c, n, x])²` of
/// one `[C, N, P]` item with planes of `plane` pixels; ties resolve to the
/// lowest index.
pub(crate) fn estimate_pose_item(f: &[f32], order: usize, plane: usize) -> usize {
    if order == 1 {
        return 0;
    }
    let energy = group_energy(f, order, plane);
    let mut best = 0;
    for n in 1..order {
        if energy[n] > energy[best] {
            best = n;
        }
    }
    best
}

/// Per-group-element pooled energy. Plane values are summed in sorted order
/// so that exactly permuted planes give bit-identical energies.
pub(crate) fn group_energy(f: &[f32], order: usize, plane: usize) -> Vec<f64> {
    let mut e = vec![0.0f64; order];
    let mut vals = Vec::with_capacity(plane);
    for chunk in f.chunks(order * plane) {
        for (n, p) in chunk.chunks(plane).enumerate() {
            vals.clear();
            vals.extend(p.iter().map(|&v| v as f64));
            vals.sort_by(f64::total_cmp);
            let mean = vals.iter().sum::<f64>() / plane as f64;
            e[n] += mean * mean;
        }
    }
    e
}

/// Latent representation ρ of `C_N`: `⌊m/2⌋` 2×2 rotation blocks at the group
/// angle, with a trailing odd coordinate left fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRotation {
    dim: usize,
    order: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl BlockRotation {
    pub fn new(dim: usize, order: usize) -> Self {
        let (cos, sin) = (0..order)
            .map(|g| {
                let a = 2.0 * std::f64::consts::PI * g as f64 / order as f64;
                exact_cos_sin(a, g, order)
            })
            .unzip();
        Self { dim, order, cos, sin }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn rotate(&self, v: &mut [f64], c: f64, s: f64) {
        for pair in v.chunks_exact_mut(2) {
            let (x, y) = (pair[0], pair[1]);
            pair[0] = c * x - s * y;
            pair[1] = s * x + c * y;
        }
    }

    /// `v ← ρ(g) v`.
    pub fn apply(&self, g: usize, v: &mut [f64]) {
        let g = g % self.order;
        self.rotate(v, self.cos[g], self.sin[g]);
    }

    /// `v ← ρ(g)⁻¹ v = ρ(g)ᵀ v`.
    pub fn apply_inverse(&self, g: usize, v: &mut [f64]) {
        let g = g % self.order;
        self.rotate(v, self.cos[g], -self.sin[g]);
    }

    pub(crate) fn apply_f32(&self, g: usize, v: &mut [f32]) {
        let g = g % self.order;
        rotate_f32(v, self.cos[g] as f32, self.sin[g] as f32);
    }

    pub(crate) fn apply_inverse_f32(&self, g: usize, v: &mut [f32]) {
        let g = g % self.order;
        rotate_f32(v, self.cos[g] as f32, -self.sin[g] as f32);
    }

    pub(crate) fn apply_transpose_f32(&self, g: usize, v: &mut [f32]) {
        self.apply_inverse_f32(g, v);
    }
}

fn rotate_f32(v: &mut [f32], c: f32, s: f32) {
    for pair in v.chunks_exact_mut(2) {
        let (x, y) = (pair[0], pair[1]);
        pair[0] = c * x - s * y;
        pair[1] = s * x + c * y;
    }
}

/// cos/sin with exact values at multiples of a quarter turn.
fn exact_cos_sin(a: f64, g: usize, order: usize) -> (f64, f64) {
    if (4 * g).is_multiple_of(order) {
        match (4 * g / order) % 4 {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        (a.cos(), a.sin())
    }
}

/// `μ₀ = ρ(pose)⁻¹ μ`.
pub fn canonicalize(mu: &[f64], pose: PoseDescriptor, rep: &BlockRotation) -> Result<Vec<f64>> {
    if mu.len() != rep.dim() {
        return Err(Error::DimensionMismatch { expected: rep.dim(), got: mu.len() });
    }
    if pose.order() != rep.order() {
        return Err(Error::Shape(format!(
            "pose of order {} against representation of order {}",
            pose.order(),
            rep.order()
        )));
    }
    let mut v = mu.to_vec();
    rep.apply_inverse(pose.index(), &mut v);
    Ok(v)
}

/// Pose estimate for each item of a group feature map.
pub fn estimate_pose(f: &GroupFeatureMap) -> Vec<PoseDescriptor> {
    f.poses()
}
