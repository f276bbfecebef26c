//! Tile datasets in model layout: per-channel standardized and zero-padded
//! from 64×64 to the 68×68 frame.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::{NormStats, Tensor, BORDER, FRAME};
use crate::patchkit::{read_rgb, CorpusManifest, RgbImage, Split};

pub const TILE: usize = FRAME - 2 * BORDER;

/// Raw tiles in `[0, 1]`, channel-major `[C, 64, 64]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub tiles: Vec<Vec<f32>>,
    pub labels: Vec<u8>,
    pub ids: Vec<String>,
}

fn to_planes(img: &RgbImage, channels: usize) -> Vec<f32> {
    let n = img.width * img.height;
    match channels {
        1 => (0..n)
            .map(|i| {
                let p = &img.data[i * 3..i * 3 + 3];
                (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0
            })
            .collect(),
        _ => (0..3).flat_map(|c| (0..n).map(move |i| img.data[i * 3 + c] as f32 / 255.0)).collect(),
    }
}

impl Dataset {
    pub fn from_images(images: &[RgbImage], labels: Vec<u8>, ids: Vec<String>, channels: usize) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {channels}")));
        }
        let mut tiles = Vec::with_capacity(images.len());
        for img in images {
            if img.width != TILE || img.height != TILE {
                return Err(Error::Shape(format!("tiles must be {TILE}×{TILE}, got {}×{}", img.width, img.height)));
            }
            tiles.push(to_planes(img, channels));
        }
        Ok(Self { channels, tiles, labels, ids })
    }

    /// Loads one split of a manifest; paths are resolved against `root`.
    pub fn load(manifest: &CorpusManifest, root: &Path, split: Split, channels: usize) -> Result<Self> {
        let records: Vec<_> = manifest.split(split).collect();
        let mut images = Vec::with_capacity(records.len());
        for r in &records {
            let img = read_rgb(&root.join(&r.image))?;
            if img.width != TILE || img.height != TILE {
                return Err(Error::format(root.join(&r.image), format!("tile must be {TILE}×{TILE}")));
            }
            images.push(img);
        }
        let labels = records.iter().map(|r| r.label).collect();
        let ids = records.iter().map(|r| r.image.clone()).collect();
        Self::from_images(&images, labels, ids, channels)
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Per-channel mean and standard deviation over all pixels.
    pub fn norm_stats(&self) -> NormStats {
        let plane = TILE * TILE;
        let mut mean = vec![0.0f64; self.channels];
        let mut sq = vec![0.0f64; self.channels];
        for t in &self.tiles {
            for c in 0..self.channels {
                for &v in &t[c * plane..(c + 1) * plane] {
                    mean[c] += v as f64;
                    sq[c] += (v as f64).powi(2);
                }
            }
        }
        let n = (self.tiles.len() * plane).max(1) as f64;
        let std = mean.iter().zip(&sq).map(|(&s, &q)| ((q / n - (s / n).powi(2)).max(0.0).sqrt()).max(1e-6)).collect();
        NormStats { mean: mean.iter().map(|s| s / n).collect(), std }
    }

    /// Standardized, framed batch `[B, C, 68, 68]` of the given items.
    pub fn batch(&self, indices: &[usize], norm: &NormStats) -> Tensor {
        let plane = FRAME * FRAME;
        let mut data = vec![0.0f32; indices.len() * self.channels * plane];
        for (b, &i) in indices.iter().enumerate() {
            let tile = &self.tiles[i];
            for c in 0..self.channels {
                let (m, s) = (norm.mean[c] as f32, norm.std[c] as f32);
                let dst = &mut data[(b * self.channels + c) * plane..][..plane];
                for y in 0..TILE {
                    for x in 0..TILE {
                        dst[(y + BORDER) * FRAME + x + BORDER] = (tile[(c * TILE + y) * TILE + x] - m) / s;
                    }
                }
            }
        }
        Tensor::from_vec(&[indices.len(), self.channels, FRAME, FRAME], data).expect("batch shape")
    }

    pub fn all(&self, norm: &NormStats) -> Tensor {
        self.batch(&(0..self.len()).collect::<Vec<_>>(), norm)
    }
}

/// Undoes standardization of one framed item `[C, 68, 68]` and crops the
/// 64×64 tile.
pub fn frame_to_image(item: &[f32], channels: usize, norm: &NormStats) -> RgbImage {
    let mut img = RgbImage::new(TILE, TILE);
    for y in 0..TILE {
        for x in 0..TILE {
            let mut px = [0u8; 3];
            for (k, p) in px.iter_mut().enumerate() {
                let c = if channels == 1 { 0 } else { k };
                let v = item[(c * FRAME + y + BORDER) * FRAME + x + BORDER] as f64 * norm.std[c] + norm.mean[c];
                *p = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            }
            img.set(x, y, px);
        }
    }
    img
}

/// Lays tiles out row-major on a white canvas with a 2-pixel gutter.
pub fn tile_grid(tiles: &[RgbImage], cols: usize) -> Option<RgbImage> {
    let first = tiles.first()?;
    let (w, h) = (first.width, first.height);
    let cols = cols.clamp(1, tiles.len());
    let rows = tiles.len().div_ceil(cols);
    let gap = 2;
    let mut out = RgbImage::new(cols * (w + gap) + gap, rows * (h + gap) + gap);
    out.data.fill(255);
    for (i, t) in tiles.iter().enumerate() {
        let (ox, oy) = (gap + (i % cols) * (w + gap), gap + (i / cols) * (h + gap));
        for y in 0..h {
            for x in 0..w {
                out.set(ox + x, oy + y, t.pixel(x, y));
            }
        }
    }
    Some(out)
}
