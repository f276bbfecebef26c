//! Procedural stand-in corpus: four texture classes on an H&E-like palette
//! with injected stroma and background regions.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;

use super::{write_mask, write_rgb, MaskTile, RgbImage, BACKGROUND, HGD, LGD, NDBE, SQUAMOUS, STROMA};
use crate::error::{Error, Result};

/// Texture family per relevant class id, in class order.
pub const TEXTURES: [(u8, &str); 4] = [(SQUAMOUS, "stripes"), (NDBE, "blobs"), (LGD, "rings"), (HGD, "noise")];
const SLIDES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTile {
    /// `<source>__<name>`, used as the file stem.
    pub name: String,
    pub source_id: String,
    pub class: u8,
    pub image: RgbImage,
    pub mask: MaskTile,
}

enum Texture {
    Stripes { angle: f64, period: f64, phase: f64 },
    Blobs { centres: Vec<(f64, f64, f64)> },
    Rings { cx: f64, cy: f64, period: f64 },
    Noise { cell: usize, grid: Vec<f64>, stride: usize },
}

impl Texture {
    fn random<R: Rng + ?Sized>(class: u8, size: usize, rng: &mut R) -> Self {
        let s = size as f64;
        match class {
            SQUAMOUS => Texture::Stripes {
                angle: rng.random_range(0.0..PI),
                period: rng.random_range(7.0..11.0),
                phase: rng.random_range(0.0..2.0 * PI),
            },
            NDBE => Texture::Blobs {
                centres: (0..10)
                    .map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(4.0..7.0)))
                    .collect(),
            },
            LGD => Texture::Rings {
                cx: rng.random_range(0.25 * s..0.75 * s),
                cy: rng.random_range(0.25 * s..0.75 * s),
                period: rng.random_range(5.0..8.0),
            },
            _ => {
                let cell = 3;
                let stride = size / cell + 2;
                Texture::Noise { cell, grid: (0..stride * stride).map(|_| rng.random()).collect(), stride }
            }
        }
    }

    /// Stain intensity in `[0, 1]`.
    fn at(&self, x: f64, y: f64) -> f64 {
        match self {
            Texture::Stripes { angle, period, phase } => {
                0.5 + 0.5 * (2.0 * PI * (x * angle.cos() + y * angle.sin()) / period + phase).sin()
            }
            Texture::Blobs { centres } => {
                let v: f64 = centres
                    .iter()
                    .map(|&(cx, cy, r)| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp())
                    .sum();
                v.min(1.0)
            }
            Texture::Rings { cx, cy, period } => {
                let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                0.5 + 0.5 * (2.0 * PI * r / period).cos()
            }
            Texture::Noise { cell, grid, stride } => {
                let (gx, gy) = (x / *cell as f64, y / *cell as f64);
                let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
                let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
                let g = |i: usize, j: usize| grid[j.min(stride - 1) * stride + i.min(stride - 1)];
                let top = g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx;
                let bot = g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx;
                top * (1.0 - fy) + bot * fy
            }
        }
    }
}

const EOSIN: [f64; 3] = [232.0, 164.0, 196.0];
const HEMATOXYLIN: [f64; 3] = [104.0, 56.0, 142.0];
const STROMA_TINT: [f64; 3] = [240.0, 196.0, 214.0];
const GLASS: [f64; 3] = [244.0, 242.0, 246.0];

fn stain(t: f64, jitter: [f64; 3], noise: f64) -> [u8; 3] {
    let mut px = [0u8; 3];
    for c in 0..3 {
        let v = EOSIN[c] + (HEMATOXYLIN[c] - EOSIN[c]) * t + jitter[c] + noise;
        px[c] = v.round().clamp(0.0, 255.0) as u8;
    }
    px
}

fn flat(base: [f64; 3], noise: f64) -> [u8; 3] {
    base.map(|v| (v + noise).round().clamp(0.0, 255.0) as u8)
}

/// `n_per_class` tiles of each texture class, `size × size`, assigned
/// round-robin to five slide sources.
pub fn synth_corpus<R: Rng + ?Sized>(n_per_class: usize, size: usize, rng: &mut R) -> Vec<SynthTile> {
    let mut out = Vec::with_capacity(4 * n_per_class);
    let s = size as f64;
    let mut index = 0;
    for i in 0..n_per_class {
        for (class, texture_name) in TEXTURES {
            let source_id = format!("slide{:02}", index % SLIDES);
            index += 1;
            let tex = Texture::random(class, size, rng);
            let jitter = [rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)];
            // stroma band along one edge; background disc in a corner; an
            // optional small inclusion of another class
            let edge = rng.random_range(0..4u8);
            let band = rng.random_range(0.0..0.3) * s;
            let corner = (if rng.random() { 0.0 } else { s }, if rng.random() { 0.0 } else { s });
            let disc = rng.random_range(0.0..0.5) * s;
            let inclusion = if rng.random_bool(0.3) {
                let other = TEXTURES[rng.random_range(0..4)].0;
                let r = rng.random_range(0.1..0.19) * s;
                let c = (rng.random_range(r..s - r), rng.random_range(r..s - r));
                Some((other, Texture::random(other, size, rng), c, r))
            } else {
                None
            };
            let mut image = RgbImage::new(size, size);
            let mut mask = MaskTile::filled(size, size, class).expect("valid class");
            for y in 0..size {
                for x in 0..size {
                    let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                    let noise = rng.random_range(-6.0..6.0);
                    let in_band = match edge {
                        0 => fy < band,
                        1 => fy > s - band,
                        2 => fx < band,
                        _ => fx > s - band,
                    };
                    let in_disc = (fx - corner.0).powi(2) + (fy - corner.1).powi(2) < disc * disc;
                    let (px, label) = if in_disc {
                        (flat(GLASS, noise), BACKGROUND)
                    } else if in_band {
                        (flat(STROMA_TINT, noise + 8.0 * (fy * 0.9 + fx * 0.4).sin()), STROMA)
                    } else if let Some((other, t, _, _)) =
                        inclusion.as_ref().filter(|(_, _, c, r)| (fx - c.0).powi(2) + (fy - c.1).powi(2) < r * r)
                    {
                        (stain(t.at(fx, fy), jitter, noise), *other)
                    } else {
                        (stain(tex.at(fx, fy), jitter, noise), class)
                    };
                    image.set(x, y, px);
                    mask.set(x, y, label);
                }
            }
            out.push(SynthTile { name: format!("{source_id}__{texture_name}{i:04}"), source_id, class, image, mask });
        }
    }
    out
}

/// Writes `tiles/<name>.png` and `masks/<name>.png` under `dir`.
pub fn write_corpus(dir: &Path, tiles: &[SynthTile]) -> Result<()> {
    for sub in ["tiles", "masks"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for t in tiles {
        write_rgb(&dir.join("tiles").join(format!("{}.png", t.name)), &t.image)?;
        write_mask(&dir.join("masks").join(format!("{}.png", t.name)), &t.mask)?;
    }
    Ok(())
}
