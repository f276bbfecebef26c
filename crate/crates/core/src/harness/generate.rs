//! Generative sampling, interpolation strips and 3-D latent exports.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::data::{frame_to_image, tile_grid, Dataset};
use super::probe::Probe;
use crate::error::{Error, Result};
use crate::nets::{Family, LatentBounds, Model, NormStats, Tensor};
use crate::patchkit::{write_rgb, RgbImage};
use crate::riemann::{geodesic_path, GeodesicOptions};
use crate::sphere::{sample_uniform_sphere, slerp, UnitVector};

/// Prior draws: `N(0, I)` for Gaussian VAEs, uniform on the sphere for
/// spherical models, uniform in the training-latent box for Gaussian AEs.
pub fn prior_samples<R: Rng + ?Sized>(
    model: &Model,
    n: usize,
    bounds: Option<&LatentBounds>,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let cfg = model.config();
    let m = cfg.latent_dim;
    (0..n)
        .map(|_| match (cfg.family, cfg.variational) {
            (Family::Spherical, _) => Ok(sample_uniform_sphere(m, 1, rng).remove(0).into_inner()),
            (Family::Gaussian, true) => Ok((0..m).map(|_| rng.sample(StandardNormal)).collect()),
            (Family::Gaussian, false) => {
                let b = bounds.ok_or_else(|| Error::Config("checkpoint has no latent bounding box".into()))?;
                Ok(b.lower.iter().zip(&b.upper).map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>()).collect())
            }
        })
        .collect()
}

fn decode_images(model: &mut Model, z: &[Vec<f64>], norm: &NormStats) -> Result<Vec<RgbImage>> {
    let c = model.config().channels;
    let mut out = Vec::with_capacity(z.len());
    for chunk in z.chunks(32) {
        let x = model.decode(chunk)?;
        out.extend((0..x.batch()).map(|i| frame_to_image(x.item(i), c, norm)));
    }
    Ok(out)
}

/// `n` decoded prior samples.
pub fn sample_grid<R: Rng + ?Sized>(
    model: &mut Model,
    norm: &NormStats,
    n: usize,
    bounds: Option<&LatentBounds>,
    rng: &mut R,
) -> Result<Vec<RgbImage>> {
    let z = prior_samples(model, n, bounds, rng)?;
    decode_images(model, &z, norm)
}

/// Writes `grid.png` and `tile_NNN.png` into `dir`; an empty sample set
/// writes nothing.
pub fn write_sample_grid(dir: &Path, tiles: &[RgbImage]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cols = (tiles.len() as f64).sqrt().ceil() as usize;
    if let Some(grid) = tile_grid(tiles, cols) {
        write_rgb(&dir.join("grid.png"), &grid)?;
    }
    for (i, t) in tiles.iter().enumerate() {
        write_rgb(&dir.join(format!("tile_{i:03}.png")), t)?;
    }
    Ok(())
}

/// Mean over samples of the squared pixel distance to the nearest training
/// image, in `[0, 1]` units.
pub fn nearest_neighbor_distance(samples: &[RgbImage], train: &[RgbImage]) -> f64 {
    if samples.is_empty() || train.is_empty() {
        return f64::NAN;
    }
    let d = |a: &RgbImage, b: &RgbImage| -> f64 {
        a.data.iter().zip(&b.data).map(|(&x, &y)| ((x as f64 - y as f64) / 255.0).powi(2)).sum::<f64>()
            / a.data.len() as f64
    };
    samples.iter().map(|s| train.iter().map(|t| d(s, t)).fold(f64::INFINITY, f64::min)).sum::<f64>()
        / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationStrip {
    /// `steps + 2` frames: the first original, `steps` decoded path points
    /// (the first and last being the endpoint reconstructions), the second
    /// original.
    pub frames: Vec<RgbImage>,
    /// The `steps` latent path points.
    pub latents: Vec<Vec<f64>>,
    pub predicted: Option<Vec<u8>>,
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + (y - x) * t).collect()
}

/// Resamples a polyline at `n` equally spaced arc-length positions.
fn resample(knots: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let seg: Vec<f64> =
        knots.windows(2).map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()).collect();
    let total: f64 = seg.iter().sum();
    if total == 0.0 {
        return vec![knots[0].clone(); n];
    }
    (0..n)
        .map(|i| {
            let mut s = total * i as f64 / (n - 1) as f64;
            for (k, &l) in seg.iter().enumerate() {
                if s <= l || k == seg.len() - 1 {
                    return lerp(&knots[k], &knots[k + 1], if l > 0.0 { (s / l).min(1.0) } else { 0.0 });
                }
                s -= l;
            }
            knots[knots.len() - 1].clone()
        })
        .collect()
}

/// Latent path between two codes: straight for Gaussian models, great circle
/// for spherical ones, and the metric geodesic for Riemannian models.
pub fn latent_path(model: &Model, a: &[f64], b: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    if steps < 2 {
        return Err(Error::Domain("interpolation needs at least two steps".into()));
    }
    let ts = (0..steps).map(|i| i as f64 / (steps - 1) as f64);
    let cfg = model.config();
    match cfg.family {
        Family::Spherical => {
            let (ua, ub) = (UnitVector::normalize(a.to_vec())?, UnitVector::normalize(b.to_vec())?);
            ts.map(|t| Ok(slerp(&ua, &ub, t)?.into_inner())).collect()
        }
        Family::Gaussian => match model.metric().filter(|_| cfg.riemannian) {
            Some(field) if a != b => {
                let opts = GeodesicOptions { knots: steps.max(GeodesicOptions::default().knots), ..Default::default() };
                let curve = geodesic_path(field, a, b, &opts)?;
                Ok(resample(&curve.knots, steps))
            }
            _ => Ok(ts.map(|t| lerp(a, b, t)).collect()),
        },
    }
}

/// Encodes both images (items of a framed batch), walks the latent path and
/// decodes every point. When a probe is given each frame is re-encoded and
/// classified.
pub fn interpolate(
    model: &mut Model,
    norm: &NormStats,
    endpoints: &Tensor,
    originals: [&RgbImage; 2],
    steps: usize,
    probe: Option<&mut Probe>,
) -> Result<InterpolationStrip> {
    if endpoints.batch() != 2 {
        return Err(Error::Shape("interpolation needs exactly two endpoint images".into()));
    }
    let heads = model.encode(endpoints)?;
    let latents = latent_path(model, &heads[0].mu, &heads[1].mu, steps)?;
    let decoded = model.decode(&latents)?;
    let c = model.config().channels;
    let mut frames = vec![originals[0].clone()];
    frames.extend((0..decoded.batch()).map(|i| frame_to_image(decoded.item(i), c, norm)));
    frames.push(originals[1].clone());
    let predicted = match probe {
        Some(p) => {
            let mut items: Vec<&[f32]> = vec![endpoints.item(0)];
            items.extend((0..decoded.batch()).map(|i| decoded.item(i)));
            items.push(endpoints.item(1));
            let batch = Tensor::stack(&items, &endpoints.shape()[1..])?;
            let feats: Vec<Vec<f64>> = model.encode(&batch)?.into_iter().map(|h| h.canonical).collect();
            Some(p.predict(&feats))
        }
        None => None,
    };
    Ok(InterpolationStrip { frames, latents, predicted })
}

pub fn write_strip(dir: &Path, strip: &InterpolationStrip) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some(img) = tile_grid(&strip.frames, strip.frames.len()) {
        write_rgb(&dir.join("strip.png"), &img)?;
    }
    let path = dir.join("frames.csv");
    let mut text = String::from("frame,kind,predicted\n");
    let n = strip.frames.len();
    for i in 0..n {
        let kind = if i == 0 || i == n - 1 { "original" } else { "decoded" };
        let p = strip.predicted.as_ref().map_or(String::new(), |p| p[i].to_string());
        text.push_str(&format!("{i},{kind},{p}\n"));
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Posterior means of up to `limit` items as `x, y, z, label` rows.
pub fn export_latent_3d(
    model: &mut Model,
    data: &Dataset,
    norm: &NormStats,
    limit: usize,
) -> Result<Vec<([f64; 3], u8)>> {
    if model.config().latent_dim != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: model.config().latent_dim });
    }
    let idx: Vec<usize> = (0..data.len().min(limit)).collect();
    let mut rows = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(32) {
        for (h, &i) in model.encode(&data.batch(chunk, norm))?.iter().zip(chunk) {
            rows.push(([h.mu[0], h.mu[1], h.mu[2]], data.labels[i]));
        }
    }
    Ok(rows)
}

pub fn write_latent_csv(path: &Path, rows: &[([f64; 3], u8)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut go = || -> std::io::Result<()> {
        writeln!(f, "x,y,z,label")?;
        for (p, l) in rows {
            writeln!(f, "{},{},{},{}", p[0], p[1], p[2], l)?;
        }
        f.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

/// Mean pairwise inner product of the rows (ordered pairs, `i ≠ j`).
pub fn mean_pairwise_inner_product(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let d = points[0].len();
    let sum: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum()).collect();
    let total: f64 = sum.iter().map(|s| s * s).sum();
    let self_dots: f64 = points.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>()).sum();
    (total - self_dots) / (n * (n - 1)) as f64
}
