//! Binary checkpoint: magic, `u32` version, `u64` header length, a JSON
//! header, then little-endian `f32` tensor blobs in header order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, HasParams, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::riemann::MetricField;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GEOLATCK";

/// Per-channel standardization statistics from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }
}

/// Mean losses of one training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub reconstruction: f64,
    pub regularization: f64,
    pub spread: f64,
    pub total: f64,
}

/// Axis-aligned box around the training latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LatentBounds {
    pub fn from_points(points: &[Vec<f64>]) -> Option<Self> {
        let first = points.first()?;
        let mut lower = first.clone();
        let mut upper = first.clone();
        for p in points {
            for (i, &v) in p.iter().enumerate() {
                lower[i] = lower[i].min(v);
                upper[i] = upper[i].max(v);
            }
        }
        Some(Self { lower, upper })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    /// Number of completed epochs.
    pub epoch: u64,
    pub optimizer_step: u64,
    pub norm: NormStats,
    pub metric: Option<MetricField>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
    #[serde(default)]
    pub latent_bounds: Option<LatentBounds>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn capture(model: &mut Model, adam: Option<&Adam>, norm: NormStats, seed: u64, epoch: u64) -> Self {
        let mut tensors = BTreeMap::new();
        model.visit_params(&mut |p| {
            tensors.insert(p.name.clone(), (p.shape.clone(), p.value.clone()));
        });
        if let Some(a) = adam {
            for (name, v) in a.export_state() {
                tensors.insert(name, (vec![v.len()], v));
            }
        }
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            seed,
            epoch,
            optimizer_step: adam.map_or(0, |a| a.step_count()),
            norm,
            metric: model.metric().cloned(),
            history: Vec::new(),
            latent_bounds: None,
            tensors: Vec::new(),
        };
        Self { header, tensors }
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors.get(name).map(|(s, v)| (s.as_slice(), v.as_slice()))
    }

    /// Rebuilds the model and loads every parameter; all parameters must be
    /// present with matching shapes.
    pub fn restore_model(&self) -> Result<Model> {
        let mut model = Model::new(self.header.config.clone(), self.header.seed)?;
        let mut failure = None;
        model.visit_params(&mut |p| match self.tensors.get(&p.name) {
            Some((shape, v)) if *shape == p.shape && v.len() == p.value.len() => p.value.copy_from_slice(v),
            Some((shape, _)) => {
                failure.get_or_insert(format!("parameter {} has shape {shape:?}, expected {:?}", p.name, p.shape));
            }
            None => {
                failure.get_or_insert(format!("parameter {} missing", p.name));
            }
        });
        if let Some(msg) = failure {
            return Err(Error::Config(msg));
        }
        model.set_metric(self.header.metric.clone());
        Ok(model)
    }

    pub fn restore_optimizer(&self) -> Adam {
        Adam::import_state(
            self.header.optimizer_step,
            self.tensors.iter().filter(|(k, _)| k.starts_with("adam.")).map(|(k, (_, v))| (k.as_str(), v.as_slice())),
        )
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = self.header.clone();
        header.tensors =
            self.tensors.iter().map(|(k, (s, _))| TensorEntry { name: k.clone(), shape: s.clone() }).collect();
        let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, v) in self.tensors.values() {
            let mut buf = Vec::with_capacity(v.len() * 4);
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R, origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(origin, m);
        let io = |e| Error::io(origin, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(io)?;
        let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| bad(&format!("bad header: {e}")))?;
        let mut tensors = BTreeMap::new();
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw).map_err(io)?;
            let v = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.insert(t.name.clone(), (t.shape.clone(), v));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f), path)
    }
}
