//! Classifiers on frozen latents (the probe) and the end-to-end CNN baseline
//! with the same head.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::layers::{Linear, Relu};
use crate::nets::{Adam, Encoder, HasParams, Model, ModelConfig, NormStats, Param, Tensor};
use crate::patchkit::RELEVANT_CLASSES;

pub const PROBE_HIDDEN: usize = 64;
pub const N_CLASSES: usize = RELEVANT_CLASSES.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 500, batch_size: 128, learning_rate: 1e-3, seed: 0 }
    }
}

/// Accuracy and confusion counts (`confusion[true][predicted]`, classes in
/// label order 2..=5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub n_test: usize,
    pub confusion: Vec<Vec<usize>>,
}

pub(crate) fn class_index(label: u8) -> Result<usize> {
    RELEVANT_CLASSES
        .iter()
        .position(|&c| c == label)
        .ok_or_else(|| Error::Domain(format!("label {label} is not a tissue class")))
}

/// Three linear layers with ReLU: `in → 64 → 64 → 4`.
#[derive(Debug, Clone)]
pub struct Mlp {
    l1: Linear,
    l2: Linear,
    l3: Linear,
    r1: Relu,
    r2: Relu,
}

impl Mlp {
    pub fn new(name: &str, input: usize, seed: u64) -> Self {
        Self {
            l1: Linear::new(&format!("{name}.fc1"), input, PROBE_HIDDEN, seed),
            l2: Linear::new(&format!("{name}.fc2"), PROBE_HIDDEN, PROBE_HIDDEN, seed),
            l3: Linear::new(&format!("{name}.fc3"), PROBE_HIDDEN, N_CLASSES, seed),
            r1: Relu::default(),
            r2: Relu::default(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.input_dim()
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let h = self.r1.forward(&self.l1.forward(x));
        let h = self.r2.forward(&self.l2.forward(&h));
        self.l3.forward(&h)
    }

    pub fn backward(&mut self, dlogits: &Tensor) -> Tensor {
        let d = self.l3.backward(dlogits);
        let d = self.l2.backward(&self.r2.backward(&d));
        self.l1.backward(&self.r1.backward(&d))
    }
}

impl HasParams for Mlp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.l1.visit_params(f);
        self.l2.visit_params(f);
        self.l3.visit_params(f);
    }
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &Tensor, targets: &[usize]) -> (f64, Tensor) {
    let k = N_CLASSES;
    let b = targets.len();
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = &mut grad.data_mut()[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let z: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
        loss += z.ln() - (row[t] - max) as f64;
        for (j, v) in row.iter_mut().enumerate() {
            let p = ((*v - max) as f64).exp() / z;
            *v = ((p - if j == t { 1.0 } else { 0.0 }) / b as f64) as f32;
        }
    }
    (loss / b as f64, grad)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn check_classes(targets: &[usize]) -> Result<()> {
    for (k, c) in RELEVANT_CLASSES.iter().enumerate() {
        if !targets.contains(&k) {
            return Err(Error::EmptySplit(format!("class {c} is absent from the training split")));
        }
    }
    Ok(())
}

fn confusion(truth: &[usize], pred: &[usize]) -> (f64, Vec<Vec<usize>>) {
    let mut m = vec![vec![0; N_CLASSES]; N_CLASSES];
    let mut hits = 0;
    for (&t, &p) in truth.iter().zip(pred) {
        m[t][p] += 1;
        hits += usize::from(t == p);
    }
    (if truth.is_empty() { 0.0 } else { hits as f64 / truth.len() as f64 }, m)
}

/// MLP classifier on standardized latent vectors.
#[derive(Debug, Clone)]
pub struct Probe {
    mlp: Mlp,
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeFile {
    input_dim: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    params: BTreeMap<String, Vec<f32>>,
}

impl Probe {
    fn features(&self, x: &[Vec<f64>]) -> Tensor {
        let d = self.mean.len();
        let data = x
            .iter()
            .flat_map(|v| v.iter().enumerate().map(|(j, &a)| ((a - self.mean[j]) / self.std[j]) as f32))
            .collect();
        Tensor::from_vec(&[x.len(), d], data).expect("probe features")
    }

    /// Trains on `(latent, label)` pairs; labels are tissue class ids.
    pub fn fit(x: &[Vec<f64>], labels: &[u8], cfg: &ProbeConfig) -> Result<Self> {
        let d = x.first().map(Vec::len).ok_or_else(|| Error::EmptySplit("no probe training data".into()))?;
        let targets: Vec<usize> = labels.iter().map(|&l| class_index(l)).collect::<Result<_>>()?;
        check_classes(&targets)?;
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|v| v[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> =
            (0..d).map(|j| (x.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-8)).collect();
        let mut probe = Self { mlp: Mlp::new("probe", d, cfg.seed), mean, std };
        let feats = probe.features(x);
        let mut adam = Adam::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..x.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let xb: Vec<&[f32]> = chunk.iter().map(|&i| &feats.data()[i * d..(i + 1) * d]).collect();
                let xb = Tensor::stack(&xb, &[d])?;
                let tb: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
                probe.mlp.zero_grad();
                let logits = probe.mlp.forward(&xb);
                let (_, g) = cross_entropy(&logits, &tb);
                probe.mlp.backward(&g);
                adam.step(&mut probe.mlp, cfg.learning_rate);
            }
        }
        Ok(probe)
    }

    pub fn predict(&mut self, x: &[Vec<f64>]) -> Vec<u8> {
        if x.is_empty() {
            return Vec::new();
        }
        let logits = self.mlp.forward(&self.features(x));
        logits.data().chunks(N_CLASSES).map(|r| RELEVANT_CLASSES[argmax(r)]).collect()
    }

    pub fn evaluate(&mut self, x: &[Vec<f64>], labels: &[u8]) -> Result<(f64, Vec<Vec<usize>>)> {
        let truth: Vec<usize> = labels.iter().map(|&l| class_index(l)).collect::<Result<_>>()?;
        let pred: Vec<usize> = self.predict(x).into_iter().map(|l| class_index(l).expect("probe class")).collect();
        Ok(confusion(&truth, &pred))
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let mut params = BTreeMap::new();
        self.mlp.visit_params(&mut |p| {
            params.insert(p.name.clone(), p.value.clone());
        });
        let file =
            ProbeFile { input_dim: self.mlp.input_dim(), mean: self.mean.clone(), std: self.std.clone(), params };
        let json = serde_json::to_vec(&file).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: ProbeFile = serde_json::from_slice(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let mut mlp = Mlp::new("probe", file.input_dim, 0);
        let mut missing = None;
        mlp.visit_params(&mut |p| match file.params.get(&p.name) {
            Some(v) if v.len() == p.value.len() => p.value.copy_from_slice(v),
            _ => missing = Some(p.name.clone()),
        });
        if let Some(name) = missing {
            return Err(Error::format(path, format!("probe parameter {name} missing or malformed")));
        }
        Ok(Self { mlp, mean: file.mean, std: file.std })
    }
}

/// Probe inputs: the canonical posterior mean of every item.
pub fn probe_features(model: &mut Model, data: &Dataset, norm: &NormStats) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(32) {
        out.extend(model.encode(&data.batch(chunk, norm))?.into_iter().map(|h| h.canonical));
    }
    Ok(out)
}

/// Fits a probe on the training latents of `model` and scores it on `test`.
pub fn linear_probe(
    model: &mut Model,
    train: &Dataset,
    test: &Dataset,
    norm: &NormStats,
    cfg: &ProbeConfig,
) -> Result<(ProbeResult, Probe)> {
    let xtr = probe_features(model, train, norm)?;
    let xte = probe_features(model, test, norm)?;
    let mut probe = Probe::fit(&xtr, &train.labels, cfg)?;
    let (train_accuracy, _) = probe.evaluate(&xtr, &train.labels)?;
    let (accuracy, confusion) = probe.evaluate(&xte, &test.labels)?;
    Ok((ProbeResult { accuracy, train_accuracy, n_test: test.len(), confusion }, probe))
}

/// Supervised classifier: the autoencoder's encoder followed by the probe
/// head, trained end to end on pixels.
#[derive(Debug, Clone)]
pub struct CnnBaseline {
    config: ModelConfig,
    encoder: Encoder,
    head: Mlp,
    rho: crate::equivariance::BlockRotation,
    poses: Vec<usize>,
}

impl HasParams for CnnBaseline {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encoder.visit_params(f);
        self.head.visit_params(f);
    }
}

impl CnnBaseline {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rho = crate::equivariance::BlockRotation::new(config.latent_dim, config.effective_order());
        Ok(Self {
            encoder: Encoder::new(&config, seed),
            head: Mlp::new("cnn.head", config.latent_dim, seed),
            rho,
            config,
            poses: Vec::new(),
        })
    }

    fn logits(&mut self, x: &Tensor) -> Result<Tensor> {
        let m = self.config.latent_dim;
        let out = self.encoder.forward(x)?;
        let mut feats = out.mu_raw;
        if self.config.equivariant {
            for (row, &p) in feats.chunks_mut(m).zip(&out.pose) {
                self.rho.apply_inverse_f32(p, row);
            }
        }
        self.poses = out.pose;
        Ok(self.head.forward(&Tensor::from_vec(&[x.batch(), m], feats)?))
    }

    pub fn predict(&mut self, data: &Dataset, norm: &NormStats) -> Result<Vec<u8>> {
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut out = Vec::with_capacity(data.len());
        for chunk in idx.chunks(32) {
            let logits = self.logits(&data.batch(chunk, norm))?;
            out.extend(logits.data().chunks(N_CLASSES).map(|r| RELEVANT_CLASSES[argmax(r)]));
        }
        Ok(out)
    }

    pub fn fit(&mut self, train: &Dataset, norm: &NormStats, cfg: &ProbeConfig) -> Result<()> {
        let targets: Vec<usize> = train.labels.iter().map(|&l| class_index(l)).collect::<Result<_>>()?;
        check_classes(&targets)?;
        let m = self.config.latent_dim;
        let mut adam = Adam::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                self.zero_grad();
                let x = train.batch(chunk, norm);
                let logits = self.logits(&x)?;
                let tb: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
                let (loss, g) = cross_entropy(&logits, &tb);
                if !loss.is_finite() {
                    return Err(Error::NonFinite("baseline cross-entropy".into()));
                }
                let mut dfeat = self.head.backward(&g).into_data();
                if self.config.equivariant {
                    for (row, &p) in dfeat.chunks_mut(m).zip(&self.poses) {
                        self.rho.apply_f32(p, row);
                    }
                }
                self.encoder.backward(&dfeat, &vec![0.0; chunk.len()]);
                adam.step(self, cfg.learning_rate);
            }
        }
        Ok(())
    }

    pub fn evaluate(&mut self, data: &Dataset, norm: &NormStats) -> Result<(f64, Vec<Vec<usize>>)> {
        let truth: Vec<usize> = data.labels.iter().map(|&l| class_index(l)).collect::<Result<_>>()?;
        let pred: Vec<usize> =
            self.predict(data, norm)?.into_iter().map(|l| class_index(l).expect("baseline class")).collect();
        Ok(confusion(&truth, &pred))
    }
}

/// Trains the baseline on `train` and reports accuracy on `test`.
pub fn cnn_baseline(
    config: &ModelConfig,
    train: &Dataset,
    test: &Dataset,
    norm: &NormStats,
    cfg: &ProbeConfig,
) -> Result<(ProbeResult, CnnBaseline)> {
    let mut net = CnnBaseline::new(config.clone(), cfg.seed)?;
    net.fit(train, norm, cfg)?;
    let (train_accuracy, _) = net.evaluate(train, norm)?;
    let (accuracy, confusion) = net.evaluate(test, norm)?;
    Ok((ProbeResult { accuracy, train_accuracy, n_test: test.len(), confusion }, net))
}
