//! Training driver: Adam with cosine annealing, seeded per-epoch shuffles and
//! resumable checkpoints.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::{Adam, Checkpoint, CosineSchedule, EpochRecord, Family, LatentBounds, Model, ModelConfig, NormStats};
use crate::riemann::{MetricField, DEFAULT_CENTROID_CAP, DEFAULT_REGULARIZATION, DEFAULT_TEMPERATURE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 500, batch_size: 128, learning_rate: 5e-4, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Generator for epoch `epoch` of a run; independent of how many epochs ran
/// before, so resumed runs see the same shuffles and noise.
pub(crate) fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch + 1);
    rng
}

pub fn encode_means(model: &mut Model, data: &Dataset, norm: &NormStats) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut means = Vec::with_capacity(data.len());
    let mut scales = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(32) {
        for h in model.encode(&data.batch(chunk, norm))? {
            means.push(h.mu);
            scales.push(h.scale);
        }
    }
    Ok((means, scales))
}

fn refresh_metric(model: &mut Model, data: &Dataset, norm: &NormStats, seed: u64, epoch: u64) -> Result<()> {
    let (means, sigmas) = encode_means(model, data, norm)?;
    let field = MetricField::from_latents(
        &means,
        &sigmas,
        DEFAULT_TEMPERATURE,
        DEFAULT_REGULARIZATION,
        DEFAULT_CENTROID_CAP,
        &mut epoch_rng(seed ^ 0x6d65_7472_6963, epoch),
    )?;
    model.set_metric(Some(field));
    Ok(())
}

/// Trains from scratch or continues `resume` until `train.epochs` epochs are
/// complete. `on_epoch` sees every finished epoch.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &Dataset,
    norm: &NormStats,
    resume: Option<&Checkpoint>,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    train_until(model_cfg, train_cfg, data, norm, resume, train_cfg.epochs, on_epoch)
}

/// Like [`train`] but stops after epoch `stop` of the `train.epochs` run; the
/// learning-rate schedule still spans the full run, so resuming the result
/// matches an uninterrupted run.
pub fn train_until(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &Dataset,
    norm: &NormStats,
    resume: Option<&Checkpoint>,
    stop: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySplit("training split has no records".into()));
    }
    if data.channels != model_cfg.channels {
        return Err(Error::Config(format!(
            "model expects {} channels, dataset has {}",
            model_cfg.channels, data.channels
        )));
    }
    let seed = train_cfg.seed;
    let (mut model, mut adam, mut history) = match resume {
        Some(ck) => {
            if &ck.header.config != model_cfg || ck.header.seed != seed {
                return Err(Error::Config("checkpoint was trained with a different config or seed".into()));
            }
            (ck.restore_model()?, ck.restore_optimizer(), ck.header.history.clone())
        }
        None => (Model::new(model_cfg.clone(), seed)?, Adam::new(), Vec::new()),
    };
    let start = history.len() as u64;
    let per_epoch = data.len().div_ceil(train_cfg.batch_size) as u64;
    let schedule = CosineSchedule::new(train_cfg.learning_rate, train_cfg.epochs * per_epoch);
    let wants_metric = model_cfg.riemannian && model_cfg.family == Family::Gaussian;

    for epoch in start..stop.min(train_cfg.epochs) {
        let mut rng = epoch_rng(seed, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for (bi, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let x = data.batch(chunk, norm);
            let out = model.train_step(&x, &mut rng).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, batch {bi}: {msg}")),
                other => other,
            })?;
            let w = chunk.len() as f64;
            let l = out.loss;
            for (s, v) in sums.iter_mut().zip([l.reconstruction, l.regularization, l.spread, l.total]) {
                *s += w * v;
            }
            adam.step(&mut model, schedule.lr(adam.step_count()));
        }
        let n = data.len() as f64;
        let rec = EpochRecord {
            epoch: epoch + 1,
            reconstruction: sums[0] / n,
            regularization: sums[1] / n,
            spread: sums[2] / n,
            total: sums[3] / n,
        };
        if wants_metric {
            refresh_metric(&mut model, data, norm, seed, epoch)?;
        }
        history.push(rec);
        on_epoch(&rec);
    }

    let (means, _) = encode_means(&mut model, data, norm)?;
    let mut ck = Checkpoint::capture(&mut model, Some(&adam), norm.clone(), seed, history.len() as u64);
    ck.header.history = history;
    ck.header.latent_bounds = LatentBounds::from_points(&means);
    Ok(ck)
}
