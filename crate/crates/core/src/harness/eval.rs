use super::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::{masked_sse_per_item, Model, NormStats};

/// Mean masked sum-squared reconstruction error over a split, decoding the
/// posterior mean of every item.
pub fn eval_reconstruction(model: &mut Model, data: &Dataset, norm: &NormStats) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySplit("no records to evaluate".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(32) {
        let x = data.batch(chunk, norm);
        let heads = model.encode(&x)?;
        let z: Vec<Vec<f64>> = heads.into_iter().map(|h| h.mu).collect();
        let x_hat = model.decode(&z)?;
        total += masked_sse_per_item(&x, &x_hat)?.iter().sum::<f64>();
    }
    Ok(total / data.len() as f64)
}
