//! Append-only metrics log shared between runs.

use std::fs::OpenOptions;
use std::io::{Seek, SeekFrom, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "model,latent_dim,split,metric,value,seed,wall_time";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub latent_dim: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    /// Unix seconds when the row was produced.
    pub wall_time: u64,
}

/// Current Unix time, or `SOURCE_DATE_EPOCH` when set so that logs are
/// reproducible.
pub fn wall_clock() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return v;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.model, self.latent_dim, self.split, self.metric, self.value, self.seed, self.wall_time
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 7 {
            return None;
        }
        Some(Self {
            model: f[0].to_string(),
            latent_dim: f[1].parse().ok()?,
            split: f[2].to_string(),
            metric: f[3].to_string(),
            value: f[4].parse().ok()?,
            seed: f[5].parse().ok()?,
            wall_time: f[6].parse().ok()?,
        })
    }
}

/// Appends rows under an exclusive file lock, writing the header first when
/// the file is new or empty.
pub fn append_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = OpenOptions::new().create(true).read(true).append(true).open(path).map_err(io)?;
    f.lock().map_err(io)?;
    let len = f.seek(SeekFrom::End(0)).map_err(io)?;
    let mut buf = String::new();
    if len == 0 {
        buf.push_str(METRICS_HEADER);
        buf.push('\n');
    }
    for r in rows {
        buf.push_str(&r.to_csv());
        buf.push('\n');
    }
    let res = f.write_all(buf.as_bytes()).and_then(|_| f.flush());
    f.unlock().map_err(io)?;
    res.map_err(io)
}

/// Parses a metrics log; returns the rows and the number of malformed lines.
pub fn read_metrics(text: &str) -> (Vec<MetricsRow>, usize) {
    let mut rows = Vec::new();
    let mut bad = 0;
    for line in text.lines() {
        if line.trim().is_empty() || line.trim_end() == METRICS_HEADER {
            continue;
        }
        match MetricsRow::parse(line) {
            Some(r) => rows.push(r),
            None => bad += 1,
        }
    }
    (rows, bad)
}
