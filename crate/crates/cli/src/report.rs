//! Pivot tables over metrics logs.

use std::collections::{BTreeMap, BTreeSet};

use geolatent::harness::MetricsRow;

pub const MISSING: &str = "\u{2212}";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub metric: String,
    pub split: String,
    pub models: Vec<String>,
    pub dims: Vec<usize>,
    /// `cells[row][col]`, averaged over seeds.
    pub cells: Vec<Vec<Option<f64>>>,
}

/// One table per (metric, split). The latest row per (model, dim, seed)
/// wins; seeds are averaged, and non-finite values count as missing.
pub fn pivot(rows: &[MetricsRow]) -> Vec<Table> {
    type Cells = BTreeMap<(String, usize), BTreeMap<u64, f64>>;
    let mut latest: BTreeMap<(String, String), Cells> = BTreeMap::new();
    for r in rows {
        latest
            .entry((r.metric.clone(), r.split.clone()))
            .or_default()
            .entry((r.model.clone(), r.latent_dim))
            .or_default()
            .insert(r.seed, r.value);
    }
    latest
        .into_iter()
        .map(|((metric, split), cells)| {
            let models: Vec<String> =
                cells.keys().map(|(m, _)| m.clone()).collect::<BTreeSet<_>>().into_iter().collect();
            let dims: Vec<usize> = cells.keys().map(|&(_, d)| d).collect::<BTreeSet<_>>().into_iter().collect();
            let grid = dims
                .iter()
                .map(|&d| {
                    models
                        .iter()
                        .map(|m| {
                            let seeds = cells.get(&(m.clone(), d))?;
                            let mean = seeds.values().sum::<f64>() / seeds.len() as f64;
                            mean.is_finite().then_some(mean)
                        })
                        .collect()
                })
                .collect();
            Table { metric, split, models, dims, cells: grid }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or(MISSING.to_string(), |x| format!("{x:.4}"))
}

impl Table {
    pub fn markdown(&self) -> String {
        let mut s = format!("### {} ({})\n\n| m |", self.metric, self.split);
        for m in &self.models {
            s.push_str(&format!(" {m} |"));
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.models.len()));
        s.push('\n');
        for (d, row) in self.dims.iter().zip(&self.cells) {
            s.push_str(&format!("| {d} |"));
            for &v in row {
                s.push_str(&format!(" {} |", cell(v)));
            }
            s.push('\n');
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("latent_dim");
        for m in &self.models {
            s.push_str(&format!(",{m}"));
        }
        s.push('\n');
        for (d, row) in self.dims.iter().zip(&self.cells) {
            s.push_str(&d.to_string());
            for &v in row {
                s.push_str(&format!(",{}", cell(v)));
            }
            s.push('\n');
        }
        s
    }

    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.metric, self.split)
    }
}

/// Header-only table shown when no rows survive parsing.
pub fn empty_markdown() -> String {
    "| m |\n|---|\n".to_string()
}
