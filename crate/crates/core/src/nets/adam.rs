use std::collections::BTreeMap;

use super::HasParams;

/// Cosine decay from `base` to `floor` over `total` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base: f64,
    pub floor: f64,
    pub total: u64,
}

impl CosineSchedule {
    pub fn new(base: f64, total: u64) -> Self {
        Self { base, floor: 0.0, total }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if self.total == 0 {
            return self.base;
        }
        let t = (step.min(self.total)) as f64 / self.total as f64;
        self.floor + 0.5 * (self.base - self.floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Adam with moment state keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    state: BTreeMap<String, Moments>,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, state: BTreeMap::new() }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` using the gradients
    /// currently stored in `model`.
    pub fn step<M: HasParams + ?Sized>(&mut self, model: &mut M, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let eps = self.eps;
        let state = &mut self.state;
        model.visit_params(&mut |p| {
            let s = state.entry(p.name.clone()).or_default();
            if s.m.len() != p.value.len() {
                s.m = vec![0.0; p.value.len()];
                s.v = vec![0.0; p.value.len()];
            }
            for i in 0..p.value.len() {
                let g = p.grad[i] as f64;
                let m = b1 * s.m[i] as f64 + (1.0 - b1) * g;
                let v = b2 * s.v[i] as f64 + (1.0 - b2) * g * g;
                s.m[i] = m as f32;
                s.v[i] = v as f32;
                let upd = lr * (m / c1) / ((v / c2).sqrt() + eps);
                p.value[i] -= upd as f32;
            }
        });
    }

    /// `(name, values)` pairs of first and second moments, for checkpoints.
    pub fn export_state(&self) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::with_capacity(self.state.len() * 2);
        for (k, s) in &self.state {
            out.push((format!("adam.m.{k}"), s.m.clone()));
            out.push((format!("adam.v.{k}"), s.v.clone()));
        }
        out
    }

    pub fn import_state<'a>(step: u64, entries: impl IntoIterator<Item = (&'a str, &'a [f32])>) -> Self {
        let mut adam = Self { step, ..Self::default() };
        for (name, values) in entries {
            if let Some(k) = name.strip_prefix("adam.m.") {
                adam.state.entry(k.to_string()).or_default().m = values.to_vec();
            } else if let Some(k) = name.strip_prefix("adam.v.") {
                adam.state.entry(k.to_string()).or_default().v = values.to_vec();
            }
        }
        adam
    }
}
