use std::collections::HashMap;

use ndarray::Array2;

use super::params::{ParamGroup, ParamId, ParamStore};

/// Linear warmup to the peak rate, then polynomial decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupPolyDecay {
    pub warmup: usize,
    pub total: usize,
    pub power: f64,
}

impl WarmupPolyDecay {
    /// Multiplier on the peak rate for the 1-based update `step`.
    pub fn factor(&self, step: usize) -> f64 {
        if self.warmup > 0 && step <= self.warmup {
            return step as f64 / self.warmup as f64;
        }
        if step >= self.total || self.total <= self.warmup {
            return 0.0;
        }
        let remaining = (self.total - step) as f64 / (self.total - self.warmup) as f64;
        remaining.powf(self.power)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: usize,
    first: HashMap<ParamId, Array2<f64>>,
    second: HashMap<ParamId, Array2<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    /// One update; `lr` gives the rate for each parameter group.
    pub fn step<F>(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Array2<f64>>, lr: F)
    where
        F: Fn(ParamGroup) -> f64,
    {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let mut ids: Vec<_> = grads.keys().copied().collect();
        ids.sort();
        for id in ids {
            let g = &grads[&id];
            let rate = lr(store.group(id));
            let m = self
                .first
                .entry(id)
                .or_insert_with(|| Array2::zeros(g.dim()));
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            let v = self
                .second
                .entry(id)
                .or_insert_with(|| Array2::zeros(g.dim()));
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let (m, v) = (&self.first[&id], &self.second[&id]);
            let wd = self.cfg.weight_decay;
            let eps = self.cfg.eps;
            let value = store.value_mut(id);
            ndarray::Zip::from(value).and(m).and(v).for_each(|w, &m, &v| {
                let update = (m / c1) / ((v / c2).sqrt() + eps) + wd * *w;
                *w -= rate * update;
            });
        }
    }
}
