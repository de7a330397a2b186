use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// `lr · min(1, √(warmup / step))`.
    InverseSqrt { warmup: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, schedule: LrSchedule::Constant }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && !matches!(self.schedule, LrSchedule::InverseSqrt { warmup: 0 });
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Bias-corrected Adam over every tensor in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let zeros = || store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect::<Vec<_>>();
        Ok(Adam { cfg, step: 0, m: zeros(), v: zeros() })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        match self.cfg.schedule {
            LrSchedule::Constant => self.cfg.lr,
            LrSchedule::InverseSqrt { warmup } => self.cfg.lr * (warmup as f64 / self.step.max(warmup) as f64).sqrt(),
        }
    }

    /// Applies one update from the accumulated gradients. A non-finite
    /// gradient aborts before any parameter is touched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Contract(format!("optimizer tracks {} tensors, store has {}", self.m.len(), store.len())));
        }
        for id in store.ids() {
            if let Some(i) = store.get(id).grad().and_then(|g| g.iter().position(|v| !v.is_finite())) {
                return Err(Error::Divergence(format!("gradient of {}[{i}] is not finite", store.name(id))));
            }
        }
        self.step += 1;
        let lr = self.current_lr();
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, id) in store.ids().enumerate() {
            let t = store.get_mut(id);
            let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                *p -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
