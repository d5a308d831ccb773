use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Learning rate schedule: constant `l` until `start · total`, then linear
/// down to `l · F` at `total`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub init_lr: f64,
    pub decay_start_fraction: f64,
    pub decay_factor: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        let l = self.init_lr;
        let end = l * self.decay_factor;
        let total = self.total_steps as f64;
        let start = self.decay_start_fraction * total;
        let s = step as f64;
        if s <= start {
            l
        } else if s >= total {
            end
        } else {
            l + (end - l) * (s - start) / (total - start)
        }
    }
}

pub fn lr_at(step: usize, schedule: &LrSchedule) -> f64 {
    schedule.lr_at(step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub hyper: AdamHyper,
    t: u64,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, hyper: AdamHyper) -> Self {
        Self {
            hyper,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. A non-finite gradient leaves `params` untouched
    /// and reports divergence.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<()> {
        params.check_layout(grads)?;
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient for `{name}`")));
        }
        self.t += 1;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?.data();
            let m = self.m.get_mut(name)?.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let v = self.v.get_mut(name)?.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            let m = self.m.get(name)?.data();
            let v = self.v.get(name)?.data();
            for ((w, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
