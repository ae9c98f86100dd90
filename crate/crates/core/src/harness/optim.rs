//! Adam with decoupled weight decay, and the patience rule for early stopping.

use serde::{Deserialize, Serialize};

use crate::numerics::{ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled: parameters shrink by `lr * weight_decay * p` each step,
    /// outside the moment estimates.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
            weight_decay: wd,
        } = self.cfg;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        if self.moments.len() < params.len() {
            self.moments.resize(params.len(), None);
        }
        for (id, grad) in grads {
            let p = params.value_mut(*id).data_mut();
            let (m, v) = self.moments[id.index()].get_or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            for (((w, &g), m), v) in p.iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *w);
            }
        }
    }
}

/// Tracks validation losses; stops after `patience` consecutive epochs
/// without a strict improvement on the best value so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    /// 1-based epoch of `best`.
    pub best_epoch: usize,
    pub stale: usize,
    pub epochs_seen: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: None,
            best_epoch: 0,
            stale: 0,
            epochs_seen: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        self.epochs_seen += 1;
        if self.best.is_none_or(|b| val_loss < b) {
            self.best = Some(val_loss);
            self.best_epoch = self.epochs_seen;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// Replays a validation trace: `(epochs run before stopping, best epoch)`.
pub fn early_stopping_trace(val_losses: &[f64], patience: usize) -> (usize, usize) {
    let mut es = EarlyStopping::new(patience);
    for &v in val_losses {
        if es.observe(v) == StopDecision::Stop {
            break;
        }
    }
    (es.epochs_seen, es.best_epoch)
}
