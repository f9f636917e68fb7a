use std::collections::HashMap;

use super::{Binding, ParamSet, Tape};
use crate::{Error, Result};

/// Warmup-then-decay learning rate:
/// `factor * model_dim^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
#[derive(Debug, Clone, Copy)]
pub struct NoamSchedule {
    pub factor: f64,
    pub warmup: usize,
    pub model_dim: usize,
}

impl NoamSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.factor * (self.model_dim as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
    }
}

/// Per-step summary returned by [`AdamNoam::step`].
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub step: usize,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Adam with the Noam warmup schedule and optional global-norm gradient
/// clipping. Moment buffers are kept per parameter name, so parameters
/// absent from a given step's graph simply keep their state.
pub struct AdamNoam {
    pub schedule: NoamSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: usize,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamNoam {
    pub fn new(schedule: NoamSchedule, clip_norm: Option<f64>) -> Self {
        Self {
            schedule,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Update every trainable parameter bound on `tape` from its
    /// accumulated gradient. Gradients on the tape are left untouched;
    /// the caller decides when to zero or drop them.
    pub fn step(&mut self, params: &mut ParamSet, tape: &Tape, bound: &Binding) -> Result<StepStats> {
        let mut updates: Vec<(&str, &[f64])> = Vec::new();
        let mut norm_sq = 0.0;
        let mut any = false;
        for (name, var) in bound.iter() {
            if !params.is_trainable(name) {
                continue;
            }
            let grad = tape.grad(var);
            if !grad.is_empty() {
                any = true;
                norm_sq += grad.iter().map(|g| g * g).sum::<f64>();
            }
            updates.push((name, grad));
        }
        if !any {
            return Err(Error::invalid(
                "adam_noam_step",
                "no gradients present; run backward before stepping",
            ));
        }
        let grad_norm = norm_sq.sqrt();
        let scale = match self.clip_norm {
            Some(clip) if grad_norm > clip => clip / grad_norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step;
        let lr = self.schedule.lr(t);
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for (name, grad) in updates {
            let tensor = params
                .get_mut(name)
                .ok_or_else(|| Error::invalid("adam_noam_step", format!("unknown parameter '{}'", name)))?;
            let len = tensor.len();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; len], vec![0.0; len]));
            if m.len() != len {
                return Err(Error::shape(
                    "adam_noam_step",
                    format!("moment buffer for '{}' has stale size", name),
                ));
            }
            for i in 0..len {
                let g = grad.get(i).copied().unwrap_or(0.0) * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(StepStats { step: t, lr, grad_norm })
    }
}
