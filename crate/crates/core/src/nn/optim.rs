use crate::error::{Error, Result};
use crate::nn::dense::{DenseNet, Gradients};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Linear warm-up followed by exponential decay with the given half-life.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: u64,
    /// Zero disables decay.
    pub half_life: u64,
}

impl LrSchedule {
    pub fn rate(&self, step: u64) -> f64 {
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        };
        let decay = if self.half_life == 0 {
            1.0
        } else {
            0.5f64.powf(step.saturating_sub(self.warmup_steps) as f64 / self.half_life as f64)
        };
        self.base * warm * decay
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    schedule: LrSchedule,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    updates: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, schedule: LrSchedule) -> Self {
        Self {
            kind,
            schedule,
            first: Vec::new(),
            second: Vec::new(),
            updates: 0,
        }
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    /// Applies one update to `net` with the learning rate for `step`.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients, step: u64) -> Result<()> {
        let lr = self.schedule.rate(step);
        let grad_slices: Vec<&[f64]> = grads.slices().collect();
        if self.kind == OptimizerKind::Adam && self.first.is_empty() {
            self.first = grad_slices.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        self.updates += 1;
        let t = self.updates as f64;
        let mut n = 0;
        for (i, params) in net.params_mut().enumerate() {
            let g = grad_slices
                .get(i)
                .filter(|g| g.len() == params.len())
                .ok_or_else(|| Error::invalid("gradient layout does not match network"))?;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, &gv) in params.iter_mut().zip(g.iter()) {
                        *p -= lr * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    let c1 = 1.0 - ADAM_BETA1.powf(t);
                    let c2 = 1.0 - ADAM_BETA2.powf(t);
                    for (((p, &gv), mi), vi) in params
                        .iter_mut()
                        .zip(g.iter())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gv;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gv * gv;
                        *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
            n += 1;
        }
        if n != grad_slices.len() {
            return Err(Error::invalid("gradient layout does not match network"));
        }
        Ok(())
    }
}
