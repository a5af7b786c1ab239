//! First-order optimizers: SGD, AdaGrad, Adam, AdamW, and Lion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adam,
    AdamW,
    Lion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        let beta2 = match kind {
            // Lion's conventional second coefficient differs from Adam's.
            OptimizerKind::Lion => 0.99,
            _ => default_beta2(),
        };
        OptimizerConfig {
            kind,
            learning_rate,
            beta1: default_beta1(),
            beta2,
            epsilon: default_epsilon(),
            weight_decay: 0.0,
        }
    }
}

/// Per-tensor accumulators plus the step counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step_count: u64,
    /// First moments (Adam/AdamW/Lion momentum); empty for SGD/AdaGrad.
    first_moments: Vec<Vec<f64>>,
    /// Second moments (Adam/AdamW) or squared-gradient accumulators
    /// (AdaGrad); empty for SGD/Lion.
    second_moments: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        OptimizerState {
            config,
            step_count: 0,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
        }
    }

    fn ensure_shapes(&mut self, tensors: &[&mut [f64]]) {
        let needs_first = matches!(
            self.config.kind,
            OptimizerKind::Adam | OptimizerKind::AdamW | OptimizerKind::Lion
        );
        let needs_second = matches!(
            self.config.kind,
            OptimizerKind::Adam | OptimizerKind::AdamW | OptimizerKind::Adagrad
        );
        if needs_first && self.first_moments.is_empty() {
            self.first_moments = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        }
        if needs_second && self.second_moments.is_empty() {
            self.second_moments = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len()
            || params
                .iter()
                .zip(grads)
                .any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::contract("parameter/gradient shape mismatch"));
        }
        if grads.iter().any(|g| !g.iter().all(|v| v.is_finite())) {
            return Err(Error::numeric("non-finite gradient"));
        }
        self.ensure_shapes(params);
        if !self.first_moments.is_empty() && self.first_moments.len() != params.len()
            || !self.second_moments.is_empty() && self.second_moments.len() != params.len()
        {
            return Err(Error::contract("optimizer state does not match model"));
        }
        self.step_count += 1;
        let c = self.config.clone();
        let lr = c.learning_rate;

        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, &gv) in p.iter_mut().zip(*g) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adagrad => {
                for ((p, g), acc) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.second_moments.iter_mut())
                {
                    for ((pv, &gv), a) in p.iter_mut().zip(*g).zip(acc.iter_mut()) {
                        *a += gv * gv;
                        *pv -= lr * gv / (a.sqrt() + c.epsilon);
                    }
                }
            }
            OptimizerKind::Adam | OptimizerKind::AdamW => {
                let t = self.step_count as i32;
                let bias1 = 1.0 - c.beta1.powi(t);
                let bias2 = 1.0 - c.beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first_moments.iter_mut())
                    .zip(self.second_moments.iter_mut())
                {
                    for (((pv, &gv), mv), vv) in
                        p.iter_mut().zip(*g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                        *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                        let m_hat = *mv / bias1;
                        let v_hat = *vv / bias2;
                        let mut update = lr * m_hat / (v_hat.sqrt() + c.epsilon);
                        if c.kind == OptimizerKind::AdamW {
                            update += lr * c.weight_decay * *pv;
                        }
                        *pv -= update;
                    }
                }
            }
            OptimizerKind::Lion => {
                for ((p, g), m) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first_moments.iter_mut())
                {
                    for ((pv, &gv), mv) in p.iter_mut().zip(*g).zip(m.iter_mut()) {
                        let interp = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                        *pv -= lr * (strict_sign(interp) + c.weight_decay * *pv);
                        *mv = c.beta2 * *mv + (1.0 - c.beta2) * gv;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Sign with sign(0) = 0, unlike `f64::signum`.
#[inline]
fn strict_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
