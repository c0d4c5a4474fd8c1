//! First-order optimizers: SGD, uncentered RMSProp and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{GradientBundle, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Rmsprop,
    Adam,
}

fn default_decay() -> f64 {
    0.999
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_decay")]
    pub rmsprop_decay: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerConfig {
            kind,
            learning_rate,
            rmsprop_decay: default_decay(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn rmsprop(learning_rate: f64, decay: f64) -> Self {
        OptimizerConfig {
            rmsprop_decay: decay,
            ..Self::new(OptimizerKind::Rmsprop, learning_rate)
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("rmsprop_decay", self.rmsprop_decay),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Parameter(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Parameter(format!("eps must be >= 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Optimizer with its per-parameter accumulators.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step_count: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            step_count: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_learning_rate(&mut self, lr: f64) -> Result<()> {
        let mut c = self.config.clone();
        c.learning_rate = lr;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    /// Applies one update `p ← p − step(g)` and clamps elephant parameters.
    pub fn step(&mut self, net: &mut Network, g: &GradientBundle) -> Result<()> {
        if let Some((layer, tensor)) = g.first_non_finite() {
            return Err(Error::NonFinite { layer, tensor });
        }
        let grads: Vec<&[f64]> = g.tensors().map(|(_, _, t)| t).collect();
        let mut params = net.tensors_mut();
        if params.len() != grads.len()
            || params.iter().zip(&grads).any(|((_, _, p), g)| p.len() != g.len())
        {
            let want: usize = params.iter().map(|(_, _, p)| p.len()).sum();
            let got: usize = grads.iter().map(|t| t.len()).sum();
            return Err(Error::shape("optimizer gradient", want, got));
        }
        let stateful = self.config.kind != OptimizerKind::Sgd;
        if stateful && self.second.is_empty() {
            self.second = grads.iter().map(|t| vec![0.0; t.len()]).collect();
            if self.config.kind == OptimizerKind::Adam {
                self.first = self.second.clone();
            }
        } else if stateful && self.second.iter().zip(&grads).any(|(s, g)| s.len() != g.len()) {
            return Err(Error::Usage(
                "optimizer accumulators belong to a different architecture".into(),
            ));
        }
        self.step_count += 1;
        let c = &self.config;
        let lr = c.learning_rate;
        match c.kind {
            OptimizerKind::Sgd => {
                for ((_, _, p), g) in params.iter_mut().zip(&grads) {
                    for (pi, gi) in p.iter_mut().zip(*g) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Rmsprop => {
                let rho = c.rmsprop_decay;
                for (((_, _, p), g), v) in params.iter_mut().zip(&grads).zip(&mut self.second) {
                    for ((pi, gi), vi) in p.iter_mut().zip(*g).zip(v.iter_mut()) {
                        *vi = rho * *vi + (1.0 - rho) * gi * gi;
                        *pi -= lr * gi / (vi.sqrt() + c.eps);
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (c.adam_beta1, c.adam_beta2);
                let t = self.step_count as i32;
                let bc1 = 1.0 - b1.powi(t);
                let bc2 = 1.0 - b2.powi(t);
                for ((((_, _, p), g), m), v) in params
                    .iter_mut()
                    .zip(&grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pi, gi), mi), vi) in
                        p.iter_mut().zip(*g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (1.0 - b1) * gi;
                        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                        let mh = *mi / bc1;
                        let vh = *vi / bc2;
                        *pi -= lr * mh / (vh.sqrt() + c.eps);
                    }
                }
            }
        }
        drop(params);
        net.clamp_elephant();
        Ok(())
    }
}
