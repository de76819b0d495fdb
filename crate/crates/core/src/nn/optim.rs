use serde::{Deserialize, Serialize};

use super::layers::Parameter;
use crate::error::{Error, Result};

/// Hyperparameters of [`Adam`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
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

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay,
        }
    }
}

struct Slot {
    name: String,
    shape: Vec<usize>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with decoupled weight decay.
///
/// Each step first shrinks every parameter by `lr * weight_decay * param`,
/// then applies the bias-corrected Adam update. Gradients are cleared after
/// the step.
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    t: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[&Parameter]) -> Result<Self> {
        if !(cfg.lr >= 0.0)
            || !(0.0..1.0).contains(&cfg.beta1)
            || !(0.0..1.0).contains(&cfg.beta2)
            || !(cfg.eps > 0.0)
        {
            return Err(Error::Config(format!("invalid Adam settings {cfg:?}")));
        }
        if !(cfg.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                cfg.weight_decay
            )));
        }
        let mut slots: Vec<Slot> = Vec::with_capacity(params.len());
        for p in params {
            if slots.iter().any(|s| s.name == p.name()) {
                return Err(Error::Config(format!(
                    "parameter {} registered twice",
                    p.name()
                )));
            }
            let n = p.value.len();
            slots.push(Slot {
                name: p.name().to_string(),
                shape: p.value.shape().to_vec(),
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
        }
        Ok(Self {
            cfg,
            lr: cfg.lr,
            t: 0,
            slots,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every registered parameter. All of them must carry a
    /// gradient; nothing is modified if any is missing.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<()> {
        for slot in &self.slots {
            let Some(p) = params.iter().find(|p| p.name() == slot.name) else {
                return Err(Error::Usage(format!(
                    "registered parameter {} was not passed to step",
                    slot.name
                )));
            };
            match &p.grad {
                None => {
                    return Err(Error::Usage(format!(
                        "missing gradient for parameter {}",
                        slot.name
                    )))
                }
                Some(g) if g.shape() != slot.shape.as_slice() => {
                    return Err(Error::Dimension {
                        op: "adam",
                        left: g.shape().to_vec(),
                        right: slot.shape.clone(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(p) = params
            .iter()
            .find(|p| !self.slots.iter().any(|s| s.name == p.name()))
        {
            return Err(Error::Usage(format!(
                "parameter {} is not registered with this optimizer",
                p.name()
            )));
        }

        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let lr = self.lr;
        for slot in &mut self.slots {
            let p = params
                .iter_mut()
                .find(|p| p.name() == slot.name)
                .expect("checked above");
            let g = p.grad.take().expect("checked above");
            let values = p.value.data_mut();
            for (i, (w, gi)) in values.iter_mut().zip(g.data()).enumerate() {
                if weight_decay != 0.0 {
                    *w -= lr * weight_decay * *w;
                }
                slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * gi;
                slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step-decay learning rate: `base_rate * decay_factor^(#milestones <= epoch)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base_rate: f64,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
}

fn default_decay() -> f64 {
    0.1
}

impl LrSchedule {
    pub fn new(base_rate: f64, milestones: Vec<usize>, decay_factor: f64) -> Result<Self> {
        let s = Self {
            base_rate,
            milestones,
            decay_factor,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(base_rate: f64) -> Self {
        Self {
            base_rate,
            milestones: Vec::new(),
            decay_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "milestones must be strictly increasing, got {:?}",
                self.milestones
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if !(self.base_rate >= 0.0) {
            return Err(Error::Config(format!(
                "base rate must be non-negative, got {}",
                self.base_rate
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_rate * self.decay_factor.powi(passed as i32)
    }
}
