use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed denominator term of Adam.
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64 },
    Sgd { momentum: f64 },
    Rmsprop { alpha: f64, momentum: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Rmsprop { .. } => "rmsprop",
        }
    }

    /// Display name, e.g. `RMSprop`.
    pub fn label(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "Adam",
            OptimizerKind::Sgd { .. } => "SGD",
            OptimizerKind::Rmsprop { .. } => "RMSprop",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(flatten)]
    pub kind: OptimizerKind,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            weight_decay: 0.0,
            kind: OptimizerKind::Sgd { momentum },
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            weight_decay: 0.0,
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} {v} must lie in [0, 1)")))
            }
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be nonnegative"));
        }
        match self.kind {
            OptimizerKind::Adam { beta1, beta2 } => {
                unit("beta1", beta1)?;
                unit("beta2", beta2)
            }
            OptimizerKind::Sgd { momentum } => unit("momentum", momentum),
            OptimizerKind::Rmsprop { alpha, momentum, eps } => {
                unit("alpha", alpha)?;
                unit("momentum", momentum)?;
                if eps > 0.0 {
                    Ok(())
                } else {
                    Err(Error::config("rmsprop eps must be positive"))
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct SlotState {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// First-order optimizer over a fixed parameter list.
///
/// Weight decay is added to the gradient (`g + wd·w`) and the L1 penalty
/// contributes `l1·sign(w)`.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    l1_lambda: f64,
    params: Vec<Tensor>,
    slots: Vec<SlotState>,
    steps: u64,
    lr: f64,
}

impl Optimizer {
    pub fn new(params: Vec<Tensor>, config: OptimizerConfig, l1_lambda: f64) -> Result<Self> {
        config.validate()?;
        if !(l1_lambda >= 0.0) {
            return Err(Error::config("l1 lambda must be nonnegative"));
        }
        let slots = params
            .iter()
            .map(|p| SlotState {
                first: vec![0.0; p.len()],
                second: vec![0.0; p.len()],
            })
            .collect();
        Ok(Self {
            lr: config.learning_rate,
            config,
            l1_lambda,
            params,
            slots,
            steps: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// Applies one update from the stored gradients. Parameters without a
    /// gradient are treated as having a zero loss gradient.
    pub fn step(&mut self) {
        self.steps += 1;
        let t = self.steps as i32;
        let lr = self.lr;
        let wd = self.config.weight_decay;
        let l1 = self.l1_lambda;
        let kind = self.config.kind;
        for (p, slot) in self.params.iter().zip(&mut self.slots) {
            p.update_leaf(|w, grad| {
                for i in 0..w.len() {
                    let mut g = grad.map_or(0.0, |g| g[i]) + wd * w[i];
                    if l1 > 0.0 && w[i] != 0.0 {
                        g += l1 * w[i].signum();
                    }
                    match kind {
                        OptimizerKind::Sgd { momentum } => {
                            let d = if momentum > 0.0 {
                                let buf = &mut slot.first[i];
                                *buf = if t == 1 { g } else { momentum * *buf + g };
                                *buf
                            } else {
                                g
                            };
                            w[i] -= lr * d;
                        }
                        OptimizerKind::Adam { beta1, beta2 } => {
                            let m = &mut slot.first[i];
                            let v = &mut slot.second[i];
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            let m_hat = *m / (1.0 - beta1.powi(t));
                            let v_hat = *v / (1.0 - beta2.powi(t));
                            w[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                        }
                        OptimizerKind::Rmsprop { alpha, momentum, eps } => {
                            let sq = &mut slot.second[i];
                            *sq = alpha * *sq + (1.0 - alpha) * g * g;
                            let step = g / (*sq + eps).sqrt();
                            if momentum > 0.0 {
                                let buf = &mut slot.first[i];
                                *buf = momentum * *buf + step;
                                w[i] -= lr * *buf;
                            } else {
                                w[i] -= lr * step;
                            }
                        }
                    }
                }
            });
        }
    }
}
