use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-cycle warm-up starts at `max_lr / ONE_CYCLE_DIV`.
pub const ONE_CYCLE_DIV: f64 = 25.0;
/// One-cycle ends at the initial rate divided by this.
pub const ONE_CYCLE_FINAL_DIV: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerConfig {
    Constant,
    Step {
        step_size: usize,
        gamma: f64,
    },
    Exponential {
        gamma: f64,
    },
    ReduceOnPlateau {
        factor: f64,
        patience: usize,
        threshold: f64,
        eps: f64,
    },
    Polynomial {
        power: f64,
        total_iters: usize,
    },
    CosineAnnealing {
        t_max: usize,
        eta_min: f64,
    },
    Cyclic {
        base_lr: f64,
        max_lr: f64,
        step_size_up: usize,
    },
    OneCycle {
        max_lr: f64,
        pct_start: f64,
        /// Defaults to `batch_size × 1000`; the effective value is further
        /// capped at the number of optimizer steps in the run.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        total_steps: Option<usize>,
    },
}

impl SchedulerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SchedulerConfig::Constant => "constant",
            SchedulerConfig::Step { .. } => "step",
            SchedulerConfig::Exponential { .. } => "exponential",
            SchedulerConfig::ReduceOnPlateau { .. } => "reduce_on_plateau",
            SchedulerConfig::Polynomial { .. } => "polynomial",
            SchedulerConfig::CosineAnnealing { .. } => "cosine_annealing",
            SchedulerConfig::Cyclic { .. } => "cyclic",
            SchedulerConfig::OneCycle { .. } => "one_cycle",
        }
    }

    /// Whether the rate changes after every optimizer step rather than
    /// every epoch.
    pub fn per_batch(&self) -> bool {
        matches!(self, SchedulerConfig::Cyclic { .. } | SchedulerConfig::OneCycle { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("scheduler {name} {v} must be positive")))
            }
        };
        match *self {
            SchedulerConfig::Constant => Ok(()),
            SchedulerConfig::Step { step_size, gamma } => {
                if step_size == 0 {
                    return Err(Error::config("step_size must be positive"));
                }
                positive("gamma", gamma)
            }
            SchedulerConfig::Exponential { gamma } => positive("gamma", gamma),
            SchedulerConfig::ReduceOnPlateau { factor, threshold, eps, .. } => {
                if !(factor > 0.0 && factor < 1.0) {
                    return Err(Error::config("plateau factor must lie in (0, 1)"));
                }
                if !(threshold >= 0.0 && eps >= 0.0) {
                    return Err(Error::config("plateau threshold and eps must be nonnegative"));
                }
                Ok(())
            }
            SchedulerConfig::Polynomial { power, total_iters } => {
                if total_iters == 0 {
                    return Err(Error::config("total_iters must be positive"));
                }
                positive("power", power)
            }
            SchedulerConfig::CosineAnnealing { t_max, eta_min } => {
                if t_max == 0 {
                    return Err(Error::config("t_max must be positive"));
                }
                if eta_min < 0.0 {
                    return Err(Error::config("eta_min must be nonnegative"));
                }
                Ok(())
            }
            SchedulerConfig::Cyclic { base_lr, max_lr, step_size_up } => {
                if step_size_up == 0 {
                    return Err(Error::config("step_size_up must be positive"));
                }
                positive("base_lr", base_lr)?;
                positive("max_lr", max_lr)
            }
            SchedulerConfig::OneCycle { max_lr, pct_start, total_steps } => {
                positive("max_lr", max_lr)?;
                if !(pct_start > 0.0 && pct_start < 1.0) {
                    return Err(Error::config("pct_start must lie in (0, 1)"));
                }
                if total_steps == Some(0) {
                    return Err(Error::config("total_steps must be positive"));
                }
                Ok(())
            }
        }
    }
}

fn cosine_anneal(start: f64, end: f64, pct: f64) -> f64 {
    end + (start - end) / 2.0 * (1.0 + (PI * pct).cos())
}

/// Learning-rate schedule state. Epoch-cadence kinds advance through
/// [`Scheduler::epoch_end`]; cyclic and one-cycle through
/// [`Scheduler::batch_end`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    config: SchedulerConfig,
    base_lr: f64,
    lr: f64,
    epochs: usize,
    steps: usize,
    total_steps: usize,
    best: Option<f64>,
    bad_epochs: usize,
}

impl Scheduler {
    /// `total_steps` is the one-cycle length (already resolved); other
    /// kinds ignore it.
    pub fn new(config: SchedulerConfig, base_lr: f64, total_steps: usize) -> Result<Self> {
        config.validate()?;
        let mut s = Self {
            config,
            base_lr,
            lr: base_lr,
            epochs: 0,
            steps: 0,
            total_steps: total_steps.max(1),
            best: None,
            bad_epochs: 0,
        };
        s.lr = s.closed_form();
        Ok(s)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    fn closed_form(&self) -> f64 {
        let e = self.epochs as f64;
        let t = self.steps as f64;
        match self.config {
            SchedulerConfig::Constant | SchedulerConfig::ReduceOnPlateau { .. } => self.lr,
            SchedulerConfig::Step { step_size, gamma } => self.base_lr * gamma.powi((self.epochs / step_size) as i32),
            SchedulerConfig::Exponential { gamma } => self.base_lr * gamma.powi(self.epochs as i32),
            SchedulerConfig::Polynomial { power, total_iters } => {
                let progress = self.epochs.min(total_iters) as f64 / total_iters as f64;
                self.base_lr * (1.0 - progress).powf(power)
            }
            SchedulerConfig::CosineAnnealing { t_max, eta_min } => {
                eta_min + (self.base_lr - eta_min) * (1.0 + (PI * e / t_max as f64).cos()) / 2.0
            }
            SchedulerConfig::Cyclic { base_lr, max_lr, step_size_up } => {
                let (lo, hi) = if base_lr <= max_lr { (base_lr, max_lr) } else { (max_lr, base_lr) };
                let up = step_size_up as f64;
                let cycle = (1.0 + t / (2.0 * up)).floor();
                let x = (t / up - 2.0 * cycle + 1.0).abs();
                lo + (hi - lo) * (1.0 - x).max(0.0)
            }
            SchedulerConfig::OneCycle { max_lr, pct_start, .. } => {
                let initial = max_lr / ONE_CYCLE_DIV;
                let min_lr = initial / ONE_CYCLE_FINAL_DIV;
                let total = self.total_steps as f64;
                let peak = pct_start * total;
                if t <= peak {
                    cosine_anneal(initial, max_lr, t / peak)
                } else {
                    let pct = ((t - peak) / (total - peak)).min(1.0);
                    cosine_anneal(max_lr, min_lr, pct)
                }
            }
        }
    }

    pub fn batch_end(&mut self) {
        self.steps += 1;
        if self.config.per_batch() {
            self.lr = self.closed_form();
        }
    }

    /// `val_loss` drives the plateau rule and is ignored by other kinds.
    pub fn epoch_end(&mut self, val_loss: f64) {
        self.epochs += 1;
        if let SchedulerConfig::ReduceOnPlateau {
            factor,
            patience,
            threshold,
            eps,
        } = self.config
        {
            let improved = match self.best {
                None => true,
                Some(best) => val_loss < best * (1.0 - threshold),
            };
            if improved {
                self.best = Some(val_loss);
                self.bad_epochs = 0;
            } else {
                self.bad_epochs += 1;
            }
            if self.bad_epochs > patience {
                let reduced = self.lr * factor;
                if self.lr - reduced > eps {
                    self.lr = reduced;
                }
                self.bad_epochs = 0;
            }
        } else if !self.config.per_batch() {
            self.lr = self.closed_form();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay() {
        let mut s = Scheduler::new(SchedulerConfig::Step { step_size: 1, gamma: 0.1 }, 1e-3, 1).unwrap();
        assert_eq!(s.lr(), 1e-3);
        s.epoch_end(0.0);
        assert!((s.lr() - 1e-4).abs() < 1e-18);
        let mut s = Scheduler::new(SchedulerConfig::Step { step_size: 3, gamma: 0.5 }, 1.0, 1).unwrap();
        let lrs: Vec<f64> = (0..7)
            .map(|_| {
                s.epoch_end(0.0);
                s.lr()
            })
            .collect();
        assert_eq!(lrs, [1.0, 1.0, 0.5, 0.5, 0.5, 0.25, 0.25]);
    }

    #[test]
    fn cosine_endpoint() {
        let mut s = Scheduler::new(SchedulerConfig::CosineAnnealing { t_max: 10, eta_min: 1e-4 }, 1e-2, 1).unwrap();
        for _ in 0..10 {
            s.epoch_end(0.0);
        }
        assert_eq!(s.lr(), 1e-4);
    }

    #[test]
    fn one_cycle_peak_and_ends() {
        let total = 1000;
        let cfg = SchedulerConfig::OneCycle {
            max_lr: 0.05,
            pct_start: 0.3,
            total_steps: None,
        };
        let mut s = Scheduler::new(cfg, 1e-3, total).unwrap();
        assert!((s.lr() - 0.05 / 25.0).abs() < 1e-15);
        for _ in 0..300 {
            s.batch_end();
        }
        assert!((s.lr() - 0.05).abs() < 1e-9);
        for _ in 300..total {
            s.batch_end();
        }
        assert!((s.lr() - 0.05 / 25.0 / 1e4).abs() < 1e-15);
    }

    #[test]
    fn plateau_reduces_after_patience() {
        let cfg = SchedulerConfig::ReduceOnPlateau {
            factor: 0.5,
            patience: 2,
            threshold: 1e-4,
            eps: 1e-8,
        };
        let mut s = Scheduler::new(cfg, 0.1, 1).unwrap();
        s.epoch_end(1.0);
        s.epoch_end(1.0);
        s.epoch_end(1.0);
        assert_eq!(s.lr(), 0.1);
        s.epoch_end(1.0);
        assert_eq!(s.lr(), 0.05);
        s.epoch_end(0.5);
        assert_eq!(s.lr(), 0.05);
    }

    #[test]
    fn monotone_and_bounded_schedules() {
        let mut exp = Scheduler::new(SchedulerConfig::Exponential { gamma: 0.9 }, 0.01, 1).unwrap();
        let mut poly = Scheduler::new(SchedulerConfig::Polynomial { power: 0.7, total_iters: 20 }, 0.01, 1).unwrap();
        let (mut pe, mut pp) = (exp.lr(), poly.lr());
        for _ in 0..40 {
            exp.epoch_end(0.0);
            poly.epoch_end(0.0);
            assert!(exp.lr() <= pe && poly.lr() <= pp);
            pe = exp.lr();
            pp = poly.lr();
        }
        assert_eq!(poly.lr(), 0.0);
        let mut cyc = Scheduler::new(
            SchedulerConfig::Cyclic {
                base_lr: 1e-4,
                max_lr: 1e-2,
                step_size_up: 7,
            },
            1e-3,
            1,
        )
        .unwrap();
        let mut hit_max = false;
        for _ in 0..100 {
            cyc.batch_end();
            assert!((1e-4..=1e-2).contains(&cyc.lr()));
            hit_max |= (cyc.lr() - 1e-2).abs() < 1e-15;
        }
        assert!(hit_max);
    }

    #[test]
    fn cadence() {
        let mut cyc = Scheduler::new(
            SchedulerConfig::Cyclic {
                base_lr: 1e-4,
                max_lr: 1e-2,
                step_size_up: 5,
            },
            1e-3,
            1,
        )
        .unwrap();
        let before = cyc.lr();
        cyc.epoch_end(0.0);
        assert_eq!(cyc.lr(), before);
        let mut step = Scheduler::new(SchedulerConfig::Step { step_size: 1, gamma: 0.5 }, 1.0, 1).unwrap();
        step.batch_end();
        assert_eq!(step.lr(), 1.0);
    }
}
