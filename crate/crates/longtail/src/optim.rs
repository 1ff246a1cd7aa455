//! Adam and AdamW with decoupled weight decay, the reduce-on-plateau
//! learning-rate scheduler, early stopping, and best-checkpoint selection.
//!
//! The scheduler and the early stopper are pure state machines over a
//! monitored metric stream: replaying the same stream reproduces the same
//! state trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Adam,
    #[serde(rename = "adamw")]
    AdamW,
}

/// Optimizer hyperparameters. Defaults follow the training recipe: AdamW
/// with weight decay 1e-2 and initial learning rate 1e-4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self::adamw(1e-4, 1e-2)
    }
}

impl OptimConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimKind::Adam,
            lr,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimKind::AdamW,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::invalid(format!("lr {} must be > 0", self.lr)));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::invalid("weight decay must be >= 0"));
        }
        if self.kind == OptimKind::Adam && self.weight_decay != 0.0 {
            return Err(Error::invalid(
                "plain adam has no decoupled decay path; use adamw or set weight_decay to 0",
            ));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::invalid(format!("{name} {beta} outside [0, 1)")));
            }
        }
        if !self.eps.is_finite() || self.eps <= 0.0 {
            return Err(Error::invalid("eps must be > 0"));
        }
        Ok(())
    }
}

/// Adam/AdamW state over a flat parameter vector: first and second moment
/// estimates plus the step count for bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    cfg: OptimConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, num_params: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update step at learning rate `lr`:
    /// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, bias-corrected
    /// `m_hat`, `v_hat`, then `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
    /// AdamW applies the decoupled decay `theta <- theta * (1 - lr * wd)`
    /// first, independent of the gradient path.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.m.len()),
                got: format!("{} params / {} grads", params.len(), grads.len()),
            });
        }
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let correction1 = 1.0 - b1.powi(self.t as i32);
        let correction2 = 1.0 - b2.powi(self.t as i32);
        let decay = if self.cfg.kind == OptimKind::AdamW {
            1.0 - lr * self.cfg.weight_decay
        } else {
            1.0
        };
        for i in 0..params.len() {
            if decay != 1.0 {
                params[i] *= decay;
            }
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / correction1;
            let v_hat = self.v[i] / correction2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Max,
    Min,
}

/// Which validation metric drives the scheduler, early stopping, and
/// checkpoint selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    ValMacroRecall,
    ValAccuracy,
    ValLoss,
}

/// Reduce-on-plateau configuration. An epoch improves when the metric moves
/// past the incumbent best by more than `threshold` in the configured
/// direction; after `patience` ignored stagnant epochs the next stagnant one
/// multiplies the learning rate by `factor`, floored at `min_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub mode: Mode,
    pub metric: MetricName,
    pub min_lr: f64,
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.1,
            patience: 5,
            mode: Mode::Max,
            metric: MetricName::ValMacroRecall,
            min_lr: 1e-7,
            threshold: 1e-4,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.factor.is_finite() || self.factor <= 0.0 || self.factor >= 1.0 {
            return Err(Error::invalid(format!(
                "plateau factor {} outside (0, 1)",
                self.factor
            )));
        }
        if self.patience < 1 {
            return Err(Error::invalid("plateau patience must be >= 1"));
        }
        if !self.min_lr.is_finite() || self.min_lr < 0.0 {
            return Err(Error::invalid("min_lr must be >= 0"));
        }
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(Error::invalid("threshold must be >= 0"));
        }
        Ok(())
    }
}

fn improved(mode: Mode, threshold: f64, best: Option<f64>, metric: f64) -> bool {
    match best {
        None => true,
        Some(best) => match mode {
            Mode::Max => metric > best + threshold,
            Mode::Min => metric < best - threshold,
        },
    }
}

/// Reduce-on-plateau state machine. The learning rate never increases and is
/// bounded below by `min_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    cfg: PlateauConfig,
    lr: f64,
    best: Option<f64>,
    stagnant: usize,
}

impl PlateauScheduler {
    pub fn new(cfg: PlateauConfig, initial_lr: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            lr: initial_lr,
            best: None,
            stagnant: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Observe one epoch's metric and return the learning rate to use next.
    ///
    /// Improvement resets the stagnation counter. The first `patience`
    /// stagnant epochs are ignored; the one after that triggers the drop and
    /// resets the counter, so with patience 2 the drop lands on the third
    /// consecutive stagnant epoch.
    pub fn observe(&mut self, metric: f64) -> Result<f64> {
        if !metric.is_finite() {
            return Err(Error::NonFiniteMetric);
        }
        if improved(self.cfg.mode, self.cfg.threshold, self.best, metric) {
            self.best = Some(metric);
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
            if self.stagnant > self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.stagnant = 0;
            }
        }
        Ok(self.lr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    pub patience: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self { patience: 10 }
    }
}

impl EarlyStopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::invalid("early-stop patience must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Early-stopping state machine sharing the scheduler's monitored metric,
/// mode, and improvement threshold. Stops once `patience` consecutive
/// epochs pass without improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopper {
    patience: usize,
    mode: Mode,
    threshold: f64,
    best: Option<f64>,
    stagnant: usize,
}

impl EarlyStopper {
    pub fn new(cfg: EarlyStopConfig, mode: Mode, threshold: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            patience: cfg.patience,
            mode,
            threshold,
            best: None,
            stagnant: 0,
        })
    }

    pub fn observe(&mut self, metric: f64) -> StopDecision {
        if improved(self.mode, self.threshold, self.best, metric) {
            self.best = Some(metric);
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
        }
        if self.stagnant >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// Index of the best epoch in a `(epoch, metric)` history. Ties resolve to
/// the earliest epoch.
pub fn select_best_checkpoint(history: &[(usize, f64)], mode: Mode) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let mut best = history[0];
    for &(epoch, metric) in &history[1..] {
        let better = match mode {
            Mode::Max => metric > best.1,
            Mode::Min => metric < best.1,
        };
        if better {
            best = (epoch, metric);
        }
    }
    Ok(best.0)
}
