//! Annealing-gate schedules for the residual synapse coefficient.
//!
//! A schedule produces a coefficient in [0, 1] over `total_steps` steps.
//! With warmup the coefficient ramps linearly from 0 up to the decay
//! curve's starting value over the warmup window, after which the decay
//! runs with its progress rescaled over the remaining steps.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleFamily {
    Linear,
    Cosine,
    Exponential,
    ConstantZero,
    ConstantOne,
}

impl ScheduleFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleFamily::Linear => "linear",
            ScheduleFamily::Cosine => "cosine",
            ScheduleFamily::Exponential => "exponential",
            ScheduleFamily::ConstantZero => "constant-zero",
            ScheduleFamily::ConstantOne => "constant-one",
        }
    }

    /// Decay value at post-warmup progress `p` in [0, 1].
    fn decay(&self, p: f64) -> f64 {
        match self {
            ScheduleFamily::Linear => 1.0 - p,
            ScheduleFamily::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * p).cos()),
            ScheduleFamily::Exponential => (-5.0 * p).exp(),
            ScheduleFamily::ConstantZero => 0.0,
            ScheduleFamily::ConstantOne => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    family: ScheduleFamily,
    warmup_fraction: f64,
    total_steps: u64,
}

impl Schedule {
    pub fn new(family: ScheduleFamily, warmup_fraction: f64, total_steps: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::InvalidConfig {
                reason: "schedule needs at least one step".to_string(),
            });
        }
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(Error::InvalidConfig {
                reason: format!("warmup_fraction {warmup_fraction} must lie in [0, 1)"),
            });
        }
        Ok(Self {
            family,
            warmup_fraction,
            total_steps,
        })
    }

    pub fn family(&self) -> ScheduleFamily {
        self.family
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_fraction * self.total_steps as f64).floor() as u64
    }

    /// Gate coefficient at step `t` in `0..=total_steps`.
    pub fn lambda_at(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::StepOutOfRange {
                step: t,
                total: self.total_steps,
            });
        }
        let warmup = self.warmup_steps();
        if t < warmup {
            let ramp = t as f64 / warmup as f64;
            return Ok(ramp * self.family.decay(0.0));
        }
        let p = (t - warmup) as f64 / (self.total_steps - warmup) as f64;
        Ok(self.family.decay(p))
    }

    /// Gate value at the end of training.
    pub fn final_lambda(&self) -> f64 {
        self.lambda_at(self.total_steps)
            .expect("total step is in range")
    }
}
