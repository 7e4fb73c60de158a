use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step {step} outside [0, {total}]")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid schedule: {0}")]
    Invalid(&'static str),
}

/// Linear warmup followed by a half-period cosine decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub warmup_steps: u64,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub total_steps: u64,
    pub final_fraction: f64,
}

impl ScheduleConfig {
    /// 13B model: peak 6e-5.
    pub fn preset_13b(total_steps: u64) -> Self {
        ScheduleConfig { warmup_steps: 2000, lr_start: 1e-7, lr_peak: 6e-5, total_steps, final_fraction: 0.1 }
    }

    /// 1.7B model: peak 1e-4.
    pub fn preset_1_7b(total_steps: u64) -> Self {
        ScheduleConfig { lr_peak: 1e-4, ..Self::preset_13b(total_steps) }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.lr_start > 0.0 && self.lr_start < self.lr_peak) {
            return Err(ScheduleError::Invalid("need 0 < lr_start < lr_peak"));
        }
        if !(self.final_fraction > 0.0 && self.final_fraction < 1.0) {
            return Err(ScheduleError::Invalid("need 0 < final_fraction < 1"));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(ScheduleError::Invalid("need warmup_steps < total_steps"));
        }
        Ok(())
    }
}

/// Learning rate at `step`.
///
/// The interpolation forms put the endpoints exactly on `lr_start`,
/// `lr_peak` and `final_fraction * lr_peak`.
pub fn learning_rate(step: u64, cfg: &ScheduleConfig) -> Result<f64, ScheduleError> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(ScheduleError::StepOutOfRange { step, total: cfg.total_steps });
    }
    if step < cfg.warmup_steps {
        let t = step as f64 / cfg.warmup_steps as f64;
        return Ok(cfg.lr_peak * t + cfg.lr_start * (1.0 - t));
    }
    let p = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    let c = 0.5 * (1.0 + (PI * p).cos());
    let lr_final = cfg.final_fraction * cfg.lr_peak;
    Ok(lr_final * (1.0 - c) + cfg.lr_peak * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints() {
        let cfg = ScheduleConfig::preset_13b(100_000);
        assert_eq!(learning_rate(0, &cfg).unwrap(), 1e-7);
        assert_eq!(learning_rate(2000, &cfg).unwrap(), 6e-5);
        assert!((learning_rate(100_000, &cfg).unwrap() - 6e-6).abs() < 1e-18);
        assert_eq!(learning_rate(2000, &ScheduleConfig::preset_1_7b(10_000)).unwrap(), 1e-4);
    }

    #[test]
    fn midpoints() {
        let cfg = ScheduleConfig::preset_13b(102_000);
        let mid_warm = learning_rate(1000, &cfg).unwrap();
        assert!((mid_warm - (6e-5 + 1e-7) / 2.0).abs() < 1e-18);
        // Halfway through decay the cosine factor is 1/2.
        let mid_decay = learning_rate(52_000, &cfg).unwrap();
        assert!((mid_decay - (6e-5 + 6e-6) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs() {
        let cfg = ScheduleConfig::preset_13b(100);
        assert!(matches!(learning_rate(0, &cfg), Err(ScheduleError::Invalid(_))));
        let cfg = ScheduleConfig::preset_13b(5000);
        assert_eq!(learning_rate(5001, &cfg), Err(ScheduleError::StepOutOfRange { step: 5001, total: 5000 }));
        let bad = ScheduleConfig { lr_start: 1.0, ..cfg };
        assert!(learning_rate(1, &bad).is_err());
    }

    #[test]
    fn continuous_at_warmup_end() {
        let cfg = ScheduleConfig::preset_13b(1_000_000);
        let left = learning_rate(1999, &cfg).unwrap();
        let right = learning_rate(2001, &cfg).unwrap();
        assert!((left - 6e-5).abs() < 3.1e-8);
        assert!((right - 6e-5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn nonincreasing_after_warmup(total in 2001u64..200_000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let cfg = ScheduleConfig::preset_13b(total);
            let span = (total - 2000) as f64;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let s1 = 2000 + (lo * span) as u64;
            let s2 = 2000 + (hi * span) as u64;
            prop_assert!(learning_rate(s2, &cfg).unwrap() <= learning_rate(s1, &cfg).unwrap());
        }

        #[test]
        fn stays_within_bounds(total in 2001u64..200_000, f in 0.0f64..=1.0) {
            let cfg = ScheduleConfig::preset_13b(total);
            let lr = learning_rate((f * total as f64) as u64, &cfg).unwrap();
            prop_assert!((1e-7..=6e-5).contains(&lr));
        }
    }
}
