//! Per-step constants for the continuous chain and the synchronized
//! discrete chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Upper clip applied to each continuous beta.
pub const MAX_BETA: f64 = 0.999;
/// Per-discrete-step probability that an unmasked class stays unmasked.
pub const DEFAULT_BETA_DISC: f64 = 0.15;
/// Continuous steps per discrete step.
pub const SYNC_STRIDE: usize = 10;

/// Serializable description from which a [`DiffusionSchedule`] is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_disc: f64,
    pub signal_scale: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_disc: DEFAULT_BETA_DISC,
            signal_scale: crate::layout::SIGNAL_SCALE,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        let mut s = build_cosine_schedule(self.steps)?;
        if !(self.beta_disc > 0.0 && self.beta_disc < 1.0) {
            return Err(Error::Config(format!("beta_disc {} outside (0, 1)", self.beta_disc)));
        }
        if self.signal_scale <= 0.0 || !self.signal_scale.is_finite() {
            return Err(Error::Config(format!("signal scale {} must be positive", self.signal_scale)));
        }
        s.set_beta_disc(self.beta_disc);
        s.signal_scale = self.signal_scale;
        Ok(s)
    }
}

/// Arrays are indexed by step `0..=T`. Index 0 of `beta`/`alpha` is unused
/// (beta 0, alpha 1) so that `alpha_bar[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub discrete_steps: usize,
    pub beta_disc: f64,
    /// `stay_bar[s] = beta_disc^s`, for `s in 0..=discrete_steps`.
    pub stay_bar: Vec<f64>,
    pub signal_scale: f64,
}

fn cosine_f(t: usize, steps: usize) -> f64 {
    let u = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
    (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
}

/// Cosine schedule with `T` continuous steps and `T/10` discrete steps.
pub fn build_cosine_schedule(steps: usize) -> Result<DiffusionSchedule> {
    if steps < SYNC_STRIDE || steps % SYNC_STRIDE != 0 {
        return Err(Error::Config(format!(
            "step count {steps} must be a positive multiple of {SYNC_STRIDE}"
        )));
    }
    let f0 = cosine_f(0, steps);
    let mut beta = vec![0.0; steps + 1];
    let mut alpha = vec![1.0; steps + 1];
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        let target_prev = cosine_f(t - 1, steps) / f0;
        let target = cosine_f(t, steps) / f0;
        let b = (1.0 - target / target_prev).min(MAX_BETA);
        beta[t] = b;
        alpha[t] = 1.0 - b;
        // Running product so the recurrence holds exactly even after clipping.
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
    }
    let mut schedule = DiffusionSchedule {
        steps,
        beta,
        alpha,
        alpha_bar,
        discrete_steps: steps / SYNC_STRIDE,
        beta_disc: DEFAULT_BETA_DISC,
        stay_bar: Vec::new(),
        signal_scale: crate::layout::SIGNAL_SCALE,
    };
    schedule.set_beta_disc(DEFAULT_BETA_DISC);
    Ok(schedule)
}

/// Discrete step synchronized with continuous step `t`.
pub fn discrete_step_of(t: usize) -> usize {
    t / SYNC_STRIDE
}

impl DiffusionSchedule {
    fn set_beta_disc(&mut self, beta_disc: f64) {
        self.beta_disc = beta_disc;
        self.stay_bar = (0..=self.discrete_steps).map(|s| beta_disc.powf(s as f64)).collect();
    }

    pub fn config(&self) -> ScheduleConfig {
        ScheduleConfig {
            steps: self.steps,
            beta_disc: self.beta_disc,
            signal_scale: self.signal_scale,
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            Err(Error::StepOutOfRange { t, max: self.steps })
        } else {
            Ok(())
        }
    }

    /// `beta_disc^s`, the probability a clean class survives `s` discrete steps.
    pub fn stay(&self, s: usize) -> f64 {
        self.stay_bar.get(s).copied().unwrap_or_else(|| self.beta_disc.powf(s as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_steps_not_multiple_of_ten() {
        assert!(build_cosine_schedule(95).is_err());
        assert!(build_cosine_schedule(0).is_err());
        assert!(build_cosine_schedule(10).is_ok());
    }

    #[test]
    fn alpha_bar_properties() {
        let s = build_cosine_schedule(100).unwrap();
        assert_eq!(s.alpha_bar[0], 1.0);
        for t in 1..=100 {
            assert!(s.beta[t] > 0.0 && s.beta[t] < 1.0, "beta[{t}] = {}", s.beta[t]);
            assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            assert_eq!(s.alpha_bar[t], s.alpha_bar[t - 1] * (1.0 - s.beta[t]));
        }
        assert!(s.alpha_bar[100] < 0.01);
        assert!(s.alpha_bar[1] > 0.99);
    }

    #[test]
    fn stay_bar_is_power_of_beta_disc() {
        let s = build_cosine_schedule(100).unwrap();
        assert_eq!(s.discrete_steps, 10);
        assert_eq!(s.stay_bar[0], 1.0);
        for k in 0..10 {
            assert_eq!(s.stay_bar[k + 1], 0.15f64.powf((k + 1) as f64));
            assert!((s.stay_bar[k + 1] / s.stay_bar[k] - 0.15).abs() < 1e-15);
        }
        assert!((s.stay_bar[10] - 5.7665e-9).abs() < 1e-12);
        assert!(s.stay_bar[10] < 1e-6);
    }

    #[test]
    fn discrete_sync_rule() {
        assert_eq!(discrete_step_of(0), 0);
        assert_eq!(discrete_step_of(10), 1);
        assert_eq!(discrete_step_of(99), 9);
        assert_eq!(discrete_step_of(100), 10);
    }

    #[test]
    fn construction_is_deterministic() {
        let a = build_cosine_schedule(100).unwrap();
        let b = build_cosine_schedule(100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_round_trip() {
        let cfg = ScheduleConfig {
            steps: 50,
            beta_disc: 0.3,
            signal_scale: 1.0,
        };
        let s = cfg.build().unwrap();
        assert_eq!(s.config(), cfg);
        assert!(ScheduleConfig { beta_disc: 1.0, ..cfg }.build().is_err());
    }
}
