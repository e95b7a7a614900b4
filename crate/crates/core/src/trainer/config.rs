use serde::{Deserialize, Serialize};

use super::TrainError;

/// Linear interpolation from `start` at the first iteration to `end` at the last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
}

impl LrSchedule {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    /// Rate for iteration `k` of `total`.
    pub fn at(&self, k: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.start;
        }
        self.start + (self.end - self.start) * k as f64 / (total - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// Minimum transitions gathered per iteration.
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub policy_lr: LrSchedule,
    pub value_lr: LrSchedule,
    pub aux_lr: LrSchedule,
    pub workers: usize,
    pub epochs_per_update: usize,
    pub iterations: usize,
    pub eval_trajectories: usize,
    pub seed: u64,
    pub normalize_advantages: bool,
    /// Rewards are multiplied by this before they reach the learner.
    pub reward_scale: f64,
    /// Save a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            epsilon: 0.2,
            batch_size: 2048,
            minibatch_size: 64,
            policy_lr: LrSchedule::new(1e-4, 1e-5),
            value_lr: LrSchedule::new(2e-4, 2e-5),
            aux_lr: LrSchedule::new(1e-2, 1e-3),
            workers: 16,
            epochs_per_update: 4,
            iterations: 200,
            eval_trajectories: 100,
            seed: 0,
            normalize_advantages: true,
            reward_scale: 0.01,
            checkpoint_every: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.minibatch_size == 0 {
            return bad("batch_size and minibatch_size must be positive");
        }
        if !self.batch_size.is_multiple_of(self.minibatch_size) {
            return bad("batch_size must be divisible by minibatch_size");
        }
        if self.workers == 0 || self.epochs_per_update == 0 {
            return bad("workers and epochs_per_update must be positive");
        }
        if self.eval_trajectories == 0 {
            return bad("eval_trajectories must be positive");
        }
        for s in [self.policy_lr, self.value_lr, self.aux_lr] {
            if !(s.start >= 0.0 && s.end >= 0.0 && s.start.is_finite() && s.end.is_finite()) {
                return bad("learning rates must be finite and non-negative");
            }
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule::new(1e-4, 1e-5);
        assert_eq!(s.at(0, 200), 1e-4);
        assert!((s.at(199, 200) - 1e-5).abs() < 1e-18);
        assert_eq!(s.at(0, 1), 1e-4);
    }

    #[test]
    fn validation() {
        PpoConfig::default().validate().unwrap();
        assert!(PpoConfig { minibatch_size: 60, ..PpoConfig::default() }.validate().is_err());
        assert!(PpoConfig { gamma: 0.0, ..PpoConfig::default() }.validate().is_err());
        assert!(PpoConfig { epsilon: 1.0, ..PpoConfig::default() }.validate().is_err());
    }
}
