use serde::{Deserialize, Serialize};

use super::TrainError;

/// PPO, discriminator and optimizer settings. Defaults follow the reference
/// hyperparameter table except the worker count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub gp_lambda: f64,
    pub workers: usize,
    pub buffer: usize,
    pub batch: usize,
    pub epochs: usize,
    pub disc_buffer: usize,
    pub disc_batch: usize,
    /// Discriminator minibatch updates per iteration.
    pub disc_updates: usize,
    /// Objective weights (imitation, goal).
    pub omega: [f64; 2],
    /// Injection-norm regularizer.
    pub beta: f64,
    /// Adapter-weight regularizer.
    pub kappa: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_disc: f64,
    pub grad_clip: f64,
    /// Weight of `‖W − W_pre‖₂` for the regularized fine-tuning baseline.
    pub ft_reg_lambda: f64,
    pub iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            gae_lambda: 0.95,
            clip: 0.2,
            gp_lambda: 10.0,
            workers: 32,
            buffer: 4096,
            batch: 256,
            epochs: 5,
            disc_buffer: 8192,
            disc_batch: 512,
            disc_updates: 4,
            omega: [0.5, 0.5],
            beta: 0.01,
            kappa: 0.01,
            lr_policy: 5e-6,
            lr_critic: 1e-4,
            lr_disc: 1e-5,
            grad_clip: 1.0,
            ft_reg_lambda: 0.01,
            iterations: 200,
        }
    }
}

impl TrainConfig {
    /// Steps per worker per iteration.
    pub fn horizon(&self) -> usize {
        self.buffer / self.workers
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        let s = self.omega[0] + self.omega[1];
        if (s - 1.0).abs() > 1e-9 || self.omega.iter().any(|&w| w < 0.0) {
            return bad(format!(
                "omega weights must be non-negative and sum to 1, got {:?}",
                self.omega
            ));
        }
        if self.workers == 0 || self.buffer < self.workers || self.buffer % self.workers != 0 {
            return bad(format!(
                "buffer {} must be a positive multiple of workers {}",
                self.buffer, self.workers
            ));
        }
        if self.batch == 0 || self.batch > self.buffer {
            return bad(format!("batch {} must be in 1..={}", self.batch, self.buffer));
        }
        if self.disc_batch < 2 || self.disc_batch % 2 != 0 {
            return bad(format!("disc_batch {} must be even", self.disc_batch));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]".into());
        }
        for (name, v) in [
            ("lr_policy", self.lr_policy),
            ("lr_critic", self.lr_critic),
            ("lr_disc", self.lr_disc),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// Goal sampling for the steering task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoalConfig {
    pub speed: (f64, f64),
    pub timer: (f64, f64),
    pub radius: f64,
    /// Probability that a new target lies behind the character.
    pub backward_prob: f64,
}

impl Default for GoalConfig {
    fn default() -> Self {
        Self {
            speed: (1.0, 1.5),
            timer: (3.0, 5.0),
            radius: 0.5,
            backward_prob: 0.0,
        }
    }
}
