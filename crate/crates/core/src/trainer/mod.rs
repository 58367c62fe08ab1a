//! Multi-objective PPO with a discriminator-ensemble imitation reward.

mod actor;
mod algo;
mod config;
mod env;
mod rollout;
mod run;

pub use actor::{Actor, RegularizedPolicy};
pub use algo::{
    disc_loss, disc_update, gae, goal_reward, imitation_reward, ppo_update, standardize, standardize_multi, DiscLoss,
    PpoBatch, PpoSettings, PpoStats,
};
pub use config::{GoalConfig, TrainConfig};
pub use env::{Env, EnvConfig, Observation, PerturbConfig, StepInfo, CONTROL_DT, FALL_TILT};
pub use rollout::{collect_rollouts, critic_values, RolloutBatch};
pub use run::{
    batch_imitation_error, clip_windows, evaluate, write_metrics, EvalReport, IterationStats, Task, Trainer,
    METRICS_HEADER,
};

use crate::neural::NeuralError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("non-finite {0}; update aborted")]
    NonFinite(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}
