//! Reference gait clips, observation layouts and the imitation-error metric.

mod clip;
mod metric;
mod observe;

pub use clip::{gait_angles, generate_clip, style_preset, ClipFrame, GaitParams, ReferenceClip, CLIP_HZ, STYLES};
pub use metric::{clip_imitation_error, frame_error, imitation_error, mean};
pub use observe::{
    disc_dim, disc_frame_dim, disc_window, frame_dim, frame_features, obs_dim, observe, Frame, GoalState, DISC_FRAMES,
    HISTORY,
};

#[derive(Debug, thiserror::Error)]
pub enum MotionError {
    #[error("invalid gait parameters: {0}")]
    InvalidParams(String),
    #[error("imitation error needs non-empty inputs")]
    Empty,
    #[error("sequence lengths differ: sim {sim}, reference {reference}")]
    LengthMismatch { sim: usize, reference: usize },
}
