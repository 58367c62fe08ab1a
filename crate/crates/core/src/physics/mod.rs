//! Planar rigid-body simulation with revolute joints, PD servos and ground
//! contact, plus the biped character and terrain generation.

mod math;
mod morphology;
mod terrain;
mod world;

pub use math::Vec2;
pub use morphology::{apply_morphology, morphology_preset, JointSpec, LinkSpec, MorphEdit, Morphology, PdGains, Pose};
pub use terrain::{
    generate_terrain, heightfield_window, Terrain, TerrainParams, WINDOW_BACK, WINDOW_FORWARD, WINDOW_SAMPLES,
};
pub use world::{
    pd_torque, write_trajectory_csv, Body, BodyState, ContactReport, Ground, Joint, Motor, SolverConfig, World,
    WorldState,
};

/// Physics step rate, Hz.
pub const PHYSICS_HZ: f64 = 120.0;
/// Control rate, Hz.
pub const CONTROL_HZ: f64 = 30.0;
/// Physics steps per control step.
pub const SUBSTEPS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum PhysicsError {
    #[error("unknown link or joint `{0}`")]
    UnknownName(String),
    #[error("invalid morphology edit: {0}")]
    InvalidEdit(String),
    #[error("non-finite state in body `{body}` at t={time}")]
    NonFinite { body: String, time: f64 },
    #[error("expected {expected} actuated values, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("timestep must be positive and finite, got {0}")]
    BadTimestep(f64),
}
