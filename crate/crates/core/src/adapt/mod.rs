//! Latent-space injection and internal adapters on a frozen policy.

mod ops;
mod policy;

pub use ops::{
    blend_two, load_adapter, merge, merge_linear, prune_locked, prune_policy, regularizer_value, save_adapter, AdapterManifest,
    Blend,
};
pub use policy::{build_adapted, regularizer, AdaptedPolicy, AdapterConfig, AdapterKind, InjectionSite};

use crate::neural::NeuralError;

#[derive(Debug, thiserror::Error)]
pub enum AdaptError {
    #[error("adapter config: {0}")]
    Config(String),
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error("adapter was built on base {expected}, got base {found}")]
    BaseMismatch { expected: String, found: String },
    #[error("policy was built with a terrain encoder; the heightfield window is required")]
    MissingTerrain,
    #[error("cannot prune: {0}")]
    Prune(String),
    #[error("adapter manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}
