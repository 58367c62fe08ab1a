//! Latent collection, classical MDS, foot-height traces and plain SVG output.

mod latent;
mod linalg;
mod mds;

pub use latent::{
    collect_latents, foot_height_trace, lines_svg, scatter_svg, write_embedding_csv, write_trace_csv, LatentSample,
    LatentSource, ENCODER_TAG,
};
pub use linalg::{jacobi_eigen, numerical_rank, singular_values};
pub use mds::{classical_mds, pairwise_distances, stress, Embedding};

use crate::adapt::AdaptError;
use crate::neural::NeuralError;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("distance matrix has {rows} rows but row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },
    #[error("distance matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("distance ({0}, {1}) is negative or not a number")]
    Negative(usize, usize),
    #[error("diagonal entry {0} is not zero")]
    Diagonal(usize),
    #[error("morphology has no link `{0}`")]
    MissingLink(String),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}
