//! Dense autodiff, network layers, the policy/critic/discriminator
//! architectures, checkpoints and the Adam optimizer.

mod checkpoint;
mod graph;
mod nets;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, load_into, read_checkpoint, save_checkpoint, Checkpoint};
pub use graph::{sigmoid, ConvGeom, Graph, Var};
pub use nets::{
    encoder_forward, gaussian_logprob, gru_step, init_encoder, init_gru, init_linear,
    init_terrain_encoder, input_gradient, linear, terrain_encoder_forward, Activation, CriticNet,
    DiscConfig, DiscriminatorEnsemble, NetDims, PolicyNet, PolicyOutput, TerrainEncoderDims,
    LN_2PI,
};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{Bound, ParamTree};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    BadData { shape: Vec<usize>, len: usize },
    #[error("gradient target must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("input gradients need a twice-differentiable trunk; {0:?} is not smooth")]
    NonSmooth(Activation),
    #[error("bad magic")]
    BadMagic,
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("tensor `{name}` lies outside the payload (offset {offset}, {bytes} bytes, payload {payload} bytes)")]
    OutOfBounds {
        name: String,
        offset: usize,
        bytes: usize,
        payload: usize,
    },
    #[error("checkpoint tensor `{name}` has shape {found:?}, expected {expected:?}")]
    LoadShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
