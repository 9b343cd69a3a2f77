//! Minimal dense neural-network toolkit used by the poster pipeline models.
//!
//! Everything runs in `f64` on the CPU and is bit-for-bit deterministic for a
//! fixed parameter initialization and input order.

pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{balanced_ce, sigmoid, softmax_rows, Gradients, Graph, Var, PROB_CLAMP};
pub use layers::{
    sinusoidal_positions, AttentionTrace, EncoderLayer, LayerNorm, Linear, MultiHeadAttention,
    StackConfig, TransformerEncoder,
};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, StoredMatrix};

pub type Matrix = ndarray::Array2<f64>;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint has unknown parameters: {0}")]
    UnknownParam(String),
}
