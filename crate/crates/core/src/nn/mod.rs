//! Transformer evaluator: a value head in [-1, 1] for the player to move and
//! a policy head over the action vocabulary, masked to the legal actions.
//!
//! The network is generic over the float type. Inference and training run
//! in `f32`; gradient checks run the same code in `f64`.

mod batch;
mod io;
mod model;
mod ops;
mod train;

use thiserror::Error;

pub use batch::{BatchClient, BatchServer};
pub use io::{from_bytes, load_model, save_model, to_bytes, MAGIC, MODEL_FILE_VERSION};
pub use model::{count_parameters, Evaluation, Input, Model, ModelConfig, TensorSpec};
pub use ops::Real;
pub use train::{evaluate_loss, loss_and_grad, train_step, Adam, LossReport, TrainConfig, TrainingExample};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("mask has no legal action")]
    EmptyMask,
    #[error("mask has {len} entries, expected {expected}")]
    MaskLength { len: usize, expected: usize },
    #[error("action index {0} outside the policy head")]
    ActionOutOfRange(usize),
    #[error("token index {0} outside the embedding table")]
    TokenOutOfRange(u16),
    #[error("sequence of {len} tokens (limit {max})")]
    SequenceLength { len: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("bad training example: {0}")]
    Example(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("model file checksum mismatch (truncated or corrupt)")]
    Checksum,
    #[error("corrupt model file: {0}")]
    Corrupt(&'static str),
    #[error("unsupported model file version {0}")]
    FileVersion(u32),
    #[error("model was trained on encoding version {0}, this build uses {current}", current = crate::encode::ENCODING_VERSION)]
    EncodingVersion(u32),
    #[error("inference service stopped")]
    ServiceStopped,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
