//! Trainable cross-turn argument tagger and the differentiable machinery it
//! is built from.

pub mod checkpoint;
pub mod encoder;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod tagger;
pub mod train;
pub mod vocab;

use thiserror::Error;

use crate::dialogue::DialogueError;
use crate::tags::CodecError;

pub use checkpoint::Checkpoint;
pub use encoder::{ReferenceEncoder, UtteranceEncoder};
pub use tagger::{
    argmax_rows, build_indicators, sequence_loss, CsrlModel, Indicators, ModelConfig,
    PredictionResult, TrainingSample,
};
pub use train::{evaluate, train, train_from, EpochReport, TrainOptions};
pub use vocab::Vocab;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("utterance {turn} has {len} tokens, encoder accepts at most {max}")]
    UtteranceTooLong { turn: usize, len: usize, max: usize },
    #[error("non-finite activation after attention layer {layer}")]
    NonFinite { layer: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("label vocabulary hash {found} does not match {expected}")]
    VocabularyMismatch { expected: String, found: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Linearize(#[from] crate::linearize::LinearizeError),
}
