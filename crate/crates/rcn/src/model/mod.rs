//! The recurrent capsule network: configuration, parameters, forward
//! graphs, training, and checkpointing.

mod checkpoint;
mod config;
mod net;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{EncoderMode, HeadMode, ModelConfig};
pub use net::{
    capsule_forward, cross_entropy, embed_sequence, encode_segment, lstm_run, margin_loss, squash,
    CapsuleGraph, CapsuleReadout, LstmParams, ModelParams, Prediction, SegmentEncoder,
    TrainedModel, Vocab, UNK_TOKEN,
};
pub use train::{train, train_with_hook, EpochRecord};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {reason}")]
    BadConfig { reason: String },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("instance is not usable: {reason}")]
    BadInstance { reason: String },
    #[error("label {label:?} is outside the {num_classes} model classes")]
    LabelOutOfRange {
        label: &'static str,
        num_classes: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("embedding file {path}: {reason}")]
    EmbeddingFile { path: String, reason: String },
}
