//! Model hyperparameters.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::param::AdamConfig;

/// Classification head: capsule layer with dynamic routing, or the ablation
/// fully-connected softmax head over the concatenated segment features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    #[default]
    Capsule,
    Softmax,
}

/// Segment encoder assignment: the directional layout (forward LSTM for the
/// left context, backward for the right, Bi-LSTMs in between) or the
/// ablation using Bi-LSTMs everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    #[default]
    UniBi,
    AllBi,
}

/// Every knob of the network and its training loop. `Default` gives the
/// published configuration: 128-dim word and type embeddings, hidden sizes
/// 64 (bidirectional) and 128 (unidirectional), 64-dim capsules, 4 routing
/// iterations, Adam with canonical settings, batches of 128, and margin
/// constants 0.9/0.1/0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub type_dim: usize,
    /// Hidden size per direction of the bidirectional encoders.
    pub bi_hidden: usize,
    /// Hidden size of the unidirectional edge encoders; must equal
    /// `2 * bi_hidden` so every segment feeds the capsules at one width.
    pub uni_hidden: usize,
    pub capsule_dim: usize,
    pub num_classes: usize,
    pub routing_iters: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
    pub head_mode: HeadMode,
    pub encoder_mode: EncoderMode,
    /// Sum the margin loss over a batch (the default) or average it.
    pub average_batch_loss: bool,
    pub seed: u64,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Optional JSON file of pretrained word vectors (token -> values);
    /// matching vocabulary rows are overwritten after random init.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_file: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 128,
            type_dim: 128,
            bi_hidden: 64,
            uni_hidden: 128,
            capsule_dim: 64,
            num_classes: 6,
            routing_iters: 4,
            batch_size: 128,
            epochs: 12,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            m_plus: 0.9,
            m_minus: 0.1,
            lambda: 0.5,
            head_mode: HeadMode::Capsule,
            encoder_mode: EncoderMode::UniBi,
            average_batch_loss: false,
            seed: 42,
            init_scale: 0.08,
            embedding_file: None,
        }
    }
}

impl ModelConfig {
    /// Width of each input capsule; all five segments encode to this.
    pub fn segment_width(&self) -> usize {
        2 * self.bi_hidden
    }

    pub fn embedding_width(&self) -> usize {
        self.word_dim + self.type_dim
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("word_dim", self.word_dim),
            ("type_dim", self.type_dim),
            ("bi_hidden", self.bi_hidden),
            ("uni_hidden", self.uni_hidden),
            ("capsule_dim", self.capsule_dim),
            ("num_classes", self.num_classes),
            ("routing_iters", self.routing_iters),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::BadConfig {
                    reason: format!("{name} must be positive"),
                });
            }
        }
        if self.uni_hidden != 2 * self.bi_hidden {
            return Err(ModelError::BadConfig {
                reason: format!(
                    "uni_hidden ({}) must equal 2 * bi_hidden ({}) so all \
                     segments encode to the same width",
                    self.uni_hidden, self.bi_hidden
                ),
            });
        }
        if !(self.m_minus < self.m_plus && self.m_plus <= 1.0) {
            return Err(ModelError::BadConfig {
                reason: format!(
                    "margins must satisfy m_minus < m_plus <= 1, got {} and {}",
                    self.m_minus, self.m_plus
                ),
            });
        }
        if self.num_classes > crate::dataset::RelationLabel::ALL.len() {
            return Err(ModelError::BadConfig {
                reason: format!(
                    "num_classes {} exceeds the {} defined relation labels",
                    self.num_classes,
                    crate::dataset::RelationLabel::ALL.len()
                ),
            });
        }
        Ok(())
    }
}
