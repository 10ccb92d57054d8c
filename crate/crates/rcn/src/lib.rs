//! Severity grading of coronary artery disease from angiography text.
//!
//! The pipeline has three stages, each usable on its own:
//!
//! 1. [`ner`] — lexicon and pattern based recognition of the five clinical
//!    entity types (lumen, modifier, negative, position, percentage).
//! 2. [`model`] — a recurrent capsule network that classifies the relation
//!    between every entity pair: five directional LSTM segment encoders feed
//!    a capsule layer trained with a margin loss, all built on the in-crate
//!    [`tape`] autodiff engine.
//! 3. [`gensini`] — per-lumen maximum stenosis aggregation, lesion scoring,
//!    and the three-level severity classification.
//!
//! [`syngen`] fabricates gold-annotated synthetic corpora so the whole chain
//! can be trained and evaluated without access to hospital records, and
//! [`pipeline`]/[`metrics`] tie the stages together and score them. See the
//! `examples/` directory for one runnable walkthrough per capability; the
//! `rcn` binary exposes the same steps as subcommands.

pub mod dataset;
pub mod gensini;
pub mod metrics;
pub mod model;
pub mod ner;
pub mod param;
pub mod pipeline;
pub mod syngen;
pub mod tape;
pub mod tensor;

pub use param::{AdamConfig, ParamId, ParamStore, Parameter};
pub use tape::{NodeId, Tape};
pub use tensor::{Tensor, TensorError};
