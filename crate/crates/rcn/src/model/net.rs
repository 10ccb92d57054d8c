//! The recurrent capsule network graph.
//!
//! An instance flows through three stages, all recorded on a [`Tape`]:
//! word + type embedding lookups, five directional LSTM segment encoders
//! producing one input capsule per segment, and a classification head. The
//! capsule head multiplies each segment capsule into per-class prediction
//! vectors and couples them by agreement over `r` routing iterations; the
//! vector lengths are the class scores. The ablation head flattens the five
//! capsules through a dense layer and a softmax.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{EncoderMode, HeadMode, ModelConfig};
use super::ModelError;
use crate::dataset::{split_segments, RelationInstance, RelationLabel};
use crate::ner::TypeTag;
use crate::param::{ParamId, ParamStore};
use crate::tape::{NodeId, Tape};
use crate::tensor::TensorError;

/// Token index. Row 0 is the trainable unknown-word row; every token absent
/// from the training vocabulary maps there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK_TOKEN: &str = "<unk>";

impl Vocab {
    /// Unique training tokens in sorted order, with the unknown row first.
    pub fn build<'a>(tokens: impl Iterator<Item = &'a str>) -> Vocab {
        let mut uniq: Vec<&str> = tokens.collect();
        uniq.sort_unstable();
        uniq.dedup();
        let mut list = Vec::with_capacity(uniq.len() + 1);
        list.push(UNK_TOKEN.to_string());
        list.extend(uniq.into_iter().filter(|t| *t != UNK_TOKEN).map(String::from));
        Vocab::from_tokens(list)
    }

    pub fn from_instances(instances: &[RelationInstance]) -> Vocab {
        Vocab::build(
            instances
                .iter()
                .flat_map(|i| i.tokens.iter().map(String::as_str)),
        )
    }

    /// Rebuild from a saved token list (row order is meaningful).
    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    /// Row of a token, or `None` for out-of-vocabulary (callers use row 0).
    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Parameter ids of one LSTM direction, gate order i, f, c, o.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub hidden: usize,
}

/// Encoder assigned to one segment.
#[derive(Debug, Clone)]
pub enum SegmentEncoder {
    /// Single direction; `reverse` scans right-to-left.
    Uni { reverse: bool, lstm: LstmParams },
    /// Forward and backward passes concatenated.
    Bi { fwd: LstmParams, bwd: LstmParams },
}

/// All parameter ids of the network.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub word_emb: ParamId,
    pub type_emb: ParamId,
    pub encoders: Vec<SegmentEncoder>,
    /// Capsule transforms, indexed `[segment][class]`.
    pub caps_w: Vec<Vec<ParamId>>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl ModelParams {
    /// Register every parameter in a fixed order. The registration order
    /// pins the RNG draw sequence, so a seed fully determines the init.
    pub fn build(
        config: &ModelConfig,
        vocab: &Vocab,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> ModelParams {
        let scale = config.init_scale;
        let d_e = config.embedding_width();
        let width = config.segment_width();

        let word_emb =
            store.register_uniform("word_emb", vec![vocab.len(), config.word_dim], scale, rng);
        let type_emb =
            store.register_uniform("type_emb", vec![TypeTag::COUNT, config.type_dim], scale, rng);

        let lstm = |name: String, hidden: usize, store: &mut ParamStore, rng: &mut _| {
            let gate = |g: &str, kind: &str| format!("{name}.{kind}_{g}");
            let mut w = Vec::new();
            let mut u = Vec::new();
            let mut b = Vec::new();
            for g in ["i", "f", "c", "o"] {
                w.push(store.register_uniform(gate(g, "w"), vec![hidden, d_e], scale, rng));
                u.push(store.register_uniform(gate(g, "u"), vec![hidden, hidden], scale, rng));
                b.push(store.register_uniform(gate(g, "b"), vec![hidden], scale, rng));
            }
            LstmParams {
                w: [w[0], w[1], w[2], w[3]],
                u: [u[0], u[1], u[2], u[3]],
                b: [b[0], b[1], b[2], b[3]],
                hidden,
            }
        };

        let encoders = (0..5)
            .map(|seg| {
                let bi = |store: &mut ParamStore, rng: &mut _| SegmentEncoder::Bi {
                    fwd: lstm(format!("enc{seg}.fwd"), config.bi_hidden, store, rng),
                    bwd: lstm(format!("enc{seg}.bwd"), config.bi_hidden, store, rng),
                };
                match (config.encoder_mode, seg) {
                    (EncoderMode::UniBi, 0) => SegmentEncoder::Uni {
                        reverse: false,
                        lstm: lstm("enc0.fwd".into(), config.uni_hidden, store, rng),
                    },
                    (EncoderMode::UniBi, 4) => SegmentEncoder::Uni {
                        reverse: true,
                        lstm: lstm("enc4.bwd".into(), config.uni_hidden, store, rng),
                    },
                    _ => bi(store, rng),
                }
            })
            .collect();

        let caps_w = (0..5)
            .map(|i| {
                (0..config.num_classes)
                    .map(|j| {
                        store.register_uniform(
                            format!("caps.w{i}_{j}"),
                            vec![config.capsule_dim, width],
                            scale,
                            rng,
                        )
                    })
                    .collect()
            })
            .collect();

        let head_w = store.register_uniform(
            "head.w",
            vec![config.num_classes, 5 * width],
            scale,
            rng,
        );
        let head_b = store.register_uniform("head.b", vec![config.num_classes], scale, rng);

        ModelParams {
            word_emb,
            type_emb,
            encoders,
            caps_w,
            head_w,
            head_b,
        }
    }
}

/// Embed a token sequence: each position becomes word-row ⊕ type-row.
/// Returns the embedding nodes and how many tokens fell back to the
/// unknown row.
pub fn embed_sequence(
    tape: &mut Tape,
    store: &ParamStore,
    params: &ModelParams,
    vocab: &Vocab,
    tokens: &[String],
    tags: &[TypeTag],
) -> Result<(Vec<NodeId>, usize), TensorError> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut oov = 0;
    for (tok, tag) in tokens.iter().zip(tags) {
        let row = vocab.id(tok).unwrap_or_else(|| {
            oov += 1;
            0
        });
        let word = tape.param_row(store, params.word_emb, row)?;
        let typ = tape.param_row(store, params.type_emb, tag.index())?;
        out.push(tape.concat(&[word, typ])?);
    }
    Ok((out, oov))
}

/// Run one LSTM direction over a segment and return the final hidden state
/// (for a reverse scan, the state after consuming the first position).
/// An empty segment yields the zero vector.
pub fn lstm_run(
    tape: &mut Tape,
    store: &ParamStore,
    lstm: &LstmParams,
    inputs: &[NodeId],
    reverse: bool,
) -> Result<NodeId, TensorError> {
    if inputs.is_empty() {
        return Ok(tape.zeros(lstm.hidden));
    }
    let mut h = tape.zeros(lstm.hidden);
    let mut c = tape.zeros(lstm.hidden);
    let w: Vec<NodeId> = lstm.w.iter().map(|&p| tape.param(store, p)).collect();
    let u: Vec<NodeId> = lstm.u.iter().map(|&p| tape.param(store, p)).collect();
    let b: Vec<NodeId> = lstm.b.iter().map(|&p| tape.param(store, p)).collect();

    let order: Vec<NodeId> = if reverse {
        inputs.iter().rev().copied().collect()
    } else {
        inputs.to_vec()
    };
    for e in order {
        let gate = |tape: &mut Tape, k: usize, h: NodeId| -> Result<NodeId, TensorError> {
            let inp = tape.affine(w[k], e, b[k])?;
            let rec = tape.matvec(u[k], h)?;
            tape.add(inp, rec)
        };
        let i_pre = gate(tape, 0, h)?;
        let i_t = tape.sigmoid(i_pre);
        let f_pre = gate(tape, 1, h)?;
        let f_t = tape.sigmoid(f_pre);
        let c_pre = gate(tape, 2, h)?;
        let c_tilde = tape.tanh(c_pre);
        let o_pre = gate(tape, 3, h)?;
        let o_t = tape.sigmoid(o_pre);
        let keep = tape.mul(f_t, c)?;
        let write = tape.mul(i_t, c_tilde)?;
        c = tape.add(keep, write)?;
        let c_act = tape.tanh(c);
        h = tape.mul(o_t, c_act)?;
    }
    Ok(h)
}

/// Encode one segment to its input capsule (width `2 * bi_hidden`).
pub fn encode_segment(
    tape: &mut Tape,
    store: &ParamStore,
    encoder: &SegmentEncoder,
    inputs: &[NodeId],
) -> Result<NodeId, TensorError> {
    match encoder {
        SegmentEncoder::Uni { reverse, lstm } => lstm_run(tape, store, lstm, inputs, *reverse),
        SegmentEncoder::Bi { fwd, bwd } => {
            if inputs.is_empty() {
                return Ok(tape.zeros(fwd.hidden + bwd.hidden));
            }
            let f = lstm_run(tape, store, fwd, inputs, false)?;
            let b = lstm_run(tape, store, bwd, inputs, true)?;
            tape.concat(&[f, b])
        }
    }
}

/// The squashing nonlinearity `v = (||s||^2 / (1 + ||s||^2)) * s / ||s||`,
/// mapping the zero vector to itself.
pub fn squash(tape: &mut Tape, s: NodeId) -> Result<NodeId, TensorError> {
    let q = tape.sq_norm(s);
    let n = tape.l2_norm(s);
    let one = tape.scalar(1.0);
    let denom = tape.add(q, one)?;
    let inv = tape.recip(denom);
    let factor = tape.mul(n, inv)?;
    tape.scale(s, factor)
}

/// Capsule head after routing: per-class activity vectors, their lengths,
/// and the final coupling coefficient nodes (one `[num_classes]` node per
/// input capsule; each softmax output sums to one).
pub struct CapsuleGraph {
    pub activity: Vec<NodeId>,
    pub lengths: Vec<NodeId>,
    pub coupling: Vec<NodeId>,
}

/// Dynamic routing by agreement over `iters` iterations. Coupling logits
/// start at zero, so a single iteration couples uniformly. Gradients flow
/// through the full unrolled loop.
pub fn capsule_forward(
    tape: &mut Tape,
    store: &ParamStore,
    caps_w: &[Vec<ParamId>],
    us: &[NodeId],
    num_classes: usize,
    iters: usize,
) -> Result<CapsuleGraph, TensorError> {
    assert!(iters >= 1, "routing needs at least one iteration");
    let n_in = us.len();

    // Prediction vectors u_hat[i][j] = W_ij * u_i.
    let mut u_hat = Vec::with_capacity(n_in);
    for (i, &u) in us.iter().enumerate() {
        let mut per_class = Vec::with_capacity(num_classes);
        for j in 0..num_classes {
            let w = tape.param(store, caps_w[i][j]);
            per_class.push(tape.matvec(w, u)?);
        }
        u_hat.push(per_class);
    }

    let one_hot: Vec<NodeId> = (0..num_classes)
        .map(|j| {
            let mut v = vec![0.0; num_classes];
            v[j] = 1.0;
            tape.constant(crate::tensor::Tensor::vector(v))
        })
        .collect();

    let mut logits: Vec<NodeId> = (0..n_in).map(|_| tape.zeros(num_classes)).collect();
    let mut coupling: Vec<NodeId> = Vec::new();
    let mut activity: Vec<NodeId> = Vec::new();

    for iter in 0..iters {
        coupling = logits
            .iter()
            .map(|&b| tape.softmax(b, 0))
            .collect::<Result<_, _>>()?;

        activity.clear();
        for j in 0..num_classes {
            let mut terms = Vec::with_capacity(n_in);
            for i in 0..n_in {
                let c_ij = tape.dot(coupling[i], one_hot[j])?;
                terms.push(tape.scale(u_hat[i][j], c_ij)?);
            }
            let s = tape.sum_nodes(&terms)?;
            activity.push(squash(tape, s)?);
        }

        if iter + 1 < iters {
            for i in 0..n_in {
                let agree: Vec<NodeId> = (0..num_classes)
                    .map(|j| tape.dot(u_hat[i][j], activity[j]))
                    .collect::<Result<_, _>>()?;
                let delta = tape.concat(&agree)?;
                logits[i] = tape.add(logits[i], delta)?;
            }
        }
    }

    let lengths = activity.iter().map(|&v| tape.l2_norm(v)).collect();
    Ok(CapsuleGraph {
        activity,
        lengths,
        coupling,
    })
}

/// Margin loss over the class lengths: the gold class is pulled above
/// `m_plus`, every other class pushed below `m_minus` with weight `lambda`.
pub fn margin_loss(
    tape: &mut Tape,
    lengths: &[NodeId],
    gold: usize,
    m_plus: f64,
    m_minus: f64,
    lambda: f64,
) -> Result<NodeId, TensorError> {
    let mut terms = Vec::with_capacity(lengths.len());
    for (j, &len) in lengths.iter().enumerate() {
        if j == gold {
            let margin = tape.scalar(m_plus);
            let gap = tape.sub(margin, len)?;
            let hinge = tape.relu(gap);
            terms.push(tape.mul(hinge, hinge)?);
        } else {
            let margin = tape.scalar(m_minus);
            let gap = tape.sub(len, margin)?;
            let hinge = tape.relu(gap);
            let sq = tape.mul(hinge, hinge)?;
            terms.push(tape.scale_const(sq, lambda));
        }
    }
    tape.sum_nodes(&terms)
}

/// Cross-entropy of the softmax-head probabilities against the gold class.
pub fn cross_entropy(
    tape: &mut Tape,
    probs: NodeId,
    gold: usize,
    num_classes: usize,
) -> Result<NodeId, TensorError> {
    let mut v = vec![0.0; num_classes];
    v[gold] = 1.0;
    let one_hot = tape.constant(crate::tensor::Tensor::vector(v));
    let p_gold = tape.dot(probs, one_hot)?;
    let lp = tape.log(p_gold);
    Ok(tape.scale_const(lp, -1.0))
}

pub(crate) enum HeadGraph {
    Capsule(CapsuleGraph),
    Softmax { probs: NodeId },
}

pub(crate) struct InstanceGraph {
    pub head: HeadGraph,
    pub oov: usize,
}

/// A fully initialized (or trained) network: config, vocabulary, parameter
/// layout, and the parameter store itself.
#[derive(Debug)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
    pub store: ParamStore,
}

/// One classification with its per-class scores (capsule lengths, or
/// probabilities under the softmax head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: RelationLabel,
    pub scores: Vec<f64>,
    pub oov_tokens: usize,
}

/// Argmax with ties broken toward the lowest class index.
pub(crate) fn pick_class(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl TrainedModel {
    /// Fresh model with seeded uniform initialization (and pretrained word
    /// vectors if the config points at an embedding file).
    pub fn init(config: ModelConfig, vocab: Vocab) -> Result<TrainedModel, ModelError> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let params = ModelParams::build(&config, &vocab, &mut store, &mut rng);
        let mut model = TrainedModel {
            config,
            vocab,
            params,
            store,
        };
        if let Some(path) = model.config.embedding_file.clone() {
            model.load_embeddings(&path)?;
        }
        Ok(model)
    }

    /// Overwrite word-embedding rows from a JSON map of token to vector.
    fn load_embeddings(&mut self, path: &std::path::Path) -> Result<(), ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let map: HashMap<String, Vec<f64>> =
            serde_json::from_str(&text).map_err(|e| ModelError::EmbeddingFile {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        let dim = self.config.word_dim;
        let rows: Vec<(usize, &Vec<f64>)> = self
            .vocab
            .tokens()
            .iter()
            .enumerate()
            .filter_map(|(i, t)| map.get(t).map(|v| (i, v)))
            .collect();
        for (row, values) in rows {
            if values.len() != dim {
                return Err(ModelError::EmbeddingFile {
                    path: path.display().to_string(),
                    reason: format!(
                        "vector for row {row} has length {}, expected {dim}",
                        values.len()
                    ),
                });
            }
            let emb = self.store.value_mut(self.params.word_emb);
            emb.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(values);
        }
        Ok(())
    }

    fn check_instance(&self, inst: &RelationInstance) -> Result<(), ModelError> {
        let t = inst.tokens.len();
        let ok = inst.type_tags.len() == t
            && inst.e1.span[0] <= inst.e1.span[1]
            && inst.e2.span[0] <= inst.e2.span[1]
            && inst.e1.span[1] < inst.e2.span[0]
            && inst.e2.span[1] < t;
        if ok {
            Ok(())
        } else {
            Err(ModelError::BadInstance {
                reason: format!(
                    "tokens {t}, tags {}, spans {:?}/{:?}",
                    inst.type_tags.len(),
                    inst.e1.span,
                    inst.e2.span
                ),
            })
        }
    }

    pub(crate) fn build_graph(
        &self,
        tape: &mut Tape,
        inst: &RelationInstance,
    ) -> Result<InstanceGraph, ModelError> {
        self.check_instance(inst)?;
        let (embeds, oov) = embed_sequence(
            tape,
            &self.store,
            &self.params,
            &self.vocab,
            &inst.tokens,
            &inst.type_tags,
        )?;
        let split = split_segments(inst);
        let mut us = Vec::with_capacity(5);
        for (seg, range) in split.ranges.iter().enumerate() {
            let u = encode_segment(
                tape,
                &self.store,
                &self.params.encoders[seg],
                &embeds[range.clone()],
            )?;
            us.push(u);
        }
        let head = match self.config.head_mode {
            HeadMode::Capsule => HeadGraph::Capsule(capsule_forward(
                tape,
                &self.store,
                &self.params.caps_w,
                &us,
                self.config.num_classes,
                self.config.routing_iters,
            )?),
            HeadMode::Softmax => {
                let feats = tape.concat(&us)?;
                let w = tape.param(&self.store, self.params.head_w);
                let b = tape.param(&self.store, self.params.head_b);
                let z = tape.affine(w, feats, b)?;
                let probs = tape.softmax(z, 0)?;
                HeadGraph::Softmax { probs }
            }
        };
        Ok(InstanceGraph { head, oov })
    }

    pub(crate) fn loss_node(
        &self,
        tape: &mut Tape,
        graph: &InstanceGraph,
        gold: RelationLabel,
    ) -> Result<NodeId, ModelError> {
        let gold_idx = gold.index();
        if gold_idx >= self.config.num_classes {
            return Err(ModelError::LabelOutOfRange {
                label: gold.name(),
                num_classes: self.config.num_classes,
            });
        }
        let loss = match &graph.head {
            HeadGraph::Capsule(c) => margin_loss(
                tape,
                &c.lengths,
                gold_idx,
                self.config.m_plus,
                self.config.m_minus,
                self.config.lambda,
            )?,
            HeadGraph::Softmax { probs } => {
                cross_entropy(tape, *probs, gold_idx, self.config.num_classes)?
            }
        };
        Ok(loss)
    }

    /// Classify one instance.
    pub fn predict(&self, inst: &RelationInstance) -> Result<Prediction, ModelError> {
        let mut tape = Tape::new();
        let graph = self.build_graph(&mut tape, inst)?;
        let scores: Vec<f64> = match &graph.head {
            HeadGraph::Capsule(c) => c.lengths.iter().map(|&l| tape.value(l)[0]).collect(),
            HeadGraph::Softmax { probs } => tape.value(*probs).to_vec(),
        };
        let label = RelationLabel::from_index(pick_class(&scores)).expect("class in range");
        Ok(Prediction {
            label,
            scores,
            oov_tokens: graph.oov,
        })
    }

    /// Full capsule readout (activity vectors, lengths, coupling matrix) for
    /// inspection; only meaningful under the capsule head.
    pub fn capsule_readout(&self, inst: &RelationInstance) -> Result<CapsuleReadout, ModelError> {
        let mut tape = Tape::new();
        let graph = self.build_graph(&mut tape, inst)?;
        match &graph.head {
            HeadGraph::Capsule(c) => Ok(CapsuleReadout {
                activity: c.activity.iter().map(|&v| tape.value(v).to_vec()).collect(),
                lengths: c.lengths.iter().map(|&l| tape.value(l)[0]).collect(),
                coupling: c.coupling.iter().map(|&c| tape.value(c).to_vec()).collect(),
            }),
            HeadGraph::Softmax { .. } => Err(ModelError::BadConfig {
                reason: "capsule readout requested under the softmax head".into(),
            }),
        }
    }

    /// Classify many instances on a frozen parameter snapshot, fanned out
    /// across threads. Output order matches input order.
    pub fn predict_batch(
        &self,
        instances: &[RelationInstance],
    ) -> Result<Vec<Prediction>, ModelError> {
        use rayon::prelude::*;
        instances.par_iter().map(|i| self.predict(i)).collect()
    }
}

/// Per-class activity vectors with lengths and coupling coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapsuleReadout {
    pub activity: Vec<Vec<f64>>,
    pub lengths: Vec<f64>,
    /// Coupling coefficients `[segment][class]` from the final iteration.
    pub coupling: Vec<Vec<f64>>,
}
