//! Synthetic gold-annotated angiography corpus.
//!
//! Real coronary arteriography reports are hospital records; this generator
//! fabricates documents from clause templates over the shipped lexicon so
//! the pipeline can be trained and evaluated end to end. Gold labels are
//! exact by construction: every clause knows which relations it expresses,
//! the emitted text round-trips through the real tokenizer and recognizer,
//! and the stored severity is computed by the scorer from the gold
//! relations themselves.
//!
//! Documents are planned severity-first (pick a level, partition its score
//! into lesions, realize each lesion as a clause), then padded with healthy
//! findings: negated stenosis — singly or over conjoined lumens, which is
//! what produces long-range entity pairs — and normal findings. Percentage
//! clauses alternate between the percent-first and percent-last orderings
//! to track the requested class mix.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{generate_pairs, label_counts, RelationInstance, RelationLabel};
use crate::gensini::{score_document, RelEntity, RelTriple, Severity};
use crate::ner::{annotate, EntityType, Lexicon, Side, TypeTag};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {reason}")]
    BadConfig { reason: String },
    #[error("template realization failed: {reason}")]
    Template { reason: String },
    #[error("gold scoring failed: {0}")]
    Score(#[from] crate::gensini::ScoreError),
    #[error("pair generation failed: {0}")]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad record at {path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

/// Which surface vocabulary to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceMode {
    #[default]
    Chinese,
    Ascii,
}

/// Generator knobs. The defaults are calibrated so a corpus at
/// `target_instances` lands within a few percent of the published relation
/// distribution (1068 / 406 / 389 / 100 / 256 / 1977 over 4196).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Generate exactly this many documents...
    pub documents: Option<usize>,
    /// ...or keep generating until roughly this many labeled instances.
    /// Exactly one of the two must be set.
    pub target_instances: Option<usize>,
    pub surface: SurfaceMode,
    /// Target share per relation class, [`RelationLabel::ALL`] order.
    pub class_mix: [f64; 6],
    /// Target share of mild/moderate/severe documents.
    pub severity_mix: [f64; 3],
    /// Probability that a context clause is a negated finding rather than
    /// a plain normal finding.
    pub negation_probability: f64,
    /// Weights for negating 1, 2, or 3 conjoined lumens at once.
    pub conjunction_weights: [f64; 3],
    /// Probability of merging two equal-grade lesions into one clause with
    /// a shared percentage.
    pub shared_stenosis_probability: f64,
    /// Probability that a percentage gets a fractional half point.
    pub decimal_percent_probability: f64,
    pub seed: u64,
}

/// The published relation distribution used as the default target mix.
pub const REFERENCE_MIX_COUNTS: [usize; 6] = [1068, 406, 389, 100, 256, 1977];

impl Default for GenConfig {
    fn default() -> Self {
        let total: usize = REFERENCE_MIX_COUNTS.iter().sum();
        let class_mix = REFERENCE_MIX_COUNTS.map(|c| c as f64 / total as f64);
        GenConfig {
            documents: None,
            target_instances: Some(total),
            surface: SurfaceMode::Chinese,
            class_mix,
            severity_mix: [0.725, 0.225, 0.05],
            negation_probability: 0.95,
            conjunction_weights: [0.58, 0.22, 0.2],
            shared_stenosis_probability: 0.35,
            decimal_percent_probability: 0.1,
            seed: 13,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<(), GenError> {
        match (self.documents, self.target_instances) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(GenError::BadConfig {
                    reason: "set exactly one of documents / target_instances".into(),
                })
            }
            _ => {}
        }
        let probs = [
            ("negation_probability", self.negation_probability),
            ("shared_stenosis_probability", self.shared_stenosis_probability),
            ("decimal_percent_probability", self.decimal_percent_probability),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(GenError::BadConfig {
                    reason: format!("{name} must be in [0,1], got {p}"),
                });
            }
        }
        if self.class_mix.iter().any(|&m| m < 0.0) || self.class_mix.iter().sum::<f64>() <= 0.0 {
            return Err(GenError::BadConfig {
                reason: "class_mix must be non-negative and sum above zero".into(),
            });
        }
        Ok(())
    }
}

/// One annotated sentence of a gold document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldSentence {
    pub text: String,
    pub tokens: Vec<String>,
    pub type_tags: Vec<TypeTag>,
    pub entities: Vec<GoldEntity>,
    pub relations: Vec<GoldRelation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldEntity {
    pub span: [usize; 2],
    #[serde(rename = "type")]
    pub ty: EntityType,
    pub surface: String,
}

/// Gold relation between two entities of the sentence, by entity index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRelation {
    pub e1: usize,
    pub e2: usize,
    pub label: RelationLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldLesion {
    pub lumen: String,
    pub side: Side,
    pub diameter: f64,
}

/// A synthetic document with full gold annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldDocument {
    pub id: usize,
    pub text: String,
    pub sentences: Vec<GoldSentence>,
    pub lesions: Vec<GoldLesion>,
    pub severity: Severity,
}

impl GoldDocument {
    /// The document's gold relations as scorer input.
    pub fn gold_triples(&self) -> Vec<Vec<RelTriple>> {
        self.sentences
            .iter()
            .map(|s| {
                s.relations
                    .iter()
                    .map(|r| {
                        let mk = |i: usize| RelEntity {
                            span: s.entities[i].span,
                            ty: s.entities[i].ty,
                            surface: s.entities[i].surface.clone(),
                        };
                        RelTriple {
                            e1: mk(r.e1),
                            e2: mk(r.e2),
                            label: r.label,
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// What a generation run produced and how close it came to the target mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub documents: usize,
    pub instance_counts: [usize; 6],
    pub requested_mix: [f64; 6],
    pub achieved_mix: [f64; 6],
    /// False when the requested mix could not be met (the report then
    /// carries the closest achievable proportions).
    pub satisfied: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

pub struct Corpus {
    pub documents: Vec<GoldDocument>,
    pub instances: Vec<RelationInstance>,
    pub report: GenReport,
}

// ── surface packs ────────────────────────────────────────────────────

struct SurfacePack {
    lexicon: Lexicon,
    normal: Vec<&'static str>,
    stenosis: &'static str,
    occlusion: Vec<&'static str>,
    negatives: Vec<&'static str>,
    evident: &'static str,
    approx: &'static str,
    conj_and: &'static str,
    conj_all: &'static str,
    shows: &'static str,
    enum_sep: &'static str,
    comma: &'static str,
    period: &'static str,
    joiner: &'static str,
}

impl SurfacePack {
    fn chinese() -> SurfacePack {
        SurfacePack {
            lexicon: Lexicon::builtin_chinese(),
            normal: vec!["正常", "畅通"],
            stenosis: "狭窄",
            occlusion: vec!["闭塞", "完全闭塞"],
            negatives: vec!["未见", "无", "没有"],
            evident: "明显",
            approx: "约",
            conj_and: "及",
            conj_all: "均",
            shows: "可见",
            enum_sep: "、",
            comma: "，",
            period: "。",
            joiner: "",
        }
    }

    fn ascii() -> SurfacePack {
        SurfacePack {
            lexicon: Lexicon::builtin_ascii(),
            normal: vec!["normal", "patent"],
            stenosis: "stenosis",
            occlusion: vec!["occluded", "occlusion"],
            negatives: vec!["no", "without", "none"],
            evident: "evident",
            approx: "about",
            conj_and: "and",
            conj_all: "all",
            shows: "shows",
            enum_sep: ",",
            comma: ",",
            period: ".",
            joiner: " ",
        }
    }

    fn get(mode: SurfaceMode) -> SurfacePack {
        match mode {
            SurfaceMode::Chinese => SurfacePack::chinese(),
            SurfaceMode::Ascii => SurfacePack::ascii(),
        }
    }
}

// ── clause construction ──────────────────────────────────────────────

/// A clause under construction: surface fragments, the entities they
/// contain in order, and relations as entity-index pairs.
struct Clause {
    fragments: Vec<String>,
    entities: Vec<(EntityType, String)>,
    relations: Vec<(usize, RelationLabel, usize)>,
}

impl Clause {
    fn new() -> Clause {
        Clause {
            fragments: Vec::new(),
            entities: Vec::new(),
            relations: Vec::new(),
        }
    }

    fn filler(&mut self, s: &str) {
        self.fragments.push(s.to_string());
    }

    fn entity(&mut self, ty: EntityType, surface: &str) -> usize {
        self.fragments.push(surface.to_string());
        self.entities.push((ty, surface.to_string()));
        self.entities.len() - 1
    }

    fn relate(&mut self, e1: usize, label: RelationLabel, e2: usize) {
        self.relations.push((e1, label, e2));
    }
}

fn format_percent(value: f64) -> String {
    if (value - value.round()).abs() < 1e-9 {
        format!("{}%", value.round() as i64)
    } else {
        format!("{value}%")
    }
}

// ── the generator ────────────────────────────────────────────────────

struct Generator<'a> {
    config: &'a GenConfig,
    pack: SurfacePack,
    /// Emitted gold relation counts per class, for order balancing.
    counts: [usize; 6],
    severity_counts: [usize; 3],
}

impl<'a> Generator<'a> {
    fn new(config: &'a GenConfig) -> Generator<'a> {
        Generator {
            config,
            pack: SurfacePack::get(config.surface),
            counts: [0; 6],
            severity_counts: [0; 3],
        }
    }

    /// Most-behind-target severity level for the next document.
    fn next_level(&self, done: usize) -> Severity {
        let total = (done + 1) as f64;
        *Severity::ALL
            .iter()
            .min_by(|a, b| {
                let gap = |s: &Severity| {
                    self.severity_counts[s.index()] as f64 / total
                        - self.config.severity_mix[s.index()]
                };
                gap(a).partial_cmp(&gap(b)).unwrap()
            })
            .unwrap()
    }

    /// Percent-first (percentage(e2,e1)) or percent-last order, tracking
    /// the requested split between the two directions.
    fn pct_order_rev(&self) -> bool {
        let f = RelationLabel::PercentageFwd.index();
        let r = RelationLabel::PercentageRev.index();
        let mix_f = self.config.class_mix[f];
        let mix_r = self.config.class_mix[r];
        if mix_r <= 0.0 {
            return false;
        }
        if mix_f <= 0.0 {
            return true;
        }
        // produce whichever direction is further behind its share
        let total = (self.counts[f] + self.counts[r]) as f64;
        let share = mix_r / (mix_f + mix_r);
        (self.counts[r] as f64) < share * (total + 1.0)
    }

    /// Attach a position mention when positions are behind their share of
    /// the positive-class mix.
    fn want_position(&self) -> bool {
        let pos = RelationLabel::Position.index();
        let norel = RelationLabel::NoRelation.index();
        let positive_mix: f64 = self
            .config
            .class_mix
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != norel)
            .map(|(_, m)| m)
            .sum();
        if positive_mix <= 0.0 {
            return false;
        }
        let share = self.config.class_mix[pos] / positive_mix;
        let total: usize = self
            .counts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != norel)
            .map(|(_, c)| c)
            .sum();
        (self.counts[pos] as f64) < share * (total as f64 + 1.0)
    }

    fn sample_total(&self, level: Severity, rng: &mut ChaCha8Rng) -> u32 {
        match level {
            Severity::Mild => rng.gen_range(0..=7),
            Severity::Moderate => rng.gen_range(8..=14),
            Severity::Severe => rng.gen_range(15..=20),
        }
    }

    /// Partition a total score into per-lesion scores of 1..=4.
    fn plan_scores(&self, total: u32, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let mut rem = total;
        let mut out = Vec::new();
        while rem > 0 {
            let hi = rem.min(4);
            // keep lesion counts plausible: prefer big lesions while the
            // remainder is large
            let lo = if rem > 12 { 3.min(hi) } else { 1 };
            let s = rng.gen_range(lo..=hi);
            out.push(s);
            rem -= s;
        }
        out
    }

    fn sample_diameter(&self, score: u32, rng: &mut ChaCha8Rng) -> f64 {
        let base = match score {
            1 => *[5, 10, 15, 20, 25, 30, 35, 40, 45].choose(rng).unwrap(),
            2 => *[50, 55, 60, 65, 70].choose(rng).unwrap(),
            3 => *[75, 80, 85, 90, 95, 99].choose(rng).unwrap(),
            _ => 100,
        } as f64;
        if score < 4 && rng.gen_bool(self.config.decimal_percent_probability) {
            base + 0.5
        } else {
            base
        }
    }

    /// Stenosis clause for one lumen with an explicit percentage.
    fn stenosis_clause(
        &mut self,
        lumens: &[&str],
        diameter: f64,
        rng: &mut ChaCha8Rng,
    ) -> Clause {
        let mut c = Clause::new();
        let rev = self.pct_order_rev();
        let mut lumen_ids = Vec::new();
        for (k, lumen) in lumens.iter().enumerate() {
            if k > 0 {
                c.filler(self.pack.conj_and);
            }
            let id = c.entity(EntityType::Lumen, lumen);
            if lumens.len() == 1 && self.want_position() {
                let pos = self.pack.lexicon.position.choose(rng).unwrap().clone();
                let pid = c.entity(EntityType::Position, &pos);
                c.relate(id, RelationLabel::Position, pid);
                self.counts[RelationLabel::Position.index()] += 1;
            }
            lumen_ids.push(id);
        }
        if lumens.len() > 1 {
            c.filler(self.pack.conj_all);
            c.filler(self.pack.shows);
        }
        let pct_surface = format_percent(diameter);
        if rev {
            if rng.gen_bool(0.15) {
                c.filler(self.pack.approx);
            }
            let pid = c.entity(EntityType::Percentage, &pct_surface);
            let sid = c.entity(EntityType::Modifier, self.pack.stenosis);
            c.relate(pid, RelationLabel::PercentageRev, sid);
            self.counts[RelationLabel::PercentageRev.index()] += 1;
            for &l in &lumen_ids {
                c.relate(l, RelationLabel::Modifier, sid);
                self.counts[RelationLabel::Modifier.index()] += 1;
            }
        } else {
            let sid = c.entity(EntityType::Modifier, self.pack.stenosis);
            let pid = c.entity(EntityType::Percentage, &pct_surface);
            c.relate(sid, RelationLabel::PercentageFwd, pid);
            self.counts[RelationLabel::PercentageFwd.index()] += 1;
            for &l in &lumen_ids {
                c.relate(l, RelationLabel::Modifier, sid);
                self.counts[RelationLabel::Modifier.index()] += 1;
            }
        }
        c
    }

    fn occlusion_clause(&mut self, lumen: &str, rng: &mut ChaCha8Rng) -> Clause {
        let mut c = Clause::new();
        let id = c.entity(EntityType::Lumen, lumen);
        if self.want_position() {
            let pos = self.pack.lexicon.position.choose(rng).unwrap().clone();
            let pid = c.entity(EntityType::Position, &pos);
            c.relate(id, RelationLabel::Position, pid);
            self.counts[RelationLabel::Position.index()] += 1;
        }
        let occ = *self.pack.occlusion.choose(rng).unwrap();
        let oid = c.entity(EntityType::Modifier, occ);
        c.relate(id, RelationLabel::Modifier, oid);
        self.counts[RelationLabel::Modifier.index()] += 1;
        c
    }

    fn normal_clause(&mut self, lumen: &str, rng: &mut ChaCha8Rng) -> Clause {
        let mut c = Clause::new();
        let id = c.entity(EntityType::Lumen, lumen);
        let n = *self.pack.normal.choose(rng).unwrap();
        let nid = c.entity(EntityType::Modifier, n);
        c.relate(id, RelationLabel::Modifier, nid);
        self.counts[RelationLabel::Modifier.index()] += 1;
        c
    }

    /// Negated stenosis over one or more conjoined lumens. Three-way
    /// conjunctions always carry per-lumen positions, pushing the first
    /// lumen more than ten tokens away from the modifier it governs.
    fn negated_clause(&mut self, lumens: &[&str], rng: &mut ChaCha8Rng) -> Clause {
        let mut c = Clause::new();
        let with_positions = lumens.len() >= 3 || self.want_position();
        let mut lumen_ids = Vec::new();
        for (k, lumen) in lumens.iter().enumerate() {
            if k > 0 {
                c.filler(if k + 1 == lumens.len() && lumens.len() > 2 {
                    self.pack.conj_and
                } else {
                    self.pack.enum_sep
                });
            }
            let id = c.entity(EntityType::Lumen, lumen);
            if with_positions {
                let pos = self.pack.lexicon.position.choose(rng).unwrap().clone();
                let pid = c.entity(EntityType::Position, &pos);
                c.relate(id, RelationLabel::Position, pid);
                self.counts[RelationLabel::Position.index()] += 1;
            }
            lumen_ids.push(id);
        }
        if lumens.len() > 1 {
            c.filler(self.pack.conj_all);
        }
        let neg = *self.pack.negatives.choose(rng).unwrap();
        let nid = c.entity(EntityType::Negative, neg);
        if lumens.len() >= 3 || rng.gen_bool(0.5) {
            c.filler(self.pack.evident);
        }
        let sid = c.entity(EntityType::Modifier, self.pack.stenosis);
        c.relate(nid, RelationLabel::Negative, sid);
        self.counts[RelationLabel::Negative.index()] += 1;
        for &l in &lumen_ids {
            c.relate(l, RelationLabel::Modifier, sid);
            self.counts[RelationLabel::Modifier.index()] += 1;
        }
        c
    }

    fn build_document(&mut self, id: usize, level: Severity) -> Result<GoldDocument, GenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(id as u64 + 2);

        let total = self.sample_total(level, &mut rng);
        let mut scores = self.plan_scores(total, &mut rng);
        scores.shuffle(&mut rng);

        let mut lumen_pool: Vec<String> = self
            .pack
            .lexicon
            .lumen
            .iter()
            .map(|t| t.term.clone())
            .collect();
        lumen_pool.shuffle(&mut rng);
        let mut next_lumen = 0usize;
        let take_lumen = |pool: &[String], next: &mut usize| -> Option<String> {
            let l = pool.get(*next).cloned();
            *next += 1;
            l
        };

        let mut clauses: Vec<Clause> = Vec::new();
        let mut pct_clauses = 0usize;
        let mut scored_mods = 0usize;

        let mut i = 0;
        while i < scores.len() {
            let lumen = match take_lumen(&lumen_pool, &mut next_lumen) {
                Some(l) => l,
                None => break,
            };
            let score = scores[i];
            let mergeable = i + 1 < scores.len()
                && scores[i + 1] == score
                && score < 4
                && rng.gen_bool(self.config.shared_stenosis_probability);
            if mergeable {
                if let Some(second) = take_lumen(&lumen_pool, &mut next_lumen) {
                    let d = self.sample_diameter(score, &mut rng);
                    clauses.push(self.stenosis_clause(&[&lumen, &second], d, &mut rng));
                    pct_clauses += 1;
                    scored_mods += 2;
                    i += 2;
                    continue;
                }
            }
            if score == 4 && rng.gen_bool(0.6) {
                clauses.push(self.occlusion_clause(&lumen, &mut rng));
                scored_mods += 1;
            } else {
                let d = self.sample_diameter(score, &mut rng);
                clauses.push(self.stenosis_clause(&[&lumen], d, &mut rng));
                pct_clauses += 1;
                scored_mods += 1;
            }
            // occasional second, milder mention of the same lumen
            if score > 1 && rng.gen_bool(0.1) {
                let d = self.sample_diameter(score - 1, &mut rng);
                clauses.push(self.stenosis_clause(&[&lumen], d, &mut rng));
                pct_clauses += 1;
                scored_mods += 1;
            }
            i += 1;
        }

        // Pad with healthy context so the corpus modifier/percentage ratio
        // tracks the class mix.
        let mix = &self.config.class_mix;
        let pct_share = mix[RelationLabel::PercentageFwd.index()]
            + mix[RelationLabel::PercentageRev.index()];
        let mods_per_pct = if pct_share > 0.0 {
            mix[RelationLabel::Modifier.index()] / pct_share
        } else {
            3.0
        };
        let want_mods = ((pct_clauses as f64) * mods_per_pct).round() as usize;
        let mut need = want_mods.saturating_sub(scored_mods);
        if clauses.is_empty() {
            need = rng.gen_range(1..=3);
        }
        while need > 0 {
            let negated = rng.gen_bool(self.config.negation_probability);
            if negated {
                let w = &self.config.conjunction_weights;
                let pick: f64 = rng.gen_range(0.0..w.iter().sum());
                let fan = if pick < w[0] {
                    1
                } else if pick < w[0] + w[1] {
                    2
                } else {
                    3
                };
                let fan = fan.min(lumen_pool.len().saturating_sub(next_lumen));
                if fan == 0 {
                    break;
                }
                let mut group = Vec::new();
                for _ in 0..fan {
                    group.push(take_lumen(&lumen_pool, &mut next_lumen).expect("bounded by fan"));
                }
                let group_refs: Vec<&str> = group.iter().map(String::as_str).collect();
                clauses.push(self.negated_clause(&group_refs, &mut rng));
                need = need.saturating_sub(fan);
            } else {
                let lumen = match take_lumen(&lumen_pool, &mut next_lumen) {
                    Some(l) => l,
                    None => break,
                };
                clauses.push(self.normal_clause(&lumen, &mut rng));
                need = need.saturating_sub(1);
            }
        }

        clauses.shuffle(&mut rng);

        // Group clauses into sentences of one to three clauses.
        let mut sentences: Vec<Vec<Clause>> = Vec::new();
        let mut iter = clauses.into_iter().peekable();
        while iter.peek().is_some() {
            let k = rng.gen_range(1..=3usize);
            let group: Vec<Clause> = iter.by_ref().take(k).collect();
            sentences.push(group);
        }

        let mut gold_sentences = Vec::with_capacity(sentences.len());
        for group in &sentences {
            gold_sentences.push(self.realize_sentence(group)?);
        }
        let text: String = gold_sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("");

        let mut doc = GoldDocument {
            id,
            text,
            sentences: gold_sentences,
            lesions: Vec::new(),
            severity: Severity::Mild,
        };
        let report = score_document(&doc.gold_triples(), &self.pack.lexicon)?;
        doc.lesions = report
            .lesions
            .iter()
            .map(|l| GoldLesion {
                lumen: l.lumen.clone(),
                side: l.side,
                diameter: l.diameter,
            })
            .collect();
        doc.severity = report.level;
        Ok(doc)
    }

    /// Join clause fragments into sentence text, run the real tokenizer and
    /// recognizer over it, and map the intended entities onto token spans.
    fn realize_sentence(&self, clauses: &[Clause]) -> Result<GoldSentence, GenError> {
        let mut fragments: Vec<&str> = Vec::new();
        let mut intended: Vec<(EntityType, &str)> = Vec::new();
        let mut relations: Vec<(usize, RelationLabel, usize)> = Vec::new();
        for (k, c) in clauses.iter().enumerate() {
            if k > 0 {
                fragments.push(self.pack.comma);
            }
            let offset = intended.len();
            fragments.extend(c.fragments.iter().map(String::as_str));
            intended.extend(c.entities.iter().map(|(t, s)| (*t, s.as_str())));
            relations.extend(
                c.relations
                    .iter()
                    .map(|&(a, l, b)| (a + offset, l, b + offset)),
            );
        }
        fragments.push(self.pack.period);
        let text = fragments.join(self.pack.joiner);

        let (tokens, entities) = annotate(&text, &self.pack.lexicon);
        if entities.len() != intended.len()
            || entities
                .iter()
                .zip(&intended)
                .any(|(e, (ty, s))| e.ty != *ty || e.surface != *s)
        {
            return Err(GenError::Template {
                reason: format!(
                    "recognizer disagreed with template on {text:?}: expected {intended:?}, \
                     got {:?}",
                    entities
                        .iter()
                        .map(|e| (e.ty, e.surface.clone()))
                        .collect::<Vec<_>>()
                ),
            });
        }

        let gold_entities: Vec<GoldEntity> = entities
            .iter()
            .map(|e| GoldEntity {
                span: e.span,
                ty: e.ty,
                surface: e.surface.clone(),
            })
            .collect();
        let type_tags = crate::ner::type_tags(tokens.len(), &entities);
        Ok(GoldSentence {
            text,
            tokens: tokens.into_iter().map(|t| t.surface).collect(),
            type_tags,
            entities: gold_entities,
            relations: relations
                .into_iter()
                .map(|(e1, label, e2)| GoldRelation { e1, e2, label })
                .collect(),
        })
    }
}

/// Candidate instances of one gold document: every entity pair of every
/// sentence, labeled from the gold relations (no-relation otherwise).
pub fn document_instances(doc: &GoldDocument) -> Result<Vec<RelationInstance>, GenError> {
    let mut out = Vec::new();
    for s in &doc.sentences {
        let tokens: Vec<crate::ner::Token> = s
            .tokens
            .iter()
            .map(|t| crate::ner::Token {
                surface: t.clone(),
                start: 0,
                end: 0,
            })
            .collect();
        let entities: Vec<crate::ner::Entity> = s
            .entities
            .iter()
            .map(|e| crate::ner::Entity {
                span: e.span,
                ty: e.ty,
                surface: e.surface.clone(),
            })
            .collect();
        let mut labels: std::collections::HashMap<([usize; 2], [usize; 2]), RelationLabel> =
            std::collections::HashMap::new();
        for r in &s.relations {
            let (a, b) = (s.entities[r.e1].span, s.entities[r.e2].span);
            labels.insert((a, b), r.label);
        }
        let mut pairs = generate_pairs(&tokens, &entities)?;
        for p in &mut pairs {
            p.label = Some(
                labels
                    .get(&(p.e1.span, p.e2.span))
                    .copied()
                    .unwrap_or(RelationLabel::NoRelation),
            );
        }
        out.extend(pairs);
    }
    Ok(out)
}

/// Generate a corpus: gold documents plus the derived labeled instance set
/// with its no-relation pool thinned to the target mix.
pub fn generate_corpus(config: &GenConfig) -> Result<Corpus, GenError> {
    config.validate()?;
    let mut generator = Generator::new(config);

    let mix_total: f64 = config.class_mix.iter().sum();
    let norel_share = config.class_mix[RelationLabel::NoRelation.index()] / mix_total;
    let positive_target: Option<usize> = config
        .target_instances
        .map(|n| ((n as f64) * (1.0 - norel_share)).round() as usize);

    let mut documents = Vec::new();
    let mut positives: Vec<RelationInstance> = Vec::new();
    let mut norel_pool: Vec<RelationInstance> = Vec::new();

    let enough = |docs: &Vec<GoldDocument>, positives: &Vec<RelationInstance>| match (
        config.documents,
        positive_target,
    ) {
        (Some(d), _) => docs.len() >= d,
        (None, Some(p)) => positives.len() >= p,
        (None, None) => unreachable!("validated"),
    };

    while !enough(&documents, &positives) {
        let id = documents.len();
        let level = generator.next_level(id);
        let doc = generator.build_document(id, level)?;
        generator.severity_counts[doc.severity.index()] += 1;
        for inst in document_instances(&doc)? {
            match inst.label {
                Some(RelationLabel::NoRelation) => norel_pool.push(inst),
                Some(_) => positives.push(inst),
                None => unreachable!("document_instances labels everything"),
            }
        }
        documents.push(doc);
        if documents.len() > 200_000 {
            return Err(GenError::Template {
                reason: "generation did not converge on the requested size".into(),
            });
        }
    }

    // Thin the no-relation pool to its target share.
    let mut notes = Vec::new();
    let want_norel = if norel_share >= 1.0 {
        norel_pool.len()
    } else {
        ((positives.len() as f64) * norel_share / (1.0 - norel_share)).round() as usize
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let kept_norel = if want_norel >= norel_pool.len() {
        if want_norel > norel_pool.len() {
            notes.push(format!(
                "no-relation pool ({}) smaller than the target ({want_norel}); keeping all",
                norel_pool.len()
            ));
        }
        norel_pool
    } else {
        let mut idx: Vec<usize> = (0..norel_pool.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(want_norel);
        idx.sort_unstable();
        let mut it = norel_pool.into_iter();
        let mut kept = Vec::with_capacity(want_norel);
        let mut cursor = 0usize;
        for i in idx {
            kept.push(it.nth(i - cursor).expect("index in range"));
            cursor = i + 1;
        }
        kept
    };

    let mut instances = positives;
    instances.extend(kept_norel);
    let n_documents = documents.len();

    let counts = label_counts(&instances);
    let total: usize = counts.iter().sum();
    let requested_mix = config.class_mix.map(|m| m / mix_total);
    let achieved_mix = counts.map(|c| c as f64 / total.max(1) as f64);
    let satisfied = notes.is_empty()
        && requested_mix
            .iter()
            .zip(&achieved_mix)
            .all(|(req, got)| req * total as f64 == 0.0 || (got - req).abs() <= 0.1 * req);
    if !satisfied && notes.is_empty() {
        notes.push(format!(
            "achieved mix {achieved_mix:?} misses the requested {requested_mix:?}"
        ));
    }

    Ok(Corpus {
        documents,
        instances,
        report: GenReport {
            documents: n_documents,
            instance_counts: counts,
            requested_mix,
            achieved_mix,
            satisfied,
            notes,
        },
    })
}

/// Write gold documents as JSON lines.
pub fn write_gold_docs(path: &Path, docs: &[GoldDocument]) -> Result<(), GenError> {
    let io_err = |source| GenError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for d in docs {
        serde_json::to_writer(&mut w, d).map_err(|e| GenError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Read a gold-document JSON-lines file.
pub fn read_gold_docs(path: &Path) -> Result<Vec<GoldDocument>, GenError> {
    let file = std::fs::File::open(path).map_err(|source| GenError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| GenError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| GenError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n: usize) -> GenConfig {
        GenConfig {
            target_instances: Some(n),
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_reproduces_the_corpus_exactly() {
        let cfg = small_config(400);
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.instances, b.instances);
        let c = generate_corpus(&GenConfig {
            seed: 99,
            ..small_config(400)
        })
        .unwrap();
        assert_ne!(a.documents, c.documents);
    }

    #[test]
    fn reference_scale_corpus_tracks_the_published_mix() {
        let corpus = generate_corpus(&small_config(4196)).unwrap();
        let counts = corpus.report.instance_counts;
        let total: usize = counts.iter().sum();
        assert!(
            (total as f64 - 4196.0).abs() <= 0.1 * 4196.0,
            "total {total}"
        );
        for (i, &want) in REFERENCE_MIX_COUNTS.iter().enumerate() {
            let want_here = want as f64 / 4196.0 * total as f64;
            let got = counts[i] as f64;
            assert!(
                (got - want_here).abs() <= 0.10 * want_here,
                "class {i}: got {got}, want about {want_here:.0} (counts {counts:?})"
            );
        }
        assert!(corpus.report.satisfied, "{:?}", corpus.report.notes);
    }

    #[test]
    fn gold_severity_is_scorer_consistent_for_every_document() {
        let corpus = generate_corpus(&small_config(800)).unwrap();
        let lex = Lexicon::builtin_chinese();
        for doc in &corpus.documents {
            let report = score_document(&doc.gold_triples(), &lex).unwrap();
            assert_eq!(report.level, doc.severity, "doc {}", doc.id);
            assert_eq!(report.lesions.len(), doc.lesions.len());
            for (got, want) in report.lesions.iter().zip(&doc.lesions) {
                assert_eq!(got.lumen, want.lumen);
                assert_eq!(got.diameter, want.diameter);
            }
        }
    }

    #[test]
    fn ner_recovers_gold_entities_from_raw_text() {
        let corpus = generate_corpus(&small_config(500)).unwrap();
        let lex = Lexicon::builtin_chinese();
        for doc in &corpus.documents {
            for s in &doc.sentences {
                let (tokens, entities) = annotate(&s.text, &lex);
                assert_eq!(
                    tokens.iter().map(|t| t.surface.clone()).collect::<Vec<_>>(),
                    s.tokens
                );
                assert_eq!(entities.len(), s.entities.len());
                for (e, g) in entities.iter().zip(&s.entities) {
                    assert_eq!((e.span, e.ty, e.surface.as_str()),
                               (g.span, g.ty, g.surface.as_str()));
                }
            }
        }
    }

    #[test]
    fn conjunctions_produce_long_range_positive_pairs() {
        let corpus = generate_corpus(&small_config(1500)).unwrap();
        let longest = corpus
            .instances
            .iter()
            .filter(|i| i.label != Some(RelationLabel::NoRelation))
            .map(|i| i.e2.span[0] - i.e1.span[0])
            .max()
            .unwrap();
        assert!(longest > 10, "longest positive span distance {longest}");
    }

    #[test]
    fn severity_mix_is_respected() {
        let corpus = generate_corpus(&small_config(3000)).unwrap();
        let mut counts = [0usize; 3];
        for d in &corpus.documents {
            counts[d.severity.index()] += 1;
        }
        let total: usize = counts.iter().sum();
        for (i, &mix) in [0.725, 0.225, 0.05].iter().enumerate() {
            let got = counts[i] as f64 / total as f64;
            assert!((got - mix).abs() < 0.08, "level {i}: {got} vs {mix}");
        }
    }

    #[test]
    fn ascii_mode_round_trips_too() {
        let cfg = GenConfig {
            surface: SurfaceMode::Ascii,
            ..small_config(300)
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let lex = Lexicon::builtin_ascii();
        for doc in corpus.documents.iter().take(20) {
            for s in &doc.sentences {
                let (tokens, entities) = annotate(&s.text, &lex);
                assert_eq!(
                    tokens.iter().map(|t| t.surface.clone()).collect::<Vec<_>>(),
                    s.tokens
                );
                assert_eq!(entities.len(), s.entities.len());
            }
        }
    }

    #[test]
    fn fixed_document_count_mode_works() {
        let cfg = GenConfig {
            documents: Some(25),
            target_instances: None,
            ..Default::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        assert_eq!(corpus.documents.len(), 25);
        assert!(!corpus.instances.is_empty());
    }

    #[test]
    fn conflicting_size_settings_are_rejected() {
        let cfg = GenConfig {
            documents: Some(5),
            target_instances: Some(100),
            ..Default::default()
        };
        assert!(matches!(
            generate_corpus(&cfg),
            Err(GenError::BadConfig { .. })
        ));
    }

    #[test]
    fn gold_docs_file_round_trips() {
        let corpus = generate_corpus(&small_config(120)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gold.jsonl");
        write_gold_docs(&path, &corpus.documents).unwrap();
        let back = read_gold_docs(&path).unwrap();
        assert_eq!(back, corpus.documents);
    }
}
