//! Relation-classification instances and dataset assembly.
//!
//! A raw annotated sentence becomes one candidate instance per entity pair;
//! the pair splits the sentence into five segments for the encoder. Labels
//! carry the direction, the pair itself is always stored left-to-right.
//! Instance files are the contract between the corpus generator, this
//! module, and the model: one JSON record per line with fields
//! `{tokens, type_tags, e1: {span, type}, e2: {span, type}, label}`
//! (spans are inclusive token index pairs).

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ner::{Entity, EntityType, Token, TypeTag};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("entities {a:?} and {b:?} overlap")]
    OverlappingEntities { a: [usize; 2], b: [usize; 2] },
    #[error("instance has no label; balance_and_split needs labeled data")]
    MissingLabel,
    #[error("{name} must be within [0, 1], got {value}")]
    BadFraction { name: &'static str, value: f64 },
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

/// The six relation classes. The variant order fixes the class index used by
/// the capsule layer: 0 modifier(e1,e2), 1 negative(e2,e1), 2 position(e1,e2),
/// 3 percentage(e1,e2), 4 percentage(e2,e1), 5 no relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationLabel {
    #[serde(rename = "r:modifier(e1,e2)")]
    Modifier,
    #[serde(rename = "r:negative(e2,e1)")]
    Negative,
    #[serde(rename = "r:position(e1,e2)")]
    Position,
    #[serde(rename = "r:percentage(e1,e2)")]
    PercentageFwd,
    #[serde(rename = "r:percentage(e2,e1)")]
    PercentageRev,
    #[serde(rename = "no relation")]
    NoRelation,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 6] = [
        RelationLabel::Modifier,
        RelationLabel::Negative,
        RelationLabel::Position,
        RelationLabel::PercentageFwd,
        RelationLabel::PercentageRev,
        RelationLabel::NoRelation,
    ];

    pub const POSITIVE: [RelationLabel; 5] = [
        RelationLabel::Modifier,
        RelationLabel::Negative,
        RelationLabel::Position,
        RelationLabel::PercentageFwd,
        RelationLabel::PercentageRev,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).expect("member")
    }

    pub fn from_index(i: usize) -> Option<RelationLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationLabel::Modifier => "r:modifier(e1,e2)",
            RelationLabel::Negative => "r:negative(e2,e1)",
            RelationLabel::Position => "r:position(e1,e2)",
            RelationLabel::PercentageFwd => "r:percentage(e1,e2)",
            RelationLabel::PercentageRev => "r:percentage(e2,e1)",
            RelationLabel::NoRelation => "no relation",
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Entity reference inside an instance: inclusive token span plus type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub span: [usize; 2],
    #[serde(rename = "type")]
    pub ty: EntityType,
}

impl From<&Entity> for EntityRef {
    fn from(e: &Entity) -> EntityRef {
        EntityRef {
            span: e.span,
            ty: e.ty,
        }
    }
}

/// One candidate entity pair in its sentence. `e1` always precedes `e2`;
/// direction lives in the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub tokens: Vec<String>,
    pub type_tags: Vec<TypeTag>,
    pub e1: EntityRef,
    pub e2: EntityRef,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<RelationLabel>,
}

impl RelationInstance {
    /// Surface text of an entity, joined from its tokens.
    pub fn surface(&self, e: &EntityRef) -> String {
        self.tokens[e.span[0]..=e.span[1]].join("")
    }

    /// Identity key used to detect duplicates across splits.
    pub fn key(&self) -> (String, [usize; 2], [usize; 2]) {
        (self.tokens.join("\u{1}"), self.e1.span, self.e2.span)
    }
}

/// The five-segment partition induced by an entity pair: left context,
/// entity one, middle context, entity two, right context. Ranges are
/// half-open token index ranges; E1/E3/E5 may be empty, E2/E4 never are.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSplit {
    pub ranges: [Range<usize>; 5],
}

/// Build one unlabeled instance per unordered entity pair of a sentence.
/// Entities must be non-overlapping; the earlier entity becomes `e1`.
pub fn generate_pairs(
    tokens: &[Token],
    entities: &[Entity],
) -> Result<Vec<RelationInstance>, DatasetError> {
    let mut sorted: Vec<&Entity> = entities.iter().collect();
    sorted.sort_by_key(|e| e.span);
    for pair in sorted.windows(2) {
        if pair[0].span[1] >= pair[1].span[0] {
            return Err(DatasetError::OverlappingEntities {
                a: pair[0].span,
                b: pair[1].span,
            });
        }
    }
    let surfaces: Vec<String> = tokens.iter().map(|t| t.surface.clone()).collect();
    let tags = crate::ner::type_tags(tokens.len(), entities);
    let mut out = Vec::with_capacity(sorted.len() * sorted.len().saturating_sub(1) / 2);
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            out.push(RelationInstance {
                tokens: surfaces.clone(),
                type_tags: tags.clone(),
                e1: sorted[i].into(),
                e2: sorted[j].into(),
                label: None,
            });
        }
    }
    Ok(out)
}

/// Split an instance's sentence into its five segments.
pub fn split_segments(instance: &RelationInstance) -> SegmentSplit {
    let t = instance.tokens.len();
    let [s1, e1] = instance.e1.span;
    let [s2, e2] = instance.e2.span;
    debug_assert!(e1 < s2, "e1 must end before e2 starts");
    SegmentSplit {
        ranges: [0..s1, s1..e1 + 1, e1 + 1..s2, s2..e2 + 1, e2 + 1..t],
    }
}

/// Discard a fraction of the no-relation instances, then split the rest into
/// train and test, stratified per label so small classes land on both sides.
/// Same seed, same output, bit for bit.
pub fn balance_and_split(
    instances: Vec<RelationInstance>,
    discard_fraction: f64,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<RelationInstance>, Vec<RelationInstance>), DatasetError> {
    for (name, value) in [
        ("discard_fraction", discard_fraction),
        ("train_fraction", train_fraction),
    ] {
        if !(0.0..=1.0).contains(&value) {
            return Err(DatasetError::BadFraction { name, value });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Uniformly random discard of floor(n * fraction) null instances.
    let mut null_idx: Vec<usize> = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        match inst.label {
            None => return Err(DatasetError::MissingLabel),
            Some(RelationLabel::NoRelation) => null_idx.push(i),
            Some(_) => {}
        }
    }
    null_idx.shuffle(&mut rng);
    let drop_n = (null_idx.len() as f64 * discard_fraction).floor() as usize;
    let dropped: std::collections::HashSet<usize> = null_idx[..drop_n].iter().copied().collect();

    let mut by_label: Vec<Vec<RelationInstance>> = (0..RelationLabel::ALL.len())
        .map(|_| Vec::new())
        .collect();
    for (i, inst) in instances.into_iter().enumerate() {
        if !dropped.contains(&i) {
            by_label[inst.label.expect("checked above").index()].push(inst);
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut members in by_label {
        members.shuffle(&mut rng);
        let n_train = (members.len() as f64 * train_fraction + 0.5).floor() as usize;
        let rest = members.split_off(n_train.min(members.len()));
        train.extend(members);
        test.extend(rest);
    }
    Ok((train, test))
}

/// Write instances as JSON lines.
pub fn write_instances(path: &Path, instances: &[RelationInstance]) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for inst in instances {
        serde_json::to_writer(&mut w, inst).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Read a JSON-lines instance file.
pub fn read_instances(path: &Path) -> Result<Vec<RelationInstance>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

/// Count instances per label, indexed like [`RelationLabel::ALL`].
pub fn label_counts(instances: &[RelationInstance]) -> [usize; 6] {
    let mut counts = [0usize; 6];
    for inst in instances {
        if let Some(l) = inst.label {
            counts[l.index()] += 1;
        }
    }
    counts
}
