//! Severity grading from extracted relations.
//!
//! For every lumen mentioned in a document the scorer follows its modifier
//! links, drops negated findings, resolves stenosis percentages, and keeps
//! the maximum diameter. Lesion scores follow the four-band grading of
//! luminal narrowing (1-49, 50-74, 75-99, 100 percent), the document score
//! is their sum, and the three severity levels cut at totals of 7 and 14.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{RelationInstance, RelationLabel};
use crate::ner::{parse_percentage, EntityType, Lexicon, ModifierKind, Side};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("percentage entity {surface:?} is outside (0, 100]")]
    PercentageOutOfRange { surface: String },
    #[error("lumen {surface:?} is not in the lexicon, cannot resolve its side")]
    UnknownLumen { surface: String },
    #[error("modifier {surface:?} is not in the lexicon, cannot resolve its kind")]
    UnknownModifier { surface: String },
    #[error("diameter {diameter} is outside [0, 100]")]
    DiameterOutOfRange { diameter: f64 },
}

/// One entity argument of an extracted relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelEntity {
    pub span: [usize; 2],
    #[serde(rename = "type")]
    pub ty: EntityType,
    pub surface: String,
}

/// One extracted relation within a sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelTriple {
    pub e1: RelEntity,
    pub e2: RelEntity,
    pub label: RelationLabel,
}

impl RelTriple {
    pub fn from_instance(instance: &RelationInstance, label: RelationLabel) -> RelTriple {
        let mk = |e: &crate::dataset::EntityRef| RelEntity {
            span: e.span,
            ty: e.ty,
            surface: instance.surface(e),
        };
        RelTriple {
            e1: mk(&instance.e1),
            e2: mk(&instance.e2),
            label,
        }
    }
}

/// A relation rendered into a lesion's evidence list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub e1: String,
    pub label: RelationLabel,
    pub e2: String,
}

impl EvidenceItem {
    fn of(t: &RelTriple) -> EvidenceItem {
        EvidenceItem {
            e1: t.e1.surface.clone(),
            label: t.label,
            e2: t.e2.surface.clone(),
        }
    }
}

/// Maximum observed stenosis for one canonical lumen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub lumen: String,
    pub side: Side,
    pub diameter: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub evidence: Vec<EvidenceItem>,
}

/// Lesion with its grading attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLesion {
    pub lumen: String,
    pub side: Side,
    pub diameter: f64,
    pub score: u32,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub evidence: Vec<EvidenceItem>,
}

/// The three severity levels over the total score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Mild, Severity::Moderate, Severity::Severe];

    pub fn index(self) -> usize {
        match self {
            Severity::Mild => 0,
            Severity::Moderate => 1,
            Severity::Severe => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::Severe => "severe",
        }
    }
}

impl std::fmt::Display for Severity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full grading of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityReport {
    pub lesions: Vec<ScoredLesion>,
    pub left_total: u32,
    pub right_total: u32,
    pub total: u32,
    pub level: Severity,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

/// Key identifying one modifier mention within one sentence.
type ModifierKey = (usize, [usize; 2]);

/// Reduce a document's extracted relations (grouped by sentence) to one
/// record per canonical lumen holding its maximum stenosis diameter.
///
/// A modifier negated by a negative relation contributes nothing; occlusion
/// contributes 100; normal contributes 0; stenosis contributes its linked
/// percentage, or 0 with a warning when no percentage is linked.
pub fn aggregate_lesions(
    sentences: &[Vec<RelTriple>],
    lexicon: &Lexicon,
) -> Result<(Vec<LesionRecord>, Vec<String>), ScoreError> {
    use std::collections::{HashMap, HashSet};

    let mut negated: HashSet<ModifierKey> = HashSet::new();
    let mut percents: HashMap<ModifierKey, Vec<(f64, &RelTriple)>> = HashMap::new();
    for (s, triples) in sentences.iter().enumerate() {
        for t in triples {
            match t.label {
                RelationLabel::Negative => {
                    negated.insert((s, t.e2.span));
                }
                // Percentage links with the wrong argument types (possible in
                // model output) are ignored rather than failing the document.
                RelationLabel::PercentageFwd
                    if t.e1.ty == EntityType::Modifier && t.e2.ty == EntityType::Percentage =>
                {
                    // modifier first: <stenosis, percentage>
                    let v = percentage_value(&t.e2.surface)?;
                    percents.entry((s, t.e1.span)).or_default().push((v, t));
                }
                RelationLabel::PercentageRev
                    if t.e1.ty == EntityType::Percentage && t.e2.ty == EntityType::Modifier =>
                {
                    // percentage first: <percentage, stenosis>
                    let v = percentage_value(&t.e1.surface)?;
                    percents.entry((s, t.e2.span)).or_default().push((v, t));
                }
                _ => {}
            }
        }
    }

    // One record per canonical lumen term, in first-mention order.
    let mut order: Vec<String> = Vec::new();
    let mut records: HashMap<String, LesionRecord> = HashMap::new();
    let mut warnings = Vec::new();

    let touch = |surface: &str,
                     records: &mut HashMap<String, LesionRecord>,
                     order: &mut Vec<String>|
     -> Result<(), ScoreError> {
        if !records.contains_key(surface) {
            let side = lexicon
                .lumen_side(surface)
                .ok_or_else(|| ScoreError::UnknownLumen {
                    surface: surface.to_string(),
                })?;
            order.push(surface.to_string());
            records.insert(
                surface.to_string(),
                LesionRecord {
                    lumen: surface.to_string(),
                    side,
                    diameter: 0.0,
                    evidence: Vec::new(),
                },
            );
        }
        Ok(())
    };

    for (s, triples) in sentences.iter().enumerate() {
        for t in triples {
            // Any lumen named by a positive relation shows up in the report.
            for e in [&t.e1, &t.e2] {
                if e.ty == EntityType::Lumen && t.label != RelationLabel::NoRelation {
                    touch(&e.surface, &mut records, &mut order)?;
                }
            }
            if t.label == RelationLabel::Position && t.e1.ty == EntityType::Lumen {
                let rec = records.get_mut(&t.e1.surface).expect("touched above");
                rec.evidence.push(EvidenceItem::of(t));
            }
            if t.label != RelationLabel::Modifier {
                continue;
            }
            if t.e1.ty != EntityType::Lumen || t.e2.ty != EntityType::Modifier {
                continue;
            }
            let lumen = &t.e1.surface;
            let modifier = &t.e2;
            let kind = lexicon.modifier_kind(&modifier.surface).ok_or_else(|| {
                ScoreError::UnknownModifier {
                    surface: modifier.surface.clone(),
                }
            })?;
            let key: ModifierKey = (s, modifier.span);
            let rec = records.get_mut(lumen).expect("touched above");
            if negated.contains(&key) {
                continue;
            }
            rec.evidence.push(EvidenceItem::of(t));
            let contribution = match kind {
                ModifierKind::Normal => 0.0,
                ModifierKind::Occlusion => 100.0,
                ModifierKind::Stenosis => match percents.get(&key) {
                    Some(linked) => {
                        let mut best = 0.0f64;
                        for (v, triple) in linked {
                            rec.evidence.push(EvidenceItem::of(triple));
                            best = best.max(*v);
                        }
                        best
                    }
                    None => {
                        warnings.push(format!(
                            "stenosis finding for {lumen} has no linked percentage; \
                             contributing 0"
                        ));
                        0.0
                    }
                },
            };
            rec.diameter = rec.diameter.max(contribution);
        }
    }

    let lesions = order
        .into_iter()
        .map(|k| records.remove(&k).expect("ordered key"))
        .collect();
    Ok((lesions, warnings))
}

fn percentage_value(surface: &str) -> Result<f64, ScoreError> {
    let v = parse_percentage(surface).ok_or_else(|| ScoreError::PercentageOutOfRange {
        surface: surface.to_string(),
    })?;
    if v > 0.0 && v <= 100.0 {
        Ok(v)
    } else {
        Err(ScoreError::PercentageOutOfRange {
            surface: surface.to_string(),
        })
    }
}

/// Lesion score of one diameter. Bands are half-open so fractional
/// diameters grade like their integer floor: [0,1) -> 0, [1,50) -> 1,
/// [50,75) -> 2, [75,100) -> 3, exactly 100 -> 4.
pub fn lesion_score(diameter: f64) -> Result<u32, ScoreError> {
    if !(0.0..=100.0).contains(&diameter) || !diameter.is_finite() {
        return Err(ScoreError::DiameterOutOfRange { diameter });
    }
    Ok(if diameter < 1.0 {
        0
    } else if diameter < 50.0 {
        1
    } else if diameter < 75.0 {
        2
    } else if diameter < 100.0 {
        3
    } else {
        4
    })
}

/// Severity level of a total score: mild up to 7, moderate 8 to 14,
/// severe at 15 and over.
pub fn classify_total(total: u32) -> Severity {
    if total <= 7 {
        Severity::Mild
    } else if total <= 14 {
        Severity::Moderate
    } else {
        Severity::Severe
    }
}

/// Score every lesion, total per side and overall, and classify.
pub fn total_and_classify(lesions: Vec<LesionRecord>) -> Result<SeverityReport, ScoreError> {
    let mut scored = Vec::with_capacity(lesions.len());
    let (mut left, mut right) = (0u32, 0u32);
    for l in lesions {
        let score = lesion_score(l.diameter)?;
        match l.side {
            Side::Left => left += score,
            Side::Right => right += score,
        }
        scored.push(ScoredLesion {
            lumen: l.lumen,
            side: l.side,
            diameter: l.diameter,
            score,
            evidence: l.evidence,
        });
    }
    let total = left + right;
    Ok(SeverityReport {
        lesions: scored,
        left_total: left,
        right_total: right,
        total,
        level: classify_total(total),
        warnings: Vec::new(),
    })
}

/// Aggregate and classify one document in a single step.
pub fn score_document(
    sentences: &[Vec<RelTriple>],
    lexicon: &Lexicon,
) -> Result<SeverityReport, ScoreError> {
    let (lesions, warnings) = aggregate_lesions(sentences, lexicon)?;
    let mut report = total_and_classify(lesions)?;
    report.warnings = warnings;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ner::annotate;

    fn ent(span: [usize; 2], ty: EntityType, surface: &str) -> RelEntity {
        RelEntity {
            span,
            ty,
            surface: surface.to_string(),
        }
    }

    fn triple(e1: RelEntity, label: RelationLabel, e2: RelEntity) -> RelTriple {
        RelTriple { e1, e2, label }
    }

    /// The illustrative report sentence annotated with its six gold
    /// relations: one 40% stenosis of the LAD plus a negated stenosis shared
    /// by two right-side branches.
    fn fig1_relations() -> Vec<Vec<RelTriple>> {
        let lex = Lexicon::builtin_chinese();
        let (tokens, entities) =
            annotate("左前降支中段40%狭窄，右前降支、右回旋支未见明显狭窄。", &lex);
        assert_eq!(entities.len(), 8);
        let e = |i: usize| {
            ent(
                entities[i].span,
                entities[i].ty,
                &tokens[entities[i].span[0]].surface,
            )
        };
        vec![vec![
            triple(e(0), RelationLabel::Modifier, e(3)),
            triple(e(0), RelationLabel::Position, e(1)),
            triple(e(2), RelationLabel::PercentageRev, e(3)),
            triple(e(4), RelationLabel::Modifier, e(7)),
            triple(e(5), RelationLabel::Modifier, e(7)),
            triple(e(6), RelationLabel::Negative, e(7)),
        ]]
    }

    #[test]
    fn fig1_document_scores_total_one_mild() {
        let lex = Lexicon::builtin_chinese();
        let report = score_document(&fig1_relations(), &lex).unwrap();
        let by_name: std::collections::HashMap<&str, &ScoredLesion> = report
            .lesions
            .iter()
            .map(|l| (l.lumen.as_str(), l))
            .collect();
        assert_eq!(by_name["左前降支"].diameter, 40.0);
        assert_eq!(by_name["左前降支"].score, 1);
        assert_eq!(by_name["右前降支"].diameter, 0.0);
        assert_eq!(by_name["右回旋支"].diameter, 0.0);
        assert_eq!(report.left_total, 1);
        assert_eq!(report.right_total, 0);
        assert_eq!(report.total, 1);
        assert_eq!(report.level, Severity::Mild);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn repeated_mentions_keep_the_maximum() {
        let mk = |pct: &str, start: usize| {
            vec![
                triple(
                    ent([start, start], EntityType::Lumen, "左前降支"),
                    RelationLabel::Modifier,
                    ent([start + 2, start + 2], EntityType::Modifier, "狭窄"),
                ),
                triple(
                    ent([start + 1, start + 1], EntityType::Percentage, pct),
                    RelationLabel::PercentageRev,
                    ent([start + 2, start + 2], EntityType::Modifier, "狭窄"),
                ),
            ]
        };
        let lex = Lexicon::builtin_chinese();
        let sentences = vec![mk("30%", 0), mk("80%", 0)];
        let (lesions, _) = aggregate_lesions(&sentences, &lex).unwrap();
        assert_eq!(lesions.len(), 1);
        assert_eq!(lesions[0].diameter, 80.0);
    }

    #[test]
    fn occlusion_without_percentage_is_total_obstruction() {
        let lex = Lexicon::builtin_chinese();
        let sentences = vec![vec![triple(
            ent([0, 0], EntityType::Lumen, "右冠状动脉"),
            RelationLabel::Modifier,
            ent([1, 1], EntityType::Modifier, "闭塞"),
        )]];
        let report = score_document(&sentences, &lex).unwrap();
        assert_eq!(report.lesions[0].diameter, 100.0);
        assert_eq!(report.lesions[0].score, 4);
        assert_eq!(report.right_total, 4);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn stenosis_without_percentage_warns_and_scores_zero() {
        let lex = Lexicon::builtin_chinese();
        let sentences = vec![vec![triple(
            ent([0, 0], EntityType::Lumen, "左主干"),
            RelationLabel::Modifier,
            ent([1, 1], EntityType::Modifier, "狭窄"),
        )]];
        let report = score_document(&sentences, &lex).unwrap();
        assert_eq!(report.lesions[0].diameter, 0.0);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn out_of_range_percentage_names_the_entity() {
        let lex = Lexicon::builtin_chinese();
        let sentences = vec![vec![
            triple(
                ent([0, 0], EntityType::Lumen, "左主干"),
                RelationLabel::Modifier,
                ent([2, 2], EntityType::Modifier, "狭窄"),
            ),
            triple(
                ent([1, 1], EntityType::Percentage, "150%"),
                RelationLabel::PercentageRev,
                ent([2, 2], EntityType::Modifier, "狭窄"),
            ),
        ]];
        let err = aggregate_lesions(&sentences, &lex).unwrap_err();
        assert!(err.to_string().contains("150%"), "{err}");
    }

    #[test]
    fn lesion_score_matches_the_banding_for_every_integer_diameter() {
        for d in 0..=100u32 {
            let want = match d {
                0 => 0,
                1..=49 => 1,
                50..=74 => 2,
                75..=99 => 3,
                100 => 4,
                _ => unreachable!(),
            };
            assert_eq!(lesion_score(d as f64).unwrap(), want, "diameter {d}");
        }
    }

    #[test]
    fn fractional_diameters_follow_half_open_bands() {
        assert_eq!(lesion_score(0.5).unwrap(), 0);
        assert_eq!(lesion_score(49.5).unwrap(), 1);
        assert_eq!(lesion_score(74.9).unwrap(), 2);
        assert_eq!(lesion_score(99.9).unwrap(), 3);
        assert!(lesion_score(100.1).is_err());
        assert!(lesion_score(-0.1).is_err());
    }

    #[test]
    fn severity_thresholds_are_exact() {
        assert_eq!(classify_total(0), Severity::Mild);
        assert_eq!(classify_total(7), Severity::Mild);
        assert_eq!(classify_total(8), Severity::Moderate);
        assert_eq!(classify_total(14), Severity::Moderate);
        assert_eq!(classify_total(15), Severity::Severe);
    }

    #[test]
    fn boundary_score_combinations() {
        // {1} -> 1 mild; {4,4} -> 8 moderate; {4,4,4,3} -> 15 severe.
        let mk = |diameters: &[f64]| {
            let lumens = ["左主干", "左前降支", "左回旋支", "右冠状动脉"];
            let lex = Lexicon::builtin_chinese();
            let lesions: Vec<LesionRecord> = diameters
                .iter()
                .zip(lumens)
                .map(|(&diameter, lumen)| LesionRecord {
                    lumen: lumen.to_string(),
                    side: lex.lumen_side(lumen).unwrap(),
                    diameter,
                    evidence: Vec::new(),
                })
                .collect();
            total_and_classify(lesions).unwrap()
        };
        assert_eq!(mk(&[40.0]).level, Severity::Mild);
        let two = mk(&[100.0, 100.0]);
        assert_eq!((two.total, two.level), (8, Severity::Moderate));
        let four = mk(&[100.0, 100.0, 100.0, 80.0]);
        assert_eq!((four.total, four.level), (15, Severity::Severe));
    }

    #[test]
    fn negation_dominance_removes_exactly_that_contribution() {
        let lex = Lexicon::builtin_chinese();
        let base = vec![
            triple(
                ent([0, 0], EntityType::Lumen, "左前降支"),
                RelationLabel::Modifier,
                ent([2, 2], EntityType::Modifier, "狭窄"),
            ),
            triple(
                ent([1, 1], EntityType::Percentage, "80%"),
                RelationLabel::PercentageRev,
                ent([2, 2], EntityType::Modifier, "狭窄"),
            ),
        ];
        let before = score_document(&[base.clone()], &lex).unwrap();
        assert_eq!(before.total, 3);

        let mut negated = base;
        negated.push(triple(
            ent([3, 3], EntityType::Negative, "未见"),
            RelationLabel::Negative,
            ent([2, 2], EntityType::Modifier, "狭窄"),
        ));
        let after = score_document(&[negated], &lex).unwrap();
        assert_eq!(after.total, 0);
        assert_eq!(after.lesions.len(), 1);
        assert_eq!(after.level, Severity::Mild);
    }

    #[test]
    fn monotone_in_any_diameter() {
        let lex = Lexicon::builtin_chinese();
        let mut prev_total = 0;
        let mut prev_level = Severity::Mild;
        for d in 0..=100 {
            let lesions = vec![
                LesionRecord {
                    lumen: "左主干".into(),
                    side: Side::Left,
                    diameter: d as f64,
                    evidence: vec![],
                },
                LesionRecord {
                    lumen: "右冠状动脉".into(),
                    side: lex.lumen_side("右冠状动脉").unwrap(),
                    diameter: 100.0,
                    evidence: vec![],
                },
            ];
            let r = total_and_classify(lesions).unwrap();
            assert!(r.total >= prev_total);
            assert!(r.level >= prev_level);
            prev_total = r.total;
            prev_level = r.level;
        }
    }
}
