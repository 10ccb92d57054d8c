//! Precision/recall/F1 evaluation for relation extraction and severity
//! classification. All values are percentages in [0, 100].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::RelationLabel;
use crate::gensini::Severity;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction/gold length mismatch: {predictions} vs {gold}")]
    LengthMismatch { predictions: usize, gold: usize },
}

/// Precision, recall, and F1 (percent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

fn ratio(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        100.0 * num as f64 / denom as f64
    }
}

/// Scores for one class along with its raw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold instances of this class.
    pub support: usize,
    /// Predicted instances of this class.
    pub predicted: usize,
}

/// Relation-extraction evaluation. The micro average pools true/false
/// positives over the five positive classes only; no-relation is the null
/// class and is reported per-class but excluded from the averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMetrics {
    pub per_class: Vec<ClassMetrics>,
    pub micro: Prf,
    pub macro_avg: Prf,
    pub total: usize,
}

pub fn evaluate_relations(
    predictions: &[RelationLabel],
    gold: &[RelationLabel],
) -> Result<RelationMetrics, MetricsError> {
    if predictions.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let n = RelationLabel::ALL.len();
    let mut tp = vec![0usize; n];
    let mut fp = vec![0usize; n];
    let mut fn_ = vec![0usize; n];
    for (&p, &g) in predictions.iter().zip(gold) {
        if p == g {
            tp[p.index()] += 1;
        } else {
            fp[p.index()] += 1;
            fn_[g.index()] += 1;
        }
    }

    let per_class: Vec<ClassMetrics> = RelationLabel::ALL
        .iter()
        .map(|&l| {
            let i = l.index();
            let prf = Prf::from_counts(tp[i], fp[i], fn_[i]);
            ClassMetrics {
                label: l.name().to_string(),
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                support: tp[i] + fn_[i],
                predicted: tp[i] + fp[i],
            }
        })
        .collect();

    let pos: Vec<usize> = RelationLabel::POSITIVE.iter().map(|l| l.index()).collect();
    let pooled = Prf::from_counts(
        pos.iter().map(|&i| tp[i]).sum(),
        pos.iter().map(|&i| fp[i]).sum(),
        pos.iter().map(|&i| fn_[i]).sum(),
    );
    let macro_avg = {
        let k = pos.len() as f64;
        let sum = |f: fn(&ClassMetrics) -> f64| pos.iter().map(|&i| f(&per_class[i])).sum::<f64>();
        Prf {
            precision: sum(|c| c.precision) / k,
            recall: sum(|c| c.recall) / k,
            f1: sum(|c| c.f1) / k,
        }
    };

    Ok(RelationMetrics {
        per_class,
        micro: pooled,
        macro_avg,
        total: gold.len(),
    })
}

/// Severity evaluation: per-level scores, overall accuracy, and the 3x3
/// confusion matrix (rows gold, columns predicted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityMetrics {
    pub per_level: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub confusion: [[usize; 3]; 3],
    pub total: usize,
}

pub fn evaluate_severity(
    predictions: &[Severity],
    gold: &[Severity],
) -> Result<SeverityMetrics, MetricsError> {
    if predictions.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let mut confusion = [[0usize; 3]; 3];
    for (&p, &g) in predictions.iter().zip(gold) {
        confusion[g.index()][p.index()] += 1;
    }
    let per_level: Vec<ClassMetrics> = Severity::ALL
        .iter()
        .map(|&level| {
            let i = level.index();
            let tp = confusion[i][i];
            let support: usize = confusion[i].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[i]).sum();
            let prf = Prf::from_counts(tp, predicted - tp, support - tp);
            ClassMetrics {
                label: level.name().to_string(),
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                support,
                predicted,
            }
        })
        .collect();
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
    Ok(SeverityMetrics {
        per_level,
        accuracy: ratio(correct, gold.len()),
        confusion,
        total: gold.len(),
    })
}

/// Render relation metrics as an aligned text table.
pub fn relation_table(m: &RelationMetrics) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<22} {:>9} {:>9} {:>9} {:>9}\n",
        "class", "P", "R", "F1", "support"
    ));
    for c in &m.per_class {
        out.push_str(&format!(
            "{:<22} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
            c.label, c.precision, c.recall, c.f1, c.support
        ));
    }
    out.push_str(&format!(
        "{:<22} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
        "micro (positive)", m.micro.precision, m.micro.recall, m.micro.f1, m.total
    ));
    out.push_str(&format!(
        "{:<22} {:>9.2} {:>9.2} {:>9.2}\n",
        "macro (positive)", m.macro_avg.precision, m.macro_avg.recall, m.macro_avg.f1
    ));
    out
}

/// Render severity metrics as an aligned text table.
pub fn severity_table(m: &SeverityMetrics) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:>9} {:>9} {:>9} {:>9}\n",
        "level", "P", "R", "F1", "support"
    ));
    for c in &m.per_level {
        out.push_str(&format!(
            "{:<20} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
            c.label, c.precision, c.recall, c.f1, c.support
        ));
    }
    out.push_str(&format!("overall accuracy     {:>9.2}\n", m.accuracy));
    out
}
