//! End-to-end severity classification: entity recognition, candidate pair
//! generation, relation prediction, and Gensini-style grading, per document.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{generate_pairs, DatasetError, RelationLabel};
use crate::gensini::{score_document, RelTriple, ScoreError, SeverityReport};
use crate::model::{ModelError, TrainedModel};
use crate::ner::{annotate, Lexicon};
use crate::syngen::GoldDocument;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// A severity report tagged with its document id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentReport {
    pub id: usize,
    #[serde(flatten)]
    pub report: SeverityReport,
    /// Tokens that fell back to the unknown embedding row.
    #[serde(default)]
    pub oov_tokens: usize,
}

/// How relations are obtained for scoring.
pub enum RelationSource<'a> {
    /// Run the model over every candidate entity pair.
    Model(&'a TrainedModel),
    /// Bypass the model and score the gold relations (oracle mode).
    Gold,
}

/// Classify one raw text: split nothing (the text is one document), annotate
/// each sentence, predict relations for all candidate pairs, and grade.
///
/// Sentences are the newline/period-delimited units the tokenizer sees;
/// here the whole text is annotated per line.
pub fn classify_text(
    id: usize,
    text: &str,
    model: &TrainedModel,
    lexicon: &Lexicon,
) -> Result<DocumentReport, PipelineError> {
    let mut sentences = Vec::new();
    let mut oov_total = 0;
    for piece in split_sentences(text) {
        let (tokens, entities) = annotate(piece, lexicon);
        let mut triples = Vec::new();
        for mut inst in generate_pairs(&tokens, &entities)? {
            let prediction = model.predict(&inst)?;
            oov_total += prediction.oov_tokens;
            if prediction.label != RelationLabel::NoRelation {
                inst.label = Some(prediction.label);
                triples.push(RelTriple::from_instance(&inst, prediction.label));
            }
        }
        sentences.push(triples);
    }
    let report = score_document(&sentences, lexicon)?;
    Ok(DocumentReport {
        id,
        report,
        oov_tokens: oov_total,
    })
}

/// Grade one gold document, either through the model or straight from its
/// gold relations.
pub fn classify_gold_document(
    doc: &GoldDocument,
    source: &RelationSource<'_>,
    lexicon: &Lexicon,
) -> Result<DocumentReport, PipelineError> {
    match source {
        RelationSource::Gold => {
            let report = score_document(&doc.gold_triples(), lexicon)?;
            Ok(DocumentReport {
                id: doc.id,
                report,
                oov_tokens: 0,
            })
        }
        RelationSource::Model(model) => {
            let mut sentences = Vec::new();
            let mut oov_total = 0;
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
                let mut triples = Vec::new();
                for mut inst in generate_pairs(&tokens, &entities)? {
                    let prediction = model.predict(&inst)?;
                    oov_total += prediction.oov_tokens;
                    if prediction.label != RelationLabel::NoRelation {
                        inst.label = Some(prediction.label);
                        triples.push(RelTriple::from_instance(&inst, prediction.label));
                    }
                }
                sentences.push(triples);
            }
            let report = score_document(&sentences, lexicon)?;
            Ok(DocumentReport {
                id: doc.id,
                report,
                oov_tokens: oov_total,
            })
        }
    }
}

/// Grade a batch of gold documents, fanned out across threads on a frozen
/// model. Output order matches input order.
pub fn classify_gold_documents(
    docs: &[GoldDocument],
    source: &RelationSource<'_>,
    lexicon: &Lexicon,
) -> Result<Vec<DocumentReport>, PipelineError> {
    docs.par_iter()
        .map(|d| classify_gold_document(d, source, lexicon))
        .collect()
}

/// Sentence boundaries: split on the CJK or ASCII full stop, keeping the
/// delimiter with its sentence.
fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if c == '。' || c == '.' || c == '\n' {
            let end = i + c.len_utf8();
            if text[start..end].trim().len() > 1 {
                out.push(&text[start..end]);
            }
            start = end;
        }
    }
    if text[start..].trim().len() > 1 {
        out.push(&text[start..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gensini::Severity;
    use crate::syngen::{generate_corpus, GenConfig};

    #[test]
    fn oracle_mode_reproduces_gold_severity() {
        let corpus = generate_corpus(&GenConfig {
            target_instances: Some(300),
            ..Default::default()
        })
        .unwrap();
        let lex = Lexicon::builtin_chinese();
        let reports =
            classify_gold_documents(&corpus.documents, &RelationSource::Gold, &lex).unwrap();
        assert_eq!(reports.len(), corpus.documents.len());
        for (r, d) in reports.iter().zip(&corpus.documents) {
            assert_eq!(r.report.level, d.severity, "doc {}", d.id);
            assert_eq!(r.id, d.id);
        }
    }

    #[test]
    fn raw_text_classification_runs_the_whole_chain() {
        // An untrained model still produces a deterministic report.
        let corpus = generate_corpus(&GenConfig {
            target_instances: Some(150),
            ..Default::default()
        })
        .unwrap();
        let lex = Lexicon::builtin_chinese();
        let cfg = crate::model::ModelConfig {
            word_dim: 8,
            type_dim: 8,
            bi_hidden: 4,
            uni_hidden: 8,
            capsule_dim: 4,
            ..Default::default()
        };
        let vocab = crate::model::Vocab::from_instances(&corpus.instances);
        let model = TrainedModel::init(cfg, vocab).unwrap();
        let doc = &corpus.documents[0];
        let a = classify_text(doc.id, &doc.text, &model, &lex).unwrap();
        let b = classify_text(doc.id, &doc.text, &model, &lex).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_input_is_an_empty_report_set() {
        let lex = Lexicon::builtin_chinese();
        let reports = classify_gold_documents(&[], &RelationSource::Gold, &lex).unwrap();
        assert!(reports.is_empty());
    }

    #[test]
    fn split_sentences_keeps_delimiters() {
        let parts = split_sentences("左主干正常。右冠状动脉闭塞。");
        assert_eq!(parts.len(), 2);
        assert!(parts[0].ends_with('。'));
    }

    #[test]
    fn gold_mode_is_self_consistent_on_severe_documents() {
        let corpus = generate_corpus(&GenConfig {
            target_instances: Some(600),
            severity_mix: [0.1, 0.2, 0.7],
            ..Default::default()
        })
        .unwrap();
        let lex = Lexicon::builtin_chinese();
        let reports =
            classify_gold_documents(&corpus.documents, &RelationSource::Gold, &lex).unwrap();
        let severe = reports
            .iter()
            .filter(|r| r.report.level == Severity::Severe)
            .count();
        assert!(severe > 0);
        for (r, d) in reports.iter().zip(&corpus.documents) {
            assert_eq!(r.report.level, d.severity);
        }
    }
}
