//! The whole chain at demonstration scale: generate a corpus, train the
//! relation model, classify held-out documents end to end, and score both
//! the relations and the final severity levels.
//!
//!     cargo run --release --example full_pipeline

use rcn::dataset::balance_and_split;
use rcn::gensini::Severity;
use rcn::metrics::{evaluate_relations, evaluate_severity, relation_table, severity_table};
use rcn::model::{train, ModelConfig};
use rcn::ner::Lexicon;
use rcn::pipeline::{classify_gold_documents, RelationSource};
use rcn::syngen::{generate_corpus, GenConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate_corpus(&GenConfig {
        target_instances: Some(1200),
        seed: 3,
        ..Default::default()
    })?;
    let (train_set, test_set) = balance_and_split(corpus.instances, 0.0, 0.7, 7)?;
    let eval_docs = generate_corpus(&GenConfig {
        documents: Some(60),
        target_instances: None,
        seed: 1003,
        ..Default::default()
    })?;

    let config = ModelConfig {
        epochs: 5,
        ..Default::default()
    };
    println!("training on {} instances...", train_set.len());
    let (model, log) = train(&train_set, Some(&test_set), &config)?;
    let last = log.last().unwrap();
    println!(
        "final epoch: loss {:.2}, train_f1 {:.2}, dev_f1 {:.2}\n",
        last.loss,
        last.train_f1,
        last.dev_f1.unwrap()
    );

    // Relation-level evaluation on the held-out instances.
    let gold: Vec<_> = test_set.iter().map(|i| i.label.unwrap()).collect();
    let pred: Vec<_> = model
        .predict_batch(&test_set)?
        .into_iter()
        .map(|p| p.label)
        .collect();
    print!("{}", relation_table(&evaluate_relations(&pred, &gold)?));

    // Document-level severity with predicted relations.
    let lexicon = Lexicon::builtin_chinese();
    let reports = classify_gold_documents(
        &eval_docs.documents,
        &RelationSource::Model(&model),
        &lexicon,
    )?;
    let pred_levels: Vec<Severity> = reports.iter().map(|r| r.report.level).collect();
    let gold_levels: Vec<Severity> = eval_docs.documents.iter().map(|d| d.severity).collect();
    println!();
    print!("{}", severity_table(&evaluate_severity(&pred_levels, &gold_levels)?));

    // The oracle route (gold relations, no model) is exact by construction.
    let oracle = classify_gold_documents(&eval_docs.documents, &RelationSource::Gold, &lexicon)?;
    let exact = oracle
        .iter()
        .zip(&eval_docs.documents)
        .filter(|(r, d)| r.report.level == d.severity)
        .count();
    println!(
        "\noracle severity matches gold on {exact}/{} documents",
        eval_docs.documents.len()
    );
    Ok(())
}
