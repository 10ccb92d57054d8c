//! Fabricate a gold-annotated corpus and inspect what it contains.
//!
//!     cargo run --release --example generate_corpus

use rcn::dataset::RelationLabel;
use rcn::syngen::{generate_corpus, GenConfig};

fn main() -> anyhow::Result<()> {
    let config = GenConfig {
        target_instances: Some(1000),
        seed: 5,
        ..Default::default()
    };
    let corpus = generate_corpus(&config)?;

    println!(
        "{} documents, {} instances",
        corpus.report.documents,
        corpus.instances.len()
    );
    println!("relation counts:");
    for (label, count) in RelationLabel::ALL.iter().zip(corpus.report.instance_counts) {
        println!("  {:<22} {count}", label.name());
    }
    println!("mix satisfied: {}\n", corpus.report.satisfied);

    let doc = &corpus.documents[0];
    println!("document {}: severity {}\n  {}", doc.id, doc.severity, doc.text);
    println!("  gold lesions:");
    for l in &doc.lesions {
        println!("    {:<10} {:>5}%  ({})", l.lumen, l.diameter, l.side);
    }
    let s = &doc.sentences[0];
    println!("  first sentence relations:");
    for r in &s.relations {
        println!(
            "    <{}, {}, {}>",
            s.entities[r.e1].surface,
            r.label.name(),
            s.entities[r.e2].surface
        );
    }
    Ok(())
}
