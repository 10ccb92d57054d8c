//! Train the recurrent capsule network on a small synthetic set and look
//! inside the capsule layer: class scores are activity-vector lengths and
//! the routing produces per-segment coupling coefficients.
//!
//!     cargo run --release --example relation_model

use rcn::dataset::balance_and_split;
use rcn::model::{train, ModelConfig};
use rcn::syngen::{generate_corpus, GenConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate_corpus(&GenConfig {
        target_instances: Some(800),
        seed: 11,
        ..Default::default()
    })?;
    let (train_set, test_set) = balance_and_split(corpus.instances, 0.0, 0.7, 7)?;

    let config = ModelConfig {
        epochs: 4,
        ..Default::default()
    };
    println!(
        "training on {} instances ({} held out)...",
        train_set.len(),
        test_set.len()
    );
    let (model, log) = train(&train_set, Some(&test_set), &config)?;
    for r in &log {
        println!(
            "epoch {}  loss {:10.3}  train_f1 {:6.2}  dev_f1 {:6.2}",
            r.epoch,
            r.loss,
            r.train_f1,
            r.dev_f1.unwrap()
        );
    }

    let inst = &test_set[0];
    let p = model.predict(inst)?;
    println!("\ninstance: {}", inst.tokens.join(" "));
    println!(
        "  pair: {:?} / {:?}  gold {}",
        inst.surface(&inst.e1),
        inst.surface(&inst.e2),
        inst.label.unwrap().name()
    );
    println!("  predicted {} with lengths {:?}", p.label.name(), rounded(&p.scores));

    let readout = model.capsule_readout(inst)?;
    println!("  coupling coefficients (segment rows, class columns):");
    for (i, row) in readout.coupling.iter().enumerate() {
        println!("    E{} {:?}", i + 1, rounded(row));
    }
    Ok(())
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
