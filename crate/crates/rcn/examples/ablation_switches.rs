//! The architecture switches: routing iteration count, all-bidirectional
//! encoders, and the softmax head, each trained briefly on the same data.
//!
//!     cargo run --release --example ablation_switches

use rcn::dataset::balance_and_split;
use rcn::model::{train, EncoderMode, HeadMode, ModelConfig};
use rcn::syngen::{generate_corpus, GenConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate_corpus(&GenConfig {
        target_instances: Some(700),
        seed: 17,
        ..Default::default()
    })?;
    let (train_set, test_set) = balance_and_split(corpus.instances, 0.0, 0.7, 7)?;
    let base = ModelConfig {
        epochs: 3,
        ..Default::default()
    };

    let run = |name: &str, config: ModelConfig| -> anyhow::Result<()> {
        let (_, log) = train(&train_set, Some(&test_set), &config)?;
        println!("{name:>22}: dev_f1 {:6.2}", log.last().unwrap().dev_f1.unwrap());
        Ok(())
    };

    run("default (r=4)", base.clone())?;
    for r in [1, 2] {
        run(
            &format!("routing r={r}"),
            ModelConfig {
                routing_iters: r,
                ..base.clone()
            },
        )?;
    }
    run(
        "all Bi-LSTM encoders",
        ModelConfig {
            encoder_mode: EncoderMode::AllBi,
            ..base.clone()
        },
    )?;
    run(
        "softmax head",
        ModelConfig {
            head_mode: HeadMode::Softmax,
            ..base.clone()
        },
    )?;
    Ok(())
}
