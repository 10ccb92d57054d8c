//! From extracted relations to a severity report: per-lumen maximum
//! stenosis, lesion scores, side subtotals, and the three-level grading.
//! Also shows negation removing a finding's contribution.
//!
//!     cargo run --release --example severity_scoring

use rcn::dataset::RelationLabel;
use rcn::gensini::{lesion_score, score_document, RelEntity, RelTriple};
use rcn::ner::{EntityType, Lexicon};

fn ent(span: usize, ty: EntityType, surface: &str) -> RelEntity {
    RelEntity {
        span: [span, span],
        ty,
        surface: surface.into(),
    }
}

fn main() -> anyhow::Result<()> {
    let lexicon = Lexicon::builtin_chinese();

    // 左前降支 80% 狭窄 + 右冠状动脉 闭塞, then the same with the stenosis negated.
    let stenosis = vec![
        RelTriple {
            e1: ent(0, EntityType::Lumen, "左前降支"),
            e2: ent(2, EntityType::Modifier, "狭窄"),
            label: RelationLabel::Modifier,
        },
        RelTriple {
            e1: ent(1, EntityType::Percentage, "80%"),
            e2: ent(2, EntityType::Modifier, "狭窄"),
            label: RelationLabel::PercentageRev,
        },
        RelTriple {
            e1: ent(4, EntityType::Lumen, "右冠状动脉"),
            e2: ent(5, EntityType::Modifier, "闭塞"),
            label: RelationLabel::Modifier,
        },
    ];

    let report = score_document(&[stenosis.clone()], &lexicon)?;
    println!("report: total {} -> {}", report.total, report.level);
    for l in &report.lesions {
        println!(
            "  {:<10} side {:<5} diameter {:>5}%  score {}",
            l.lumen, l.side.to_string(), l.diameter, l.score
        );
    }
    println!(
        "  left subtotal {}, right subtotal {}",
        report.left_total, report.right_total
    );

    let mut negated = stenosis;
    negated.push(RelTriple {
        e1: ent(3, EntityType::Negative, "未见"),
        e2: ent(2, EntityType::Modifier, "狭窄"),
        label: RelationLabel::Negative,
    });
    let report = score_document(&[negated], &lexicon)?;
    println!(
        "\nwith the stenosis negated: total {} -> {}",
        report.total, report.level
    );

    println!("\nlesion score bands:");
    for d in [0.0, 1.0, 40.0, 49.5, 50.0, 74.0, 75.0, 99.0, 100.0] {
        println!("  diameter {d:>5}% -> score {}", lesion_score(d)?);
    }
    Ok(())
}
