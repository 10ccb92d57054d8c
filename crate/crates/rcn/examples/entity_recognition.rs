//! Dictionary + pattern entity recognition over a report sentence.
//!
//!     cargo run --release --example entity_recognition

use rcn::ner::{annotate, Lexicon};

fn main() {
    let lexicon = Lexicon::builtin_chinese();
    let sentence = "左前降支中段40%狭窄，右前降支、右回旋支未见明显狭窄。";
    println!("sentence: {sentence}\n");

    let (tokens, entities) = annotate(sentence, &lexicon);
    println!("tokens:");
    for (i, t) in tokens.iter().enumerate() {
        println!("  [{i:2}] {:<12} chars {}..{}", t.surface, t.start, t.end);
    }
    println!("\nentities:");
    for e in &entities {
        println!("  {:<12} {:?} at tokens {:?}", e.surface, e.ty, e.span);
    }

    // The ASCII surface pack works the same way for the whole pipeline.
    let ascii = Lexicon::builtin_ascii();
    let (_, entities) = annotate("LAD mid 40% stenosis , RCA occluded .", &ascii);
    println!("\nascii entities:");
    for e in &entities {
        println!("  {:<12} {:?}", e.surface, e.ty);
    }
}
