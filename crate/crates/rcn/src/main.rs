//! Command-line front end over the library: corpus generation, entity
//! recognition, dataset assembly, training, evaluation, and end-to-end
//! severity classification. Each subcommand is a thin wrapper over one
//! library call; see `examples/` for the same flows as code.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rcn::dataset::{balance_and_split, label_counts, read_instances, write_instances};
use rcn::gensini::Severity;
use rcn::metrics::{
    evaluate_relations, evaluate_severity, relation_table, severity_table,
};
use rcn::model::{
    load_checkpoint, save_checkpoint, train_with_hook, EncoderMode, HeadMode, ModelConfig,
};
use rcn::ner::{annotate, Lexicon};
use rcn::pipeline::{classify_gold_documents, classify_text, DocumentReport, RelationSource};
use rcn::syngen::{generate_corpus, read_gold_docs, write_gold_docs, GenConfig, SurfaceMode};

#[derive(Parser)]
#[command(
    name = "rcn",
    about = "Severity grading of coronary artery disease from angiography text",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic gold-annotated corpus.
    Generate(GenerateArgs),
    /// Tokenize sentences and recognize clinical entities.
    Ner(NerArgs),
    /// Balance and split a labeled instance file into train and test sets.
    BuildDataset(BuildDatasetArgs),
    /// Train the relation model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate relation predictions of a checkpoint on labeled instances.
    EvalRelations(EvalRelationsArgs),
    /// Score predicted severity reports against gold documents.
    EvalSeverity(EvalSeverityArgs),
    /// Classify documents end to end into severity reports.
    Classify(ClassifyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Directory for gold_docs.jsonl, instances.jsonl, and the report.
    #[arg(long)]
    out_dir: PathBuf,
    /// Stop after roughly this many labeled instances.
    #[arg(long, conflicts_with = "documents")]
    instances: Option<usize>,
    /// Generate exactly this many documents.
    #[arg(long)]
    documents: Option<usize>,
    /// Surface vocabulary: chinese or ascii.
    #[arg(long, default_value = "chinese")]
    surface: String,
    /// Generator config JSON (GenConfig); flags override its fields.
    #[arg(long)]
    gen_config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct NerArgs {
    /// Input text, one sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// Lexicon JSON; defaults to the built-in Chinese lexicon.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Output JSONL of tokens and entities; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BuildDatasetArgs {
    /// Labeled instance file (JSONL).
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
    /// Fraction of no-relation instances to discard.
    #[arg(long, default_value_t = 0.0)]
    discard_fraction: f64,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training instances (JSONL).
    #[arg(long)]
    train: PathBuf,
    /// Held-out instances reported per epoch.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Model config JSON (ModelConfig, partial fields allowed).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to write after training.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Training log (JSONL, one record per epoch).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also write a checkpoint every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    routing_iters: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// capsule or softmax.
    #[arg(long)]
    head: Option<String>,
    /// uni_bi or all_bi.
    #[arg(long)]
    encoder: Option<String>,
    /// Average the batch loss instead of summing it.
    #[arg(long)]
    average_batch_loss: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalRelationsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled instances to evaluate on (JSONL).
    #[arg(long)]
    instances: PathBuf,
    /// Metrics JSON output path.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalSeverityArgs {
    /// Predicted reports (JSONL from `classify`).
    #[arg(long)]
    reports: PathBuf,
    /// Gold documents (JSONL from `generate`).
    #[arg(long)]
    gold: PathBuf,
    /// Metrics JSON output path.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Model checkpoint; optional in --oracle mode.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Gold documents to classify (JSONL).
    #[arg(long, conflicts_with = "text")]
    input: Option<PathBuf>,
    /// Raw documents to classify, one per line.
    #[arg(long)]
    text: Option<PathBuf>,
    /// Score gold relations directly, bypassing the model.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Output reports (JSONL); stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Ner(a) => ner(a),
        Command::BuildDataset(a) => build_dataset(a),
        Command::Train(a) => train_cmd(a),
        Command::EvalRelations(a) => eval_relations(a),
        Command::EvalSeverity(a) => eval_severity_cmd(a),
        Command::Classify(a) => classify(a),
    }
}

fn load_lexicon(path: &Option<PathBuf>) -> Result<Lexicon> {
    match path {
        Some(p) => Ok(Lexicon::from_path(p)?),
        None => Ok(Lexicon::builtin_chinese()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let out = BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    serde_json::to_writer_pretty(out, value)?;
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut config: GenConfig = match &a.gen_config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    if let Some(n) = a.instances {
        config.target_instances = Some(n);
        config.documents = None;
    }
    if let Some(d) = a.documents {
        config.documents = Some(d);
        config.target_instances = None;
    }
    config.surface = match a.surface.as_str() {
        "chinese" => SurfaceMode::Chinese,
        "ascii" => SurfaceMode::Ascii,
        other => bail!("unknown surface {other:?}; use chinese or ascii"),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }

    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    let corpus = generate_corpus(&config)?;
    write_gold_docs(&a.out_dir.join("gold_docs.jsonl"), &corpus.documents)?;
    write_instances(&a.out_dir.join("instances.jsonl"), &corpus.instances)?;
    write_json(&a.out_dir.join("generation_report.json"), &corpus.report)?;

    let c = corpus.report.instance_counts;
    println!(
        "{} documents, {} instances {:?}",
        corpus.report.documents,
        c.iter().sum::<usize>(),
        c
    );
    for note in &corpus.report.notes {
        eprintln!("note: {note}");
    }
    Ok(())
}

fn ner(a: NerArgs) -> Result<()> {
    let lexicon = load_lexicon(&a.lexicon)?;
    let input = std::fs::File::open(&a.input)
        .with_context(|| format!("opening {}", a.input.display()))?;
    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    #[derive(serde::Serialize)]
    struct Line<'a> {
        text: &'a str,
        tokens: Vec<rcn::ner::Token>,
        entities: Vec<rcn::ner::Entity>,
    }
    for line in BufReader::new(input).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (tokens, entities) = annotate(&line, &lexicon);
        serde_json::to_writer(
            &mut out,
            &Line {
                text: &line,
                tokens,
                entities,
            },
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn build_dataset(a: BuildDatasetArgs) -> Result<()> {
    let instances = read_instances(&a.instances)?;
    let total = instances.len();
    let (train, test) =
        balance_and_split(instances, a.discard_fraction, a.train_fraction, a.seed)?;
    write_instances(&a.train_out, &train)?;
    write_instances(&a.test_out, &test)?;
    println!(
        "{total} instances -> {} train {:?}, {} test {:?}",
        train.len(),
        label_counts(&train),
        test.len(),
        label_counts(&test)
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut config: ModelConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ModelConfig::default(),
    };
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.routing_iters {
        config.routing_iters = v;
    }
    if let Some(v) = a.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(h) = &a.head {
        config.head_mode = match h.as_str() {
            "capsule" => HeadMode::Capsule,
            "softmax" => HeadMode::Softmax,
            other => bail!("unknown head {other:?}; use capsule or softmax"),
        };
    }
    if let Some(e) = &a.encoder {
        config.encoder_mode = match e.as_str() {
            "uni_bi" => EncoderMode::UniBi,
            "all_bi" => EncoderMode::AllBi,
            other => bail!("unknown encoder {other:?}; use uni_bi or all_bi"),
        };
    }
    if a.average_batch_loss {
        config.average_batch_loss = true;
    }

    let train_set = read_instances(&a.train)?;
    let dev_set = a.dev.as_ref().map(|p| read_instances(p)).transpose()?;

    let mut log_file = a
        .log
        .as_ref()
        .map(|p| -> Result<_> {
            Ok(BufWriter::new(std::fs::File::create(p).with_context(
                || format!("creating {}", p.display()),
            )?))
        })
        .transpose()?;

    let every = a.checkpoint_every;
    let ckpt_path = a.checkpoint.clone();
    let (model, _) = train_with_hook(&train_set, dev_set.as_deref(), &config, |rec, model| {
        match rec.dev_f1 {
            Some(dev) => println!(
                "epoch {:3}  loss {:12.4}  train_f1 {:6.2}  dev_f1 {:6.2}",
                rec.epoch, rec.loss, rec.train_f1, dev
            ),
            None => println!(
                "epoch {:3}  loss {:12.4}  train_f1 {:6.2}",
                rec.epoch, rec.loss, rec.train_f1
            ),
        }
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, rec).expect("log record serializes");
            f.write_all(b"\n").expect("log writable");
        }
        if let Some(n) = every {
            if rec.epoch % n == 0 {
                let p = ckpt_path.with_extension(format!("epoch{}.json", rec.epoch));
                save_checkpoint(model, &p).expect("epoch checkpoint writable");
            }
        }
    })?;

    save_checkpoint(&model, &a.checkpoint)?;
    println!("checkpoint written to {}", a.checkpoint.display());
    Ok(())
}

fn eval_relations(a: EvalRelationsArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let instances = read_instances(&a.instances)?;
    let gold: Vec<_> = instances
        .iter()
        .map(|i| {
            i.label
                .ok_or_else(|| anyhow::anyhow!("unlabeled instance in evaluation file"))
        })
        .collect::<Result<_>>()?;
    let predictions: Vec<_> = model
        .predict_batch(&instances)?
        .into_iter()
        .map(|p| p.label)
        .collect();
    let metrics = evaluate_relations(&predictions, &gold)?;
    print!("{}", relation_table(&metrics));
    if let Some(p) = &a.output {
        write_json(p, &metrics)?;
    }
    Ok(())
}

fn eval_severity_cmd(a: EvalSeverityArgs) -> Result<()> {
    let gold_docs = read_gold_docs(&a.gold)?;
    let file = std::fs::File::open(&a.reports)
        .with_context(|| format!("opening {}", a.reports.display()))?;
    let mut reports: Vec<DocumentReport> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            reports.push(serde_json::from_str(&line)?);
        }
    }
    let by_id: std::collections::HashMap<usize, Severity> =
        gold_docs.iter().map(|d| (d.id, d.severity)).collect();
    let mut pred = Vec::with_capacity(reports.len());
    let mut gold = Vec::with_capacity(reports.len());
    for r in &reports {
        let g = by_id
            .get(&r.id)
            .ok_or_else(|| anyhow::anyhow!("report id {} not in the gold file", r.id))?;
        pred.push(r.report.level);
        gold.push(*g);
    }
    let metrics = evaluate_severity(&pred, &gold)?;
    print!("{}", severity_table(&metrics));
    if let Some(p) = &a.output {
        write_json(p, &metrics)?;
    }
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let lexicon = load_lexicon(&a.lexicon)?;
    let model = a.checkpoint.as_ref().map(|p| load_checkpoint(p)).transpose()?;

    let reports: Vec<DocumentReport> = if let Some(input) = &a.input {
        let docs = read_gold_docs(input)?;
        let source = if a.oracle {
            RelationSource::Gold
        } else {
            let model = model
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("--checkpoint is required without --oracle"))?;
            RelationSource::Model(model)
        };
        classify_gold_documents(&docs, &source, &lexicon)?
    } else if let Some(text_path) = &a.text {
        if a.oracle {
            bail!("--oracle needs gold documents (use --input)");
        }
        let model = model
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("--checkpoint is required to classify raw text"))?;
        let file = std::fs::File::open(text_path)
            .with_context(|| format!("opening {}", text_path.display()))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(classify_text(i, &line, model, &lexicon)?);
            }
        }
        out
    } else {
        bail!("provide --input (gold documents) or --text (raw lines)");
    };

    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    let oov: usize = reports.iter().map(|r| r.oov_tokens).sum();
    for r in &reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    drop(out);
    eprintln!(
        "{} reports written; {oov} out-of-vocabulary tokens encountered",
        reports.len()
    );
    Ok(())
}
