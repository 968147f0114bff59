use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use semsum::checkpoint::{self, Container};
use semsum::data::{self, DatasetRecord, GeneratedRecord};
use semsum::gradcheck::{self, GradcheckConfig};
use semsum::rouge;
use semsum::search::{self, SearchConfig};
use semsum::semsim::{BoundScorer, ScorerConfig, ScorerLM, SemSimHead};
use semsum::stats;
use semsum::tokenizer::{train_bpe, Role, Vocab};
use semsum::trainer::{self, Objective, Scorer, TrainConfig, Trainer};
use semsum::{Graph, ModelConfig, SeqModel};

mod config;
use config::FileConfig;

#[derive(Parser)]
#[command(name = "semsum", version, about = "Summarization with a semantic-similarity training objective")]
struct Cli {
    /// `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a BPE vocabulary from documents and summaries.
    Vocab(VocabArgs),
    /// Short likelihood-only run whose encoder becomes a frozen scorer.
    PretrainLite(PretrainArgs),
    /// Train the summarizer.
    Train(TrainArgs),
    /// Decode summaries with beam search.
    Generate(GenerateArgs),
    /// ROUGE-1/2/L of generated summaries against references.
    Evaluate(EvaluateArgs),
    /// Similarity score and loss for one reference/candidate pair.
    Score(ScoreArgs),
    /// Finite-difference check of every summarizer gradient.
    Gradcheck(GradcheckArgs),
    /// Human-evaluation statistics from a CSV of ratings.
    Stats(StatsArgs),
}

#[derive(Args)]
struct VocabArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimArgs {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    update_freq: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Checkpoint to write; the step log goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scorer checkpoint from `pretrain-lite`. Without one, a seeded random
    /// scorer is used.
    #[arg(long)]
    scorer: Option<PathBuf>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    objective: Option<Objective>,
    #[arg(long)]
    lambda_semsim: Option<f64>,
    /// Stop after this many optimizer updates.
    #[arg(long)]
    max_steps: Option<u64>,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    lenpen: Option<f64>,
    #[arg(long)]
    no_trigram_block: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSON Lines with `summary` and `generated` fields.
    #[arg(long)]
    input: PathBuf,
    /// Structured report path (defaults to `<input>.rouge.json`).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    scorer: Option<PathBuf>,
    #[arg(long)]
    reference: String,
    #[arg(long)]
    candidate: String,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Floating-point width in bits.
    #[arg(long, default_value_t = 64, value_parser = parse_precision)]
    precision: u32,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    truncate_pct: Option<f64>,
    /// Report every p in 0, 5, ..., 40.
    #[arg(long)]
    sweep: bool,
    #[arg(long)]
    pairs: Option<String>,
    #[arg(long)]
    rescale: Option<stats::Rescale>,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_precision(s: &str) -> Result<u32, String> {
    match s {
        "32" => Ok(32),
        "64" => Ok(64),
        _ => Err(format!("precision must be 32 or 64, got {s}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Vocab(a) => cmd_vocab(&file, a),
        Command::PretrainLite(a) => cmd_pretrain(&file, a),
        Command::Train(a) => cmd_train(&file, a),
        Command::Generate(a) => cmd_generate(&file, a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Score(a) => cmd_score(&file, a),
        Command::Gradcheck(a) => cmd_gradcheck(&file, a),
        Command::Stats(a) => cmd_stats(&file, a),
    }
}

fn path(file: &FileConfig, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
    match flag.or_else(|| file.get(key).map(PathBuf::from)) {
        Some(p) => Ok(p),
        None => bail!("missing --{} (or `{key}` in the config file)", key.replace('_', "-")),
    }
}

fn read_records(p: &Path) -> Result<Vec<DatasetRecord>> {
    let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
    data::read_all(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))
}

fn load_vocab(p: &Path) -> Result<Vocab> {
    Vocab::load(p).with_context(|| format!("loading vocabulary {}", p.display()))
}

fn train_config(file: &FileConfig, o: &OptimArgs, base: TrainConfig) -> Result<TrainConfig> {
    Ok(TrainConfig {
        lr: file.pick(o.lr, "lr", base.lr)?,
        update_freq: file.pick(o.update_freq, "update_freq", base.update_freq)?,
        max_tokens: file.pick(o.max_tokens, "max_tokens", base.max_tokens)?,
        epochs: file.pick(o.epochs, "epochs", base.epochs)?,
        seed: file.pick(o.seed, "seed", base.seed)?,
        dropout: file.pick(o.dropout, "dropout", base.dropout)?,
        max_source_len: file.pick(None, "max_source_len", base.max_source_len)?,
        max_target_len: file.pick(None, "max_target_len", base.max_target_len)?,
        ..base
    })
}

fn model_config(file: &FileConfig, vocab_size: usize) -> Result<ModelConfig> {
    let d = ModelConfig::toy(vocab_size);
    Ok(ModelConfig {
        encoder_layers: file.pick(None, "encoder_layers", d.encoder_layers)?,
        decoder_layers: file.pick(None, "decoder_layers", d.decoder_layers)?,
        d_model: file.pick(None, "d_model", d.d_model)?,
        heads: file.pick(None, "heads", d.heads)?,
        ffn_dim: file.pick(None, "ffn_dim", d.ffn_dim)?,
        max_positions: file.pick(None, "max_positions", d.max_positions)?,
        ..d
    })
}

/// Tokenizes records and drops pairs longer than the configured limits.
fn training_samples(vocab: &Vocab, records: &[DatasetRecord], cfg: &TrainConfig) -> Result<Vec<trainer::Sample>> {
    for (i, r) in records.iter().enumerate() {
        data::require_summary(r, i + 1)?;
    }
    let report = trainer::filter_long_samples(data::to_samples(vocab, records), cfg);
    if report.dropped > 0 {
        eprintln!("dropped {} over-length pairs", report.dropped);
    }
    Ok(report.kept)
}

fn cmd_vocab(file: &FileConfig, a: VocabArgs) -> Result<()> {
    let records = read_records(&path(file, a.data, "data")?)?;
    let size = file.pick(a.size, "vocab_size", 400)?;
    let texts: Vec<&str> = records
        .iter()
        .flat_map(|r| std::iter::once(r.document.as_str()).chain(r.summary.as_deref()))
        .collect();
    let vocab = train_bpe(&texts, size)?;
    let out = path(file, a.out, "vocab")?;
    vocab.save(&out)?;
    println!("vocabulary of {} tokens written to {}", vocab.size(), out.display());
    Ok(())
}

fn cmd_pretrain(file: &FileConfig, a: PretrainArgs) -> Result<()> {
    let vocab = load_vocab(&path(file, a.vocab, "vocab")?)?;
    let records = read_records(&path(file, a.data, "data")?)?;
    let base = TrainConfig {
        lr: 1e-3,
        update_freq: 1,
        epochs: 20,
        ..TrainConfig::default()
    };
    let cfg = train_config(file, &a.optim, base)?;
    let samples = training_samples(&vocab, &records, &cfg)?;
    let scorer = trainer::pretrain_lite::<f32>(model_config(file, vocab.size())?, vocab.specials().pad, samples, cfg)?;
    let out = path(file, a.out, "scorer")?;
    checkpoint::scorer_container(&scorer).save(&out)?;
    println!("scorer written to {}", out.display());
    Ok(())
}

fn random_scorer(cfg: ScorerConfig, seed: u64) -> Scorer<f32> {
    let lm = ScorerLM::random(cfg, seed);
    let head = SemSimHead::random(lm.hidden(), seed.wrapping_add(1));
    Scorer { lm, head }
}

fn cmd_train(file: &FileConfig, a: TrainArgs) -> Result<()> {
    let vocab = load_vocab(&path(file, a.vocab, "vocab")?)?;
    let records = read_records(&path(file, a.data, "data")?)?;
    let out = path(file, a.out, "checkpoint")?;
    let max_steps: Option<u64> = match a.max_steps {
        Some(s) => Some(s),
        None => file.get("max_steps").map(str::parse).transpose()?,
    };
    let pad = vocab.specials().pad;

    let mut trainer: Trainer<f32> = if let Some(resume) = a.resume {
        let c = Container::load(&resume)?;
        let cfg = c.header.train.clone().context("resume checkpoint has no training state")?;
        let samples = training_samples(&vocab, &records, &cfg)?;
        checkpoint::load_trainer(&c, samples)?
    } else {
        let base = TrainConfig {
            objective: file.pick(a.objective, "objective", Objective::Composite)?,
            lambda_semsim: file.pick(a.lambda_semsim, "lambda_semsim", 1.0)?,
            ..TrainConfig::default()
        };
        let cfg = train_config(file, &a.optim, base)?;
        let samples = training_samples(&vocab, &records, &cfg)?;
        let model = SeqModel::new(model_config(file, vocab.size())?, pad, cfg.seed)?;
        let scorer = match (cfg.objective, a.scorer.or_else(|| file.get("scorer").map(PathBuf::from))) {
            (Objective::MlOnly, _) => None,
            (_, Some(p)) => Some(checkpoint::load_scorer(&Container::load(&p)?)?),
            (_, None) => {
                eprintln!("no --scorer given; using a seeded random scorer");
                Some(random_scorer(ScorerConfig::toy(vocab.size()), cfg.seed.wrapping_add(7)))
            }
        };
        Trainer::new(model, scorer, cfg, samples)?
    };

    let log_path = out.with_extension("log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut last = None;
    while trainer.progress().epoch < trainer.config.epochs && max_steps.map_or(true, |m| trainer.step() < m) {
        let r = trainer.train_step()?;
        let line = serde_json::json!({
            "step": r.step,
            "epoch": r.epoch,
            "loss": r.losses.total,
            "ml": r.losses.ml,
            "semsim": r.losses.semsim,
            "samples": r.losses.samples,
            "grad_norm": r.grad_norm,
            "clipped": r.clipped,
        });
        writeln!(log, "{line}")?;
        last = Some(r);
    }
    log.flush()?;
    checkpoint::trainer_container(&trainer, pad).save(&out)?;
    if let Some(r) = last {
        println!(
            "step {} epoch {} loss {:.4} (ml {:.4}, semsim {:.4})",
            r.step, r.epoch, r.losses.total, r.losses.ml, r.losses.semsim
        );
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn search_config(file: &FileConfig, s: &SearchArgs) -> Result<SearchConfig> {
    let d = SearchConfig::default();
    let block = if s.no_trigram_block {
        false
    } else {
        file.pick(None, "trigram_block", d.block_trigrams)?
    };
    Ok(SearchConfig {
        beam: file.pick(s.beam, "beam", d.beam)?,
        min_len: file.pick(s.min_len, "min_len", d.min_len)?,
        max_len: file.pick(s.max_len, "max_len", d.max_len)?,
        length_penalty: file.pick(s.lenpen, "lenpen", d.length_penalty)?,
        block_trigrams: block,
    })
}

fn cmd_generate(file: &FileConfig, a: GenerateArgs) -> Result<()> {
    let vocab = load_vocab(&path(file, a.vocab, "vocab")?)?;
    let model: SeqModel<f32> = checkpoint::load_model(&Container::load(&path(file, a.model, "checkpoint")?)?)?;
    let cfg = search_config(file, &a.search)?;
    let data_path = path(file, a.data, "data")?;
    let out = path(file, a.out, "generated")?;
    let mut w = BufWriter::new(File::create(&out)?);
    let reader = BufReader::new(File::open(&data_path).with_context(|| format!("opening {}", data_path.display()))?);
    let mut count = 0;
    for rec in data::read_jsonl::<_, DatasetRecord>(reader) {
        let rec = data::preprocess(rec?);
        let doc = vocab.encode(&rec.document, Role::Document);
        let out_ids = search::generate(&model, &doc, vocab.specials(), &cfg)?;
        let row = GeneratedRecord {
            summary: rec.summary.unwrap_or_default(),
            generated: vocab.decode(&out_ids.ids)?,
            id: rec.id,
        };
        writeln!(w, "{}", serde_json::to_string(&row)?)?;
        count += 1;
    }
    w.flush()?;
    println!("{count} summaries written to {}", out.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let reader = BufReader::new(File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?);
    let rows: Vec<GeneratedRecord> = data::read_jsonl(reader).collect::<Result<_, _>>()?;
    let refs: Vec<&str> = rows.iter().map(|r| r.summary.as_str()).collect();
    let gens: Vec<&str> = rows.iter().map(|r| r.generated.as_str()).collect();
    let report = rouge::evaluate_corpus(&refs, &gens, rouge::tokenize)?;
    println!("{:<8} {:>9} {:>9} {:>9}", "metric", "precision", "recall", "f1");
    for (name, s) in [("rouge-1", report.rouge1), ("rouge-2", report.rouge2), ("rouge-l", report.rouge_l)] {
        println!("{name:<8} {:>9.4} {:>9.4} {:>9.4}", s.precision, s.recall, s.f1);
    }
    println!("pairs    {}", report.count);
    let report_path = a.report.unwrap_or_else(|| a.input.with_extension("rouge.json"));
    let ids: Vec<Option<&str>> = rows.iter().map(|r| r.id.as_deref()).collect();
    let json = serde_json::json!({ "ids": ids, "report": report });
    std::fs::write(&report_path, serde_json::to_string_pretty(&json)?)?;
    Ok(())
}

fn cmd_score(file: &FileConfig, a: ScoreArgs) -> Result<()> {
    let vocab = load_vocab(&path(file, a.vocab, "vocab")?)?;
    let scorer = match a.scorer.or_else(|| file.get("scorer").map(PathBuf::from)) {
        Some(p) => checkpoint::load_scorer::<f64>(&Container::load(&p)?)?,
        None => random_scorer(ScorerConfig::toy(vocab.size()), file.pick(a.seed, "seed", 1)?).cast(),
    };
    let r = vocab.encode(&data::clean_text(&a.reference), Role::Reference);
    let c = vocab.encode(&data::clean_text(&a.candidate), Role::Generated);
    let mut g = Graph::<f64>::new();
    let bound = BoundScorer::bind(&mut g, &scorer.lm, &scorer.head);
    let score = bound.score_ids(&mut g, &r.ids[1..], &c.ids[1..])?;
    let s = g.scalar(score);
    println!("score_semsim {s:.6}");
    println!("l_semsim {:.6}", -s);
    Ok(())
}

fn cmd_gradcheck(file: &FileConfig, a: GradcheckArgs) -> Result<()> {
    let seed = file.pick(a.seed, "seed", 1)?;
    let mut cfg = GradcheckConfig::toy(seed);
    let (report, tol) = if a.precision == 64 {
        (gradcheck::run::<f64>(&cfg)?, 1e-5)
    } else {
        cfg.step = 1e-2;
        (gradcheck::run::<f32>(&cfg)?, 1e-3)
    };
    println!(
        "checked {} values in {} tensors at {}-bit in {:.1}s",
        report.parameters, report.tensors, a.precision, report.seconds
    );
    for (name, c) in [("l_ml", &report.ml), ("composite", &report.composite)] {
        println!(
            "{name:<10} max relative error {:.3e} (at {}[{}])",
            c.max_rel_error, c.worst_param, c.worst_index
        );
    }
    let worst = report.ml.max_rel_error.max(report.composite.max_rel_error);
    if !(worst <= tol) {
        bail!("max relative error {worst:.3e} exceeds {tol:e}");
    }
    Ok(())
}

fn cmd_stats(file: &FileConfig, a: StatsArgs) -> Result<()> {
    let records = stats::read_csv(File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?)?;
    let map = match a.rescale {
        Some(m) => m,
        None => file.pick(None, "rescale", stats::Rescale::Linear)?,
    };
    let pairs = match a.pairs.or_else(|| file.get("pairs").map(String::from)) {
        Some(p) => stats::parse_pairs(&p)?,
        None => Vec::new(),
    };
    let report_json = if a.sweep {
        let rows = stats::truncation_sweep(&records, &stats::default_sweep(), map, &pairs)?;
        println!("{:>5} {:>8} {:>8}  per-system totals", "p", "retained", "workers");
        for r in &rows {
            let totals: Vec<String> = r
                .report
                .systems
                .iter()
                .map(|(s, m)| format!("{s}={:.2}", m.total))
                .collect();
            println!(
                "{:>5} {:>8} {:>8}  {}",
                r.percent,
                r.report.retained,
                r.report.workers,
                totals.join(" ")
            );
        }
        serde_json::to_string_pretty(&rows)?
    } else {
        let p = file.pick(a.truncate_pct, "truncate_pct", 0.0)?;
        let kept = stats::truncate_by_time(&records, p)?;
        let report = stats::aggregate_with(&kept, map, &pairs)?;
        println!("truncation {p}%: {} of {} responses retained", report.retained, records.len());
        print!("{}", stats::format_report(&report));
        serde_json::to_string_pretty(&report)?
    };
    if let Some(p) = a.report {
        std::fs::write(p, report_json)?;
    }
    Ok(())
}
