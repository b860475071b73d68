//! Command-line front end for the part-of-speech induction workbench.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use mposm::config::{ConfigError, ExperimentConfig};
use mposm::corpus::{
    build_vocabulary, load_corpus, write_corpus, Corpus, CorpusFormat, Vocabulary,
};
use mposm::eval;
use mposm::model::{DataCtx, ModelVariant, Mposm};
use mposm::synth::{generate_dataset, SynthVariant, SyntheticSpec};
use mposm::train::{
    self, load_checkpoint, selected_m1, EpochRecord, SelectionMode, TrainConfig, TrainResult,
};

#[derive(Parser)]
#[command(
    name = "mposm",
    version,
    about = "Unsupervised part-of-speech induction workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic agreement benchmark corpus.
    GenSynth(GenSynthArgs),
    /// Train a model and write run artifacts.
    Train(TrainArgs),
    /// Masked-word pretraining followed by standard training.
    Pretrain(PretrainArgs),
    /// Evaluate a checkpoint against a gold-tagged corpus.
    Eval(EvalArgs),
    /// Corpus analysis: M-1 upper bound, tag-context mutual information.
    Analyze(AnalyzeArgs),
    /// Train across several seeds and aggregate.
    Multiseed(MultiseedArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// d0, morph, or d24
    variant: String,
    /// Output corpus path (word<TAB>tag lines).
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = 40_000)]
    n_sentences: usize,
    #[arg(long, default_value_t = 5)]
    words_per_tag: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CommonTrainArgs {
    /// Training corpus (word<TAB>tag lines; tags optional per line set).
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus format: tsv or words.
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset the config file overrides: default or synthetic.
    #[arg(long, default_value = "synthetic")]
    preset: String,
    /// Run directory for metrics, checkpoints, and the resolved config.
    #[arg(long)]
    run_dir: PathBuf,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the epoch cap.
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    resume: bool,
    /// Write a resumable checkpoint every N epochs.
    #[arg(long, default_value_t = 5)]
    checkpoint_every: usize,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Epochs of masked-word pretraining before standard training.
    #[arg(long, default_value_t = 3)]
    pretrain_epochs: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Checkpoint produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Where to write the evaluation report (JSON). Defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Relative context offsets for the mutual-information probe, e.g. "-2,-1".
    #[arg(long, default_value = "-1", allow_hyphen_values = true)]
    context: String,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MultiseedArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Number of seeds, run as seed, seed+1, ...
    #[arg(long, default_value_t = 10)]
    n_seeds: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth(args) => gen_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Multiseed(args) => cmd_multiseed(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<ConfigError>().is_some()
                || e.to_string().contains("invalid config")
                || e.to_string().contains("usage:");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn gen_synth(args: GenSynthArgs) -> Result<()> {
    let variant = SynthVariant::parse(&args.variant)
        .with_context(|| format!("usage: unknown variant `{}` (d0, morph, d24)", args.variant))?;
    let spec = SyntheticSpec {
        variant,
        n_sentences: args.n_sentences,
        words_per_tag: args.words_per_tag,
        seed: args.seed,
    };
    let (corpus, lexicon) = generate_dataset(&spec);
    if let Some(dir) = args.output.parent() {
        fs::create_dir_all(dir)?;
    }
    write_corpus(&corpus, &args.output, CorpusFormat::TwoColumnTsv)?;
    let sidecar = args.output.with_extension("meta.json");
    let meta = serde_json::json!({
        "spec": spec,
        "lexicon": lexicon,
        "n_sentences": corpus.sentences.len(),
        "n_tokens": corpus.token_count(),
    });
    fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)?;
    println!(
        "wrote {} sentences ({} tokens) to {} (+ {})",
        corpus.sentences.len(),
        corpus.token_count(),
        args.output.display(),
        sidecar.display()
    );
    Ok(())
}

fn parse_format(s: &str) -> Result<CorpusFormat> {
    match s {
        "tsv" => Ok(CorpusFormat::TwoColumnTsv),
        "words" => Ok(CorpusFormat::WordsOnly),
        other => bail!("usage: unknown corpus format `{other}` (tsv or words)"),
    }
}

struct Prepared {
    config: ExperimentConfig,
    corpus: Corpus,
    vocab: Vocabulary,
    run_dir: PathBuf,
}

fn prepare(common: &CommonTrainArgs) -> Result<Prepared> {
    let base = match common.preset.as_str() {
        "default" => ExperimentConfig::default(),
        "synthetic" => ExperimentConfig::synthetic(),
        other => bail!("usage: unknown preset `{other}` (default or synthetic)"),
    };
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path, base)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => base,
    };
    if let Some(seed) = common.seed {
        config.train.seed = seed;
    }
    if let Some(max_epochs) = common.max_epochs {
        config.train.max_epochs = max_epochs;
    }
    let format = parse_format(&common.format)?;
    let corpus = load_corpus(&common.corpus, format)
        .with_context(|| format!("loading corpus {}", common.corpus.display()))?;
    let vocab = build_vocabulary(&corpus);
    fs::create_dir_all(&common.run_dir)?;
    fs::write(
        common.run_dir.join("config.resolved"),
        config.to_config_text(),
    )?;
    Ok(Prepared {
        config,
        corpus,
        vocab,
        run_dir: common.run_dir.clone(),
    })
}

fn metrics_writer(run_dir: &Path) -> Result<fs::File> {
    use std::io::Write as _;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(run_dir.join("metrics.jsonl"))?;
    f.flush()?;
    Ok(f)
}

fn epoch_hook<'a>(file: &'a mut fs::File) -> impl FnMut(&EpochRecord) + 'a {
    use std::io::Write as _;
    move |r: &EpochRecord| {
        let line = serde_json::to_string(r).expect("epoch record serializes");
        let _ = writeln!(file, "{line}");
        let _ = file.flush();
        match r.m1 {
            Some(m1) => eprintln!(
                "epoch {:>3}  train {:.4}  eval {:.4}  m1 {:.2}  lr {:.6}",
                r.epoch, r.train_loss, r.eval_loss, m1, r.lr
            ),
            None => eprintln!(
                "epoch {:>3}  train {:.4}  eval {:.4}  lr {:.6}",
                r.epoch, r.train_loss, r.eval_loss, r.lr
            ),
        }
    }
}

fn write_result(run_dir: &Path, result: &TrainResult) -> Result<()> {
    fs::write(
        run_dir.join("result.json"),
        serde_json::to_string_pretty(result)?,
    )?;
    match result.m1 {
        Some(m1) => println!(
            "selected epoch {} (of {}): m1 {:.2}, eval loss {:.4}",
            result.selected_epoch,
            result.epochs.len(),
            m1,
            result.eval_loss
        ),
        None => println!(
            "selected epoch {} (of {}): eval loss {:.4}",
            result.selected_epoch,
            result.epochs.len(),
            result.eval_loss
        ),
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let prepared = prepare(&args.common)?;
    let ckpt = prepared.run_dir.join("checkpoint.bin");
    let mut metrics = metrics_writer(&prepared.run_dir)?;
    let result = if args.resume {
        let (mut model, mut adam, mut state, cfg) = load_checkpoint(&ckpt, &prepared.vocab)
            .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
        let mut hook = epoch_hook(&mut metrics);
        train::resume(
            &mut model,
            &mut adam,
            &mut state,
            &cfg,
            &prepared.corpus,
            &prepared.vocab,
            None,
            Some(&mut hook),
        )?
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(prepared.config.train.seed);
        let mut model = Mposm::new(
            prepared.config.model.clone(),
            &prepared.vocab,
            None,
            None,
            &mut rng,
        )?;
        let mut hook = epoch_hook(&mut metrics);
        let cfg = &prepared.config.train;
        if cfg.pretrain_epochs > 0 {
            // The pretraining stage is cheap to redo, so only the main stage
            // writes resumable checkpoints.
            eprintln!("masked-word pretraining ({} epochs)", cfg.pretrain_epochs);
            let variant = model.config.variant;
            model.set_variant(ModelVariant::MlmpPretrain);
            let pre_cfg = TrainConfig {
                max_epochs: cfg.pretrain_epochs,
                selection: SelectionMode::Loss,
                pretrain_epochs: 0,
                ..cfg.clone()
            };
            train::train(
                &mut model,
                &pre_cfg,
                &prepared.corpus,
                &prepared.vocab,
                None,
                Some(&mut hook),
            )?;
            model.set_variant(variant);
            eprintln!("main training");
        }
        let main_cfg = TrainConfig {
            pretrain_epochs: 0,
            ..cfg.clone()
        };
        train::train_with_checkpoints(
            &mut model,
            &main_cfg,
            &prepared.corpus,
            &prepared.vocab,
            None,
            Some(&mut hook),
            &ckpt,
            args.checkpoint_every,
        )?
    };
    write_result(&prepared.run_dir, &result)
}

fn cmd_pretrain(args: PretrainArgs) -> Result<()> {
    let prepared = prepare(&args.common)?;
    let mut rng = ChaCha20Rng::seed_from_u64(prepared.config.train.seed);
    let mut model_cfg = prepared.config.model.clone();
    if model_cfg.variant == ModelVariant::MlmpPretrain {
        model_cfg.variant = ModelVariant::Standard;
    }
    let mut model = Mposm::new(model_cfg, &prepared.vocab, None, None, &mut rng)?;
    let cfg = TrainConfig {
        pretrain_epochs: args.pretrain_epochs,
        ..prepared.config.train.clone()
    };
    let mut metrics = metrics_writer(&prepared.run_dir)?;
    let mut hook = epoch_hook(&mut metrics);
    eprintln!("masked-word pretraining ({} epochs)", cfg.pretrain_epochs);
    let result = train::train_staged(
        &mut model,
        &cfg,
        &prepared.corpus,
        &prepared.vocab,
        None,
        Some(&mut hook),
    )?;
    write_result(&prepared.run_dir, &result)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let format = parse_format(&args.format)?;
    let corpus = load_corpus(&args.corpus, format)?;
    let vocab = build_vocabulary(&corpus);
    let (model, _adam, _state, train_cfg) = load_checkpoint(&args.checkpoint, &vocab)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let ctx = DataCtx::new(&vocab, None);
    let assignment = model.predict_tags(&corpus, &ctx)?;
    let m1 = eval::many_to_one(&assignment, &corpus)?;
    let upper = eval::m1_upper_bound(&corpus)?;
    let clusters = eval::cluster_report(&assignment, &corpus)?;
    let loss = train::evaluate_loss(&model, &train_cfg, &corpus, &vocab, None)?;
    let report = serde_json::json!({
        "m1": m1,
        "m1_upper_bound": upper,
        "eval_loss": loss,
        "clusters": clusters,
    });
    let text = serde_json::to_string_pretty(&report)?;
    match &args.output {
        Some(path) => fs::write(path, text)?,
        None => println!("{text}"),
    }
    eprintln!(
        "m1 {:.2} (upper bound {:.2}), eval loss {:.4}",
        m1.accuracy, upper, loss
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let format = parse_format(&args.format)?;
    let corpus = load_corpus(&args.corpus, format)?;
    let context: Vec<i64> = args
        .context
        .split(',')
        .map(|s| s.trim().parse::<i64>())
        .collect::<Result<_, _>>()
        .with_context(|| {
            format!(
                "usage: bad context spec `{}` (e.g. \"-2,-1\")",
                args.context
            )
        })?;
    let mi = eval::tag_mutual_information(&corpus, &context)?;
    let upper = eval::m1_upper_bound(&corpus)?;
    let report = serde_json::json!({
        "m1_upper_bound": upper,
        "mutual_information": {
            "context": mi.context_spec,
            "nats": mi.mi_nats,
            "tag_entropy_nats": mi.entropy_z,
            "positions": mi.n_positions,
        },
    });
    let text = serde_json::to_string_pretty(&report)?;
    match &args.output {
        Some(path) => fs::write(path, text)?,
        None => println!("{text}"),
    }
    eprintln!(
        "upper bound {:.2}, MI({:?}; tag) = {:.4} nats over {} positions",
        upper, context, mi.mi_nats, mi.n_positions
    );
    Ok(())
}

fn cmd_multiseed(args: MultiseedArgs) -> Result<()> {
    let prepared = prepare(&args.common)?;
    if args.n_seeds == 0 {
        bail!("usage: --n-seeds must be >= 1");
    }
    let base_seed = prepared.config.train.seed;
    let seeds: Vec<u64> = (0..args.n_seeds as u64).map(|i| base_seed + i).collect();
    let model_cfg = prepared.config.model.clone();
    let vocab = &prepared.vocab;
    let mut build = |seed: u64| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Mposm::new(model_cfg.clone(), vocab, None, None, &mut rng)
    };
    let run_dir = prepared.run_dir.clone();
    let mut on_run = |seed: u64, result: &TrainResult| {
        let oracle = selected_m1(&result.epochs, SelectionMode::Oracle);
        let by_loss = selected_m1(&result.epochs, SelectionMode::Loss);
        eprintln!(
            "seed {seed}: m1 {:?} (oracle {oracle:?}, loss-selected {by_loss:?}), {} epochs",
            result.m1,
            result.epochs.len()
        );
        let path = run_dir.join(format!("seed-{seed}.json"));
        if let Ok(text) = serde_json::to_string_pretty(result) {
            let _ = fs::write(path, text);
        }
    };
    let summary = train::multi_seed(
        &seeds,
        &prepared.config.train,
        &prepared.corpus,
        &prepared.vocab,
        None,
        &mut build,
        Some(&mut on_run),
    )?;
    fs::write(
        prepared.run_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    fs::write(prepared.run_dir.join("summary.csv"), summary.to_csv())?;
    println!(
        "{} seeds: mean m1 {:.2} (std {:.2}), {:.0}% perfect",
        summary.runs.len(),
        summary.mean_m1,
        summary.std_m1,
        summary.percent_perfect
    );
    Ok(())
}
