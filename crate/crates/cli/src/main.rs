mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ace_core::dataset::{self, load_dataset, write_dataset, Dataset, ENCODERS_FILE};
use ace_core::embedding::{generate_synthetic_dataset, EncoderPair, SyntheticConfig, ToyEncoderConfig, ToyEncoders};
use ace_core::eval::{
    self, concept_items, evaluate, export_projection, projection_csv, srt, EvalConfig, EvalMode, LabelTable,
    LeafSource, PcaReducer, StdKind,
};
use ace_core::llm::{build_trees, trees_from_file, ClientConfig, HttpTransport, LlmClient, ResponseCache, Transport};
use ace_core::loss::LossFlags;
use ace_core::trainer::{metrics_log, TrainConfig, TrainState, Trainer};
use ace_core::vocab::{validate_vocab_text, Vocabulary};
use ace_core::AceError;
use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{resolve, Overrides};
use run::{OutputLock, RunManifest};

/// Synonym-tree label augmentation for video-text classifiers.
///
/// Exit codes: 0 success, 1 other failure, 2 usage or configuration,
/// 3 ingest or schema, 4 numerics, 5 external service.
#[derive(Debug, Parser)]
#[command(name = "ace", version)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a vocabulary file against every tree invariant.
    ValidateVocab { file: PathBuf },
    /// Generate synonym trees for the root actions of a vocabulary.
    BuildTrees(BuildTreesArgs),
    /// Write a synthetic dataset with pretrained toy encoders.
    SynthData(SynthArgs),
    /// Fine-tune encoders on a dataset's base classes.
    Train(TrainArgs),
    /// Classify a dataset split and report accuracy and macro F1.
    Eval(EvalArgs),
    /// Synonym robustness test over several label sets.
    Srt(SrtArgs),
    /// Project every synonym label embedding to 2-D.
    ExportProjection(ProjectionArgs),
}

#[derive(Debug, Args)]
struct BuildTreesArgs {
    /// Vocabulary whose root actions need trees.
    #[arg(long)]
    vocab: PathBuf,
    /// Children per first-order node, replicated parent included.
    #[arg(long)]
    m_level1: Option<usize>,
    /// Children per second-order node; omit for depth-one trees.
    #[arg(long)]
    m_level2: Option<usize>,
    /// Never call the service; use the cache or --tree-file only.
    #[arg(long)]
    offline: bool,
    /// Directory of cached replies; nothing is cached when omitted.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Take trees from this vocabulary file instead of the service.
    #[arg(long)]
    tree_file: Option<PathBuf>,
    /// Client settings (TOML): max_retries, backoff_ms, max_in_flight,
    /// requests_per_second, offline, domain_hint, template_id.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    domain_hint: Option<String>,
    #[arg(long)]
    template_id: Option<String>,
    #[arg(long)]
    max_retries: Option<usize>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    requests_per_second: Option<f64>,
    /// Output vocabulary JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Generator settings (TOML), any SyntheticConfig key.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    num_base: Option<usize>,
    #[arg(long)]
    num_novel: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Per-frame feature noise.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Children per tree level, e.g. `5,5`.
    #[arg(long, value_delimiter = ',')]
    m_per_level: Option<Vec<usize>>,
    #[arg(long, default_value = "synthetic")]
    dataset_id: String,
    /// Dataset directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Training settings (TOML), any key listed below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initial encoder parameters; defaults to the dataset's encoders.json,
    /// else a random toy initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Continue from a checkpoint with its stored configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Softmax temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Truncate trees to these children counts, e.g. `5,5`.
    #[arg(long, value_delimiter = ',')]
    m_per_level: Option<Vec<usize>>,
    /// Loss switches: comma list of all, none, fixed-only, leaf, shadow,
    /// rand, fixed, each optionally prefixed with `no-`.
    #[arg(long)]
    flags: Option<LossFlags>,
    /// Weight of the randomized-label term.
    #[arg(long)]
    rand_weight: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parameter blocks to update, comma separated.
    #[arg(long, value_delimiter = ',')]
    trainable: Option<Vec<String>>,
    /// Write a checkpoint every N iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Run directory for the model, checkpoints and metrics.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Base,
    Novel,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Base => EvalMode::Base,
            ModeArg::Novel => EvalMode::Novel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalLabels {
    /// The dataset's annotated labels.
    Root,
    /// One independently drawn first-order synonym per class.
    Random,
}

/// Settings shared by `eval` and `srt`; every key also fits in `--config`.
#[derive(Debug, Args)]
struct InferenceArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint or encoder-parameter JSON; defaults to the dataset's
    /// encoders.json.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Evaluation settings (TOML): mode, leaf_augment, leaf_source,
    /// temperature, srt_runs, seed, std_kind.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Score labels by themselves instead of averaging over children.
    #[arg(long)]
    no_leaf: bool,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: InferenceArgs,
    #[arg(long, value_enum, default_value = "root")]
    labels: EvalLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StdArg {
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LeafSourceArg {
    Queried,
    Root,
}

#[derive(Debug, Args)]
struct SrtArgs {
    #[command(flatten)]
    common: InferenceArgs,
    /// Label table CSV (run, class_index, label); generated from the seed
    /// when omitted.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Number of runs.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_enum)]
    std: Option<StdArg>,
    #[arg(long, value_enum)]
    leaf_source: Option<LeafSourceArg>,
}

#[derive(Debug, Args)]
struct ProjectionArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Classes to project: base, novel or all.
    #[arg(long, default_value = "all")]
    classes: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<AceError>())
                .map_or(1, AceError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::ValidateVocab { file } => validate_vocab(&file),
        Command::BuildTrees(a) => build_trees_cmd(a),
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Srt(a) => srt_cmd(a),
        Command::ExportProjection(a) => projection_cmd(a),
    }
}

fn validate_vocab(file: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(file).map_err(|e| AceError::IngestError {
        path: file.to_path_buf(),
        reason: e.to_string(),
    })?;
    let report = validate_vocab_text(&file.display().to_string(), &text);
    if report.is_ok() {
        println!("{}: ok", file.display());
        Ok(())
    } else {
        print!("{report}");
        Err(AceError::SchemaError(format!("{} violation(s)", report.violations.len())).into())
    }
}

fn build_trees_cmd(a: BuildTreesArgs) -> anyhow::Result<()> {
    let _lock = OutputLock::file(&a.out)?;
    let mut o = Overrides::default();
    o.set("offline", a.offline.then_some(true))
        .set("domain_hint", a.domain_hint)
        .set("template_id", a.template_id)
        .set("max_retries", a.max_retries)
        .set("max_in_flight", a.max_in_flight)
        .set("requests_per_second", a.requests_per_second);
    let cfg = resolve::<ClientConfig>(a.config.as_deref(), &o)?;
    let source = Vocabulary::load(&a.vocab)?;
    let mut m: Vec<usize> = Vec::new();
    if let Some(m1) = a.m_level1 {
        m.push(m1);
        m.extend(a.m_level2);
    } else if a.m_level2.is_some() {
        return Err(AceError::ConfigError("--m-level2 needs --m-level1".into()).into());
    }

    let (vocab, warnings) = match &a.tree_file {
        Some(tree_file) => (
            trees_from_file(tree_file, source.actions(), (!m.is_empty()).then_some(&m[..]))?,
            vec![],
        ),
        None => {
            if m.is_empty() {
                return Err(AceError::ConfigError("--m-level1 is required unless --tree-file is given".into()).into());
            }
            let cache = a.cache_dir.as_deref().map(ResponseCache::open).transpose()?;
            let transport: Option<Box<dyn Transport>> = if cfg.value.offline {
                None
            } else {
                Some(Box::new(HttpTransport::from_env()?))
            };
            let client = LlmClient::new(transport, cache, cfg.value.clone());
            let built = build_trees(&client, source.actions(), &m)?;
            (built.vocabulary, built.warnings)
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    vocab.save(&a.out)?;

    let mut man = RunManifest::new("build-trees");
    man.config = serde_json::json!({"client": cfg.json, "m_per_level": m});
    man.config_sources = cfg.sources;
    man.input("vocab", &a.vocab).output(&a.out);
    if let Some(p) = &a.tree_file {
        man.input("tree_file", p);
    }
    if let Some(p) = &a.cache_dir {
        man.input("cache_dir", p);
    }
    man.vocab_hash = Some(vocab.content_hash());
    man.write(&sidecar(&a.out, "manifest.json"))?;
    println!("wrote {} trees to {}", vocab.trees().len(), a.out.display());
    Ok(())
}

fn sidecar(file: &Path, suffix: &str) -> PathBuf {
    let mut name = file.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn synth_data(a: SynthArgs) -> anyhow::Result<()> {
    let _lock = OutputLock::dir(&a.out)?;
    let mut o = Overrides::default();
    o.set("num_base", a.num_base)
        .set("num_novel", a.num_novel)
        .set("train_per_class", a.train_per_class)
        .set("test_per_class", a.test_per_class)
        .set("noise", a.noise)
        .set("seed", a.seed)
        .set("m_per_level", a.m_per_level);
    let cfg = resolve::<SyntheticConfig>(a.config.as_deref(), &o)?;
    let synth = generate_synthetic_dataset(&cfg.value)?;
    let ds = Dataset::from_synthetic(&synth, &a.dataset_id)?;
    let mut written = write_dataset(&a.out, &ds)?;
    let enc_path = a.out.join(ENCODERS_FILE);
    dataset::save_encoders(&enc_path, synth.encoders.params())?;
    written.push(enc_path);

    let mut man = RunManifest::new("synth-data");
    man.seed = Some(cfg.value.seed);
    man.config = cfg.json;
    man.config_sources = cfg.sources;
    for p in &written {
        man.output(p);
    }
    man.vocab_hash = Some(ds.vocab.content_hash());
    man.dataset_hash = Some(ds.content_hash()?);
    man.write(&a.out.join("synth-data.manifest.json"))?;
    println!(
        "wrote {} clips ({} base, {} novel classes) to {}",
        ds.records.len(),
        ds.manifest.base_classes.len(),
        ds.manifest.novel_classes.len(),
        a.out.display()
    );
    Ok(())
}

fn load_model(path: Option<&Path>, data_dir: &Path) -> anyhow::Result<(ToyEncoders, PathBuf)> {
    let path = path.map_or_else(|| data_dir.join(ENCODERS_FILE), Path::to_path_buf);
    let head = std::fs::read(&path).map_err(|e| AceError::IngestError {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let enc = if head.starts_with(b"ACE-CHECKPOINT") {
        ToyEncoders::from_params(TrainState::load(&path)?.params)?
    } else {
        dataset::load_encoders(&path)?
    };
    Ok((enc, path))
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let _lock = OutputLock::dir(&a.out)?;
    let mut o = Overrides::default();
    o.set("batch_size", a.batch_size)
        .set("epochs", a.epochs)
        .set("learning_rate", a.learning_rate)
        .set("momentum", a.momentum)
        .set("temperature", a.temperature)
        .set("m_per_level", a.m_per_level)
        .set("flags", a.flags)
        .set("rand_weight", a.rand_weight)
        .set("seed", a.seed)
        .set("trainable", a.trainable)
        .set("checkpoint_every", a.checkpoint_every);
    if a.resume.is_some() && (!o.is_empty() || a.config.is_some()) {
        return Err(AceError::ConfigError(
            "--resume uses the checkpoint's configuration; drop the other settings".into(),
        )
        .into());
    }
    let ds = load_dataset(&a.data)?;
    let vocab = ds.base_vocab()?;
    let data = ds.train_samples();
    let init_path = a
        .init
        .clone()
        .or_else(|| Some(a.data.join(ENCODERS_FILE)).filter(|p| p.exists()));
    let encoders = match &init_path {
        Some(p) => dataset::load_encoders(p)?,
        None => ToyEncoders::new(&ToyEncoderConfig {
            feature_dim: ds.feature_dim(),
            ..ToyEncoderConfig::default()
        })?,
    };

    let mut man = RunManifest::new("train");
    man.input("data", &a.data);
    if let Some(p) = &init_path {
        man.input("init", p);
    }
    let mut trainer = match &a.resume {
        Some(ckpt) => {
            man.input("resume", ckpt);
            let state = TrainState::load(ckpt)?;
            man.config = serde_json::to_value(&state.config)?;
            man.config_sources = [("*".to_string(), "checkpoint")].into();
            Trainer::resume(state, &data, &vocab, encoders)?
        }
        None => {
            let cfg = resolve::<TrainConfig>(a.config.as_deref(), &o)?;
            man.config = cfg.json;
            man.config_sources = cfg.sources;
            Trainer::new(cfg.value, &data, &vocab, encoders)?
        }
    };
    man.seed = Some(trainer.state().config.seed);
    man.vocab_hash = Some(ds.vocab.content_hash());
    man.dataset_hash = Some(ds.content_hash()?);

    let every = trainer.state().config.checkpoint_every;
    let out = a.out.clone();
    let mut periodic = Vec::new();
    trainer.run_with(|rec, state| {
        if every.is_some_and(|n| rec.iteration % n == 0) {
            let p = out.join(format!("checkpoint-{:06}.ckpt", rec.iteration));
            state.save(&p)?;
            periodic.push(p);
        }
        Ok(())
    })?;
    let (encoders, state) = trainer.into_parts();

    let model = a.out.join("model.json");
    dataset::save_encoders(&model, encoders.params())?;
    let ckpt = a.out.join("final.ckpt");
    state.save(&ckpt)?;
    let metrics = a.out.join("metrics.ndjson");
    std::fs::write(&metrics, metrics_log(&state.history))?;
    for p in periodic.iter().chain([&model, &ckpt, &metrics]) {
        man.output(p);
    }
    man.write(&a.out.join("train.manifest.json"))?;
    let means = state.epoch_means();
    println!(
        "trained {} iterations over {} epochs; last epoch mean loss {:.4}; model at {}",
        state.iteration,
        state.epoch,
        means.last().copied().unwrap_or(f64::NAN),
        model.display()
    );
    Ok(())
}

struct Inference {
    ds: Dataset,
    encoders: ToyEncoders,
    config: EvalConfig,
    man: RunManifest,
}

fn prepare_inference(name: &str, c: &InferenceArgs, extra: impl FnOnce(&mut Overrides)) -> anyhow::Result<Inference> {
    let ds = load_dataset(&c.data)?;
    let (encoders, model_path) = load_model(c.model.as_deref(), &c.data)?;
    let mut o = Overrides::default();
    o.set("mode", c.mode.map(EvalMode::from))
        .set("leaf_augment", c.no_leaf.then_some(false))
        .set("temperature", c.temperature)
        .set("seed", c.seed);
    extra(&mut o);
    let cfg = resolve::<EvalConfig>(c.config.as_deref(), &o)?;
    let mut man = RunManifest::new(name);
    man.seed = Some(cfg.value.seed);
    man.config = cfg.json;
    man.config_sources = cfg.sources;
    man.input("data", &c.data).input("model", &model_path);
    man.vocab_hash = Some(ds.vocab.content_hash());
    man.dataset_hash = Some(ds.content_hash()?);
    Ok(Inference {
        ds,
        encoders,
        config: cfg.value,
        man,
    })
}

fn split_of(ds: &Dataset, mode: EvalMode) -> anyhow::Result<(Vocabulary, Vec<ace_core::embedding::VideoSample>)> {
    Ok(match mode {
        EvalMode::Base => (ds.base_vocab()?, ds.base_test_samples()),
        EvalMode::Novel => (ds.novel_vocab()?, ds.novel_test_samples()),
    })
}

fn eval_cmd(a: EvalArgs) -> anyhow::Result<()> {
    let _lock = OutputLock::dir(&a.common.out)?;
    let Inference {
        ds,
        encoders,
        config,
        mut man,
    } = prepare_inference("eval", &a.common, |_| {})?;
    let (vocab, test) = split_of(&ds, config.mode)?;
    let metrics = match a.labels {
        EvalLabels::Root => evaluate(&config, &encoders, &vocab, &test)?,
        EvalLabels::Random => {
            let table = LabelTable::generate(&vocab, 2, config.seed)?;
            let single = LabelTable {
                runs: vec![table.runs[1].clone()],
            };
            let report = srt(
                &EvalConfig {
                    srt_runs: 1,
                    ..config.clone()
                },
                &encoders,
                &vocab,
                &test,
                &single,
            )?;
            eval::Metrics {
                accuracy: report.accuracy.mean,
                macro_f1: report.macro_f1.mean,
            }
        }
    };
    let out = a.common.out.join("eval.json");
    let body = serde_json::json!({
        "mode": config.mode,
        "labels": format!("{:?}", a.labels).to_lowercase(),
        "num_classes": vocab.len(),
        "num_clips": test.len(),
        "accuracy": metrics.accuracy,
        "macro_f1": metrics.macro_f1,
    });
    std::fs::write(&out, serde_json::to_string_pretty(&body)? + "\n")?;
    man.output(&out);
    man.write(&a.common.out.join("eval.manifest.json"))?;
    println!(
        "acc {:.2}  macro-F1 {:.2}  ({} clips)",
        metrics.accuracy,
        metrics.macro_f1,
        test.len()
    );
    Ok(())
}

fn srt_cmd(a: SrtArgs) -> anyhow::Result<()> {
    let _lock = OutputLock::dir(&a.common.out)?;
    let table_in = a.labels.as_deref().map(LabelTable::load).transpose()?;
    let runs = a.runs.or(table_in.as_ref().map(|t| t.runs.len()));
    let Inference {
        ds,
        encoders,
        config,
        mut man,
    } = prepare_inference("srt", &a.common, |o| {
        o.set("srt_runs", runs)
            .set(
                "std_kind",
                a.std.map(|s| match s {
                    StdArg::Population => StdKind::Population,
                    StdArg::Sample => StdKind::Sample,
                }),
            )
            .set(
                "leaf_source",
                a.leaf_source.map(|s| match s {
                    LeafSourceArg::Queried => LeafSource::Queried,
                    LeafSourceArg::Root => LeafSource::Root,
                }),
            );
    })?;
    let (vocab, test) = split_of(&ds, config.mode)?;
    let table = match table_in {
        Some(t) => {
            man.input("labels", a.labels.as_deref().expect("table came from --labels"));
            t
        }
        None => LabelTable::generate(&vocab, config.srt_runs, config.seed)?,
    };
    let report = srt(&config, &encoders, &vocab, &test, &table)?;
    let out = &a.common.out;
    let files = [
        (out.join("srt_labels.csv"), table.to_csv()),
        (out.join("srt_report.json"), report.to_json()),
        (out.join("srt_report.csv"), report.to_csv()),
    ];
    for (p, body) in &files {
        std::fs::write(p, body).with_context(|| format!("writing {}", p.display()))?;
        man.output(p);
    }
    man.write(&out.join("srt.manifest.json"))?;
    println!(
        "SRT over {} runs: acc {:.2} ± {:.2}  macro-F1 {:.2} ± {:.2}",
        report.runs.len(),
        report.accuracy.mean,
        report.accuracy.std,
        report.macro_f1.mean,
        report.macro_f1.std
    );
    Ok(())
}

fn projection_cmd(a: ProjectionArgs) -> anyhow::Result<()> {
    let _lock = OutputLock::dir(&a.out)?;
    let ds = load_dataset(&a.data)?;
    let (encoders, model_path) = load_model(a.model.as_deref(), &a.data)?;
    let vocab = match a.classes.as_str() {
        "base" => ds.base_vocab()?,
        "novel" => ds.novel_vocab()?,
        "all" => ds.vocab.clone(),
        other => {
            return Err(AceError::ConfigError(format!("--classes must be base, novel or all, got {other:?}")).into())
        }
    };
    let rows = export_projection(&encoders, &concept_items(&vocab), &PcaReducer::default())?;
    let out = a.out.join("projection.csv");
    std::fs::write(&out, projection_csv(&rows)?)?;
    let mut man = RunManifest::new("export-projection");
    man.config = serde_json::json!({"classes": a.classes, "reducer": "pca"});
    man.input("data", &a.data).input("model", &model_path).output(&out);
    man.vocab_hash = Some(ds.vocab.content_hash());
    man.dataset_hash = Some(ds.content_hash()?);
    man.write(&a.out.join("export-projection.manifest.json"))?;
    println!("wrote {} points to {}", rows.len(), out.display());
    Ok(())
}
