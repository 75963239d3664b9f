//! Command-line entry points: `synth`, `train-source`, `simulate`, `grid`,
//! `evaluate`, `analyze` and `serve`.

pub mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use alcoref::acquisition::Strategy;
use alcoref::active_loop::{
    aggregate, enumerate_runs, read_timings_csv, run_grid_with, timing_records, write_aggregate_csv, write_cycles_csv,
    write_timings_csv, ActiveLearner, CycleConfig, GridSpec, ReadBudget, RunManifest, RunResult,
};
use alcoref::analysis::{corpus_error_report, timing_report, TimingRecord};
use alcoref::clusterer::infer_corpus;
use alcoref::corpus::{load_corpus, synth_generate, write_corpus, Document, FeatureConfig, Featurizer, SynthConfig};
use alcoref::metrics::evaluate;
use alcoref::scorer::{train, Hyperparams, Model, ModelDims, ModelParams, TrainingData};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{existing, required, FileConfig, HyperOverrides};

#[derive(Debug, Parser)]
#[command(name = "alcoref", version, about = "Active learning for incremental coreference")]
pub struct Cli {
    /// TOML config file; flags and environment variables override it.
    #[arg(long, global = true, env = "ALCOREF_CONFIG")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus as JSON lines.
    Synth(SynthArgs),
    /// Train a source model on a fully annotated corpus.
    TrainSource(TrainSourceArgs),
    /// Simulate active learning with the gold oracle.
    Simulate(RunArgs),
    /// Run a grid of simulations and aggregate them.
    Grid(GridArgs),
    /// Score a model on a test corpus.
    Evaluate(EvaluateArgs),
    /// Summarize span types, errors and timings of finished runs.
    Analyze(AnalyzeArgs),
    /// Start the annotation service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "ALCOREF_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "ALCOREF_N_DOCS", default_value_t = 50)]
    pub n_docs: usize,
    #[arg(long, env = "ALCOREF_TOKENS_PER_DOC", default_value_t = 60)]
    pub tokens_per_doc: usize,
    #[arg(long, env = "ALCOREF_N_ENTITIES", default_value_t = 6)]
    pub n_entities: usize,
    #[arg(long, env = "ALCOREF_VOCAB_SHIFT", default_value_t = 0.0)]
    pub vocab_shift: f64,
    #[arg(long, env = "ALCOREF_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    #[arg(long = "epochs", env = "ALCOREF_EPOCHS")]
    pub max_epochs: Option<usize>,
    #[arg(long = "patience", env = "ALCOREF_PATIENCE")]
    pub early_stop_patience: Option<usize>,
    #[arg(long = "lr", env = "ALCOREF_LR")]
    pub learning_rate: Option<f64>,
}

impl HyperArgs {
    fn overrides(&self) -> HyperOverrides {
        HyperOverrides {
            max_epochs: self.max_epochs,
            early_stop_patience: self.early_stop_patience,
            learning_rate: self.learning_rate,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainSourceArgs {
    /// Fully annotated source corpus.
    #[arg(long, env = "ALCOREF_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Output directory for `source.ckpt` and `train_report.json`.
    #[arg(long, env = "ALCOREF_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "ALCOREF_SEED")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Source model checkpoint.
    #[arg(long, env = "ALCOREF_MODEL")]
    pub model: Option<PathBuf>,
    /// Unlabeled target corpus to sample from (gold clusters act as the oracle).
    #[arg(long, env = "ALCOREF_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long, env = "ALCOREF_TEST")]
    pub test: Option<PathBuf>,
    #[arg(long, env = "ALCOREF_STRATEGY")]
    pub strategy: Option<Strategy>,
    #[arg(long, env = "ALCOREF_K")]
    pub k: Option<usize>,
    /// Documents read per cycle, or "unconstrained".
    #[arg(long, env = "ALCOREF_M")]
    pub m: Option<ReadBudget>,
    #[arg(long, env = "ALCOREF_CYCLES")]
    pub cycles: Option<usize>,
    #[arg(long, env = "ALCOREF_REPEATS")]
    pub repeats: Option<usize>,
    #[arg(long, env = "ALCOREF_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "ALCOREF_OUT")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, env = "ALCOREF_KS", value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long, env = "ALCOREF_MS", value_delimiter = ',')]
    pub ms: Option<Vec<ReadBudget>>,
    #[arg(long, env = "ALCOREF_STRATEGIES", value_delimiter = ',')]
    pub strategies: Option<Vec<Strategy>>,
    #[arg(long, env = "ALCOREF_JOBS")]
    pub jobs: Option<usize>,
    /// Skip runs whose manifest is marked completed.
    #[arg(long, env = "ALCOREF_RESUME")]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = "ALCOREF_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, env = "ALCOREF_TEST")]
    pub test: Option<PathBuf>,
    /// Optional JSON report path.
    #[arg(long, env = "ALCOREF_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory holding run subdirectories, as written by `simulate` or `grid`.
    #[arg(long, env = "ALCOREF_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "ALCOREF_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, env = "ALCOREF_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long, env = "ALCOREF_TEST")]
    pub test: Option<PathBuf>,
    #[arg(long, env = "ALCOREF_HOST")]
    pub host: Option<IpAddr>,
    #[arg(long, env = "ALCOREF_PORT")]
    pub port: Option<u16>,
    #[arg(long, env = "ALCOREF_SEED")]
    pub seed: Option<u64>,
    /// Sessions are restored from and written back to this directory.
    #[arg(long, env = "ALCOREF_LOG_DIR")]
    pub log_dir: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::TrainSource(a) => train_source(&a, &file),
        Command::Simulate(a) => simulate(&a, &file),
        Command::Grid(a) => grid(&a, &file),
        Command::Evaluate(a) => evaluate_cmd(&a, &file),
        Command::Analyze(a) => analyze(&a, &file),
        Command::Serve(a) => serve(&a, &file),
    }
}

fn load_docs(path: PathBuf, what: &str) -> Result<Vec<Document>> {
    let path = existing(path, what)?;
    load_corpus(&path).with_context(|| format!("loading {what} {}", path.display()))
}

fn load_model(path: PathBuf) -> Result<ModelParams> {
    let path = existing(path, "model checkpoint")?;
    ModelParams::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let docs = synth_generate(&SynthConfig {
        n_docs: a.n_docs,
        tokens_per_doc: a.tokens_per_doc,
        n_entities: a.n_entities,
        vocab_shift: a.vocab_shift,
        seed: a.seed,
        ..Default::default()
    })?;
    if let Some(parent) = a.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_corpus(&a.out, &docs)?;
    println!("wrote {} documents to {}", docs.len(), a.out.display());
    Ok(())
}

pub fn train_source(a: &TrainSourceArgs, file: &FileConfig) -> Result<()> {
    let docs = load_docs(required(a.corpus.clone(), file.paths.corpus.clone(), "corpus")?, "corpus")?;
    let out = required(a.out.clone(), file.paths.out.clone(), "out")?;
    let mut hyper = file.hyper.apply(&a.hyper.overrides(), Hyperparams::default())?;
    hyper.seed = a.seed.or(file.run.seed).unwrap_or(hyper.seed);
    let fc = FeatureConfig::default();
    let f = Featurizer::hashed(fc);
    let init = ModelParams::init(ModelDims::new(f.dim()), hyper, fc);
    let data = TrainingData::full_gold(&docs, &fc, &hyper)?;
    let (model, report) = train(&init, &f, &data, &hyper)?;
    std::fs::create_dir_all(&out)?;
    model.save(out.join("source.ckpt"))?;
    write_json(&out.join("train_report.json"), &report)?;
    println!(
        "trained on {} documents, best epoch {} of {}; checkpoint {}",
        docs.len(),
        report.best_epoch,
        report.epochs.len(),
        out.join("source.ckpt").display()
    );
    Ok(())
}

struct Inputs {
    learner: ActiveLearner,
    paths: BTreeMap<String, String>,
}

fn learner_inputs(run: &RunArgs, file: &FileConfig, need_test: bool) -> Result<Inputs> {
    let model_path = required(run.model.clone(), file.paths.model.clone(), "model")?;
    let corpus_path = required(run.corpus.clone(), file.paths.corpus.clone(), "corpus")?;
    let test_path = run.test.clone().or(file.paths.test.clone());
    if need_test && test_path.is_none() {
        bail!("missing --test (flag, ALCOREF_TEST or config file)");
    }
    let source = load_model(model_path.clone())?;
    let target = load_docs(corpus_path.clone(), "corpus")?;
    let test = match &test_path {
        Some(p) => load_docs(p.clone(), "test corpus")?,
        None => Vec::new(),
    };
    let hyper = file.hyper.apply(&run.hyper.overrides(), source.hyper)?;
    let features = Featurizer::hashed(source.features);
    let learner = ActiveLearner::new(source, features, hyper, target, test)?;
    let mut paths = BTreeMap::new();
    paths.insert("model".into(), model_path.display().to_string());
    paths.insert("corpus".into(), corpus_path.display().to_string());
    if let Some(p) = test_path {
        paths.insert("test".into(), p.display().to_string());
    }
    Ok(Inputs { learner, paths })
}

fn cycle_config(run: &RunArgs, file: &FileConfig) -> Result<CycleConfig> {
    let d = CycleConfig::default();
    let c = CycleConfig {
        k: run.k.or(file.run.k).unwrap_or(d.k),
        m: run.m.or(file.run.m).unwrap_or(d.m),
        cycles: run.cycles.or(file.run.cycles).unwrap_or(d.cycles),
        strategy: run.strategy.or(file.run.strategy).unwrap_or(d.strategy),
        seed: run.seed.or(file.run.seed).unwrap_or(d.seed),
        repeats: run.repeats.or(file.run.repeats).unwrap_or(d.repeats),
    };
    c.validate()?;
    Ok(c)
}

const ARTIFACTS: [(&str, &str); 5] = [
    ("cycles", "cycles.csv"),
    ("timings", "timings.csv"),
    ("labels", "labels.jsonl"),
    ("result", "result.json"),
    ("baseline", "baseline.json"),
];

/// Writes everything except checkpoints for one finished run and marks its
/// manifest completed.
fn write_run(dir: &Path, run: &RunResult, inputs: &BTreeMap<String, String>, hyper: Hyperparams) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_cycles_csv(File::create(dir.join("cycles.csv"))?, &run.cycles)?;
    write_timings_csv(File::create(dir.join("timings.csv"))?, &timing_records(&run.cycles))?;
    let mut labels = BufWriter::new(File::create(dir.join("labels.jsonl"))?);
    for l in &run.labels {
        writeln!(labels, "{}", serde_json::to_string(l)?)?;
    }
    labels.flush()?;
    write_json(&dir.join("result.json"), run)?;
    write_json(&dir.join("baseline.json"), &run.baseline)?;
    let mut manifest = RunManifest::new(run.run_id.clone(), run.config.clone(), run.repeat, run.seed, hyper);
    manifest.inputs = inputs.clone();
    for (name, file) in ARTIFACTS {
        manifest.artifacts.insert(name.into(), file.into());
    }
    if dir.join("checkpoints").exists() {
        manifest.artifacts.insert("checkpoints".into(), "checkpoints".into());
    }
    manifest.completed = true;
    manifest.save(dir.join("manifest.json"))?;
    Ok(())
}

fn print_run(run: &RunResult) {
    let last = run.cycles.last().map(|c| c.eval.avg_f1).unwrap_or(run.baseline.avg_f1);
    println!(
        "{}: Avg F1 {:.4} -> {:.4} with {} labels",
        run.run_id,
        run.baseline.avg_f1,
        last,
        run.labels.len()
    );
}

pub fn simulate(a: &RunArgs, file: &FileConfig) -> Result<()> {
    let config = cycle_config(a, file)?;
    let out = required(a.out.clone(), file.paths.out.clone(), "out")?;
    let inputs = learner_inputs(a, file, true)?;
    let learner = &inputs.learner;
    for repeat in 0..config.repeats {
        let dir = out.join(config.run_id(repeat));
        let checkpoints = dir.join("checkpoints");
        std::fs::create_dir_all(&checkpoints)?;
        let mut manifest = RunManifest::new(config.run_id(repeat), config.clone(), repeat, config.run_seed(repeat), learner.hyper);
        manifest.inputs = inputs.paths.clone();
        manifest.save(dir.join("manifest.json"))?;
        let run = learner.simulate_with(&config, repeat, |state, report| {
            state.model.save(checkpoints.join(format!("cycle-{}.ckpt", report.cycle)))
        })?;
        write_run(&dir, &run, &inputs.paths, learner.hyper)?;
        print_run(&run);
    }
    Ok(())
}

fn grid_spec(a: &GridArgs, file: &FileConfig) -> Result<GridSpec> {
    let base = cycle_config(&a.run, file)?;
    let spec = GridSpec {
        ks: a.ks.clone().or(file.grid.ks.clone()).unwrap_or(vec![base.k]),
        ms: a.ms.clone().or(file.grid.ms.clone()).unwrap_or(vec![base.m]),
        strategies: a
            .strategies
            .clone()
            .or(file.grid.strategies.clone())
            .unwrap_or(vec![base.strategy]),
        cycles: base.cycles,
        seed: base.seed,
        repeats: base.repeats,
    };
    if spec.ks.is_empty() || spec.ms.is_empty() || spec.strategies.is_empty() {
        bail!("grid needs at least one value each for ks, ms and strategies");
    }
    for c in spec.configs() {
        c.validate()?;
    }
    Ok(spec)
}

fn completed_run(dir: &Path) -> Option<RunResult> {
    let manifest = RunManifest::load(dir.join("manifest.json")).ok()?;
    if !manifest.completed {
        return None;
    }
    let text = std::fs::read_to_string(dir.join("result.json")).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn grid(a: &GridArgs, file: &FileConfig) -> Result<()> {
    let spec = grid_spec(a, file)?;
    let out = required(a.run.out.clone(), file.paths.out.clone(), "out")?;
    let jobs = a.jobs.or(file.grid.jobs).unwrap_or(1);
    if jobs == 0 {
        bail!("--jobs must be positive");
    }
    let inputs = learner_inputs(&a.run, file, true)?;
    let runs = enumerate_runs(&spec.configs());
    let mut done: BTreeMap<String, RunResult> = BTreeMap::new();
    if a.resume {
        for (c, r) in &runs {
            if let Some(run) = completed_run(&out.join(c.run_id(*r))) {
                done.insert(run.run_id.clone(), run);
            }
        }
    }
    let pending: Vec<_> = runs
        .iter()
        .filter(|(c, r)| !done.contains_key(&c.run_id(*r)))
        .cloned()
        .collect();
    println!("{} runs, {} already completed, {} to run with {jobs} jobs", runs.len(), done.len(), pending.len());
    let hyper = inputs.learner.hyper;
    let fresh = run_grid_with(&inputs.learner, &pending, jobs, |run| {
        write_run(&out.join(&run.run_id), run, &inputs.paths, hyper)
            .map_err(|e| alcoref::Error::Config(format!("writing {}: {e:#}", run.run_id)))?;
        print_run(run);
        Ok(())
    })?;
    for run in fresh {
        done.insert(run.run_id.clone(), run);
    }
    let ordered: Vec<RunResult> = runs
        .iter()
        .filter_map(|(c, r)| done.remove(&c.run_id(*r)))
        .collect();
    let rows = aggregate(&ordered);
    std::fs::create_dir_all(&out)?;
    write_aggregate_csv(File::create(out.join("aggregate.csv"))?, &rows)?;
    write_json(&out.join("grid.json"), &spec)?;
    println!("wrote {} aggregate rows to {}", rows.len(), out.join("aggregate.csv").display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    model: String,
    test: String,
    documents: usize,
    eval: alcoref::metrics::EvalResult,
    errors: alcoref::analysis::ErrorCounts,
}

pub fn evaluate_cmd(a: &EvaluateArgs, file: &FileConfig) -> Result<()> {
    let model_path = required(a.model.clone(), file.paths.model.clone(), "model")?;
    let test_path = required(a.test.clone(), file.paths.test.clone(), "test")?;
    let model = load_model(model_path.clone())?;
    let test = load_docs(test_path.clone(), "test corpus")?;
    let features = Featurizer::hashed(model.features);
    let pred: Vec<_> = infer_corpus(Model::new(&model, &features), &test)?
        .into_iter()
        .map(|d| d.clusters)
        .collect();
    let report = EvalReport {
        model: model_path.display().to_string(),
        test: test_path.display().to_string(),
        documents: test.len(),
        eval: evaluate(&test, &pred, false)?,
        errors: corpus_error_report(&test, &pred)?,
    };
    let e = &report.eval;
    println!(
        "Avg F1 {:.4}  MUC {:.4}  B3 {:.4}  CEAF-phi4 {:.4}  mention {:.4}",
        e.avg_f1, e.muc.f1, e.b3.f1, e.ceaf.f1, e.mention.f1
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn run_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out)
        .with_context(|| format!("reading {}", out.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn analyze(a: &AnalyzeArgs, file: &FileConfig) -> Result<()> {
    let out = existing(required(a.out.clone(), file.paths.out.clone(), "out")?, "run directory")?;
    let mut runs = Vec::new();
    let mut timings: Vec<TimingRecord> = Vec::new();
    for dir in run_dirs(&out)? {
        if let Some(run) = completed_run(&dir) {
            runs.push(run);
            timings.extend(read_timings_csv(dir.join("timings.csv"))?);
        }
    }
    if runs.is_empty() {
        bail!("no completed runs under {}", out.display());
    }

    let mut types = csv_writer(&out.join("span_types.csv"))?;
    types.write_record(["run_id", "cycle", "strategy", "entity_mentions", "non_entities", "pronouns", "singletons"])?;
    let mut errors = csv_writer(&out.join("errors.csv"))?;
    errors.write_record([
        "run_id",
        "cycle",
        "strategy",
        "missing_entity",
        "extra_entity",
        "missing_mention",
        "extra_mention",
        "divided_entity",
        "conflated_entity",
    ])?;
    for run in &runs {
        for c in &run.cycles {
            let (t, e) = (&c.span_types, &c.errors);
            let head = [run.run_id.clone(), c.cycle.to_string(), c.strategy.to_string()];
            types.write_record(head.iter().cloned().chain(
                [t.entity_mentions, t.non_entities, t.pronouns, t.singletons].map(|v| v.to_string()),
            ))?;
            errors.write_record(head.into_iter().chain(
                [
                    e.missing_entity,
                    e.extra_entity,
                    e.missing_mention,
                    e.extra_mention,
                    e.divided_entity,
                    e.conflated_entity,
                ]
                .map(|v| v.to_string()),
            ))?;
        }
    }
    types.flush()?;
    errors.flush()?;

    let summary = timing_report(&timings);
    let mut t = csv_writer(&out.join("timing_summary.csv"))?;
    for s in &summary {
        t.serialize(s)?;
        println!(
            "{:<14} {:>4} batches  sample {:>8.3}s  train {:>8.3}s",
            s.strategy, s.batches, s.mean_sample_seconds, s.mean_train_seconds
        );
    }
    t.flush()?;
    println!("analyzed {} runs in {}", runs.len(), out.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?)
}

pub fn serve(a: &ServeArgs, file: &FileConfig) -> Result<()> {
    let run = RunArgs {
        model: a.model.clone(),
        corpus: a.corpus.clone(),
        test: a.test.clone(),
        hyper: a.hyper.clone(),
        ..Default::default()
    };
    let inputs = learner_inputs(&run, file, false)?;
    let host = match a.host {
        Some(h) => h,
        None => file
            .serve
            .host
            .as_deref()
            .unwrap_or("127.0.0.1")
            .parse()
            .context("invalid host")?,
    };
    let port = a.port.or(file.serve.port).unwrap_or(8080);
    let seed = a.seed.or(file.run.seed).unwrap_or(0);
    let log_dir = a.log_dir.clone().or(file.paths.log_dir.clone());
    let state = alcoref_server::AppState::new(inputs.learner, seed);
    if let Some(dir) = &log_dir {
        let n = state.restore(dir).with_context(|| format!("restoring sessions from {}", dir.display()))?;
        if n > 0 {
            tracing::info!(sessions = n, "restored sessions");
        }
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(alcoref_server::serve(state, SocketAddr::new(host, port), log_dir, shutdown_signal()))?;
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}
