//! `centerpolar` command line: gen-data, train, eval, export-embeddings.

mod manifest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use manifest::RunManifest;

use crate::dataset::{generate_benchmark, load_csv, save_csv, write_csv, BenchmarkSpec, DataSet, LabeledSample};
use crate::error::{Error, Result};
use crate::expansion::{write_trajectories, ExpansionConfig};
use crate::retrieval::{evaluate, RankingMetric};
use crate::trainer::{Checkpoint, StrategyRegistry, TrainConfig, Trainer};

pub const TRAIN_FILE: &str = "train.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";

#[derive(Debug, Parser)]
#[command(name = "centerpolar", version, about = "Class-centric expansion and constraint for metric learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic benchmark as CSV files.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an encoder on <data>/train.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on every <data>/test_*.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ranking: Option<RankingMetric>,
    },
    /// Write embeddings of a CSV as id,label,domain,e0..
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// baseline, c4 (c4_only), c3e (c3e_only) or full
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dump_trajectories: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    /// Comma-separated 1-based epochs, e.g. 1,16,31
    #[arg(long, value_delimiter = ',')]
    expansion_epochs: Option<Vec<usize>>,
    /// First expansion epoch and period, e.g. 1:15
    #[arg(long, conflicts_with = "expansion_epochs")]
    expand_every: Option<String>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    ranking: Option<RankingMetric>,
}

impl clap::ValueEnum for RankingMetric {
    fn value_variants<'a>() -> &'a [Self] {
        &[RankingMetric::Euclidean, RankingMetric::Geodesic]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            RankingMetric::Euclidean => "euclidean",
            RankingMetric::Geodesic => "geodesic",
        }))
    }
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let command_line: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match cli.command {
        Command::GenData { spec, out } => gen_data(&spec, &out),
        Command::Train(a) => cmd_train(a, command_line),
        Command::Eval {
            checkpoint,
            data,
            out,
            ranking,
        } => cmd_eval(&checkpoint, &data, &out, ranking),
        Command::ExportEmbeddings { checkpoint, data, out } => export_embeddings(&checkpoint, &data, &out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 2 for bad input (missing or malformed files, bad flags), 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        e if e.is_usage() => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn gen_data(spec_path: &Path, out: &Path) -> Result<()> {
    let spec: BenchmarkSpec = read_json(spec_path)?;
    let bench = generate_benchmark(&spec)?;
    fs::create_dir_all(out)?;
    save_csv(&bench.train, &out.join(TRAIN_FILE))?;
    println!(
        "train: {} samples, classes {:?}",
        bench.train.len(),
        bench.train.classes()
    );
    for (name, ds) in &bench.tests {
        save_csv(ds, &out.join(format!("test_{name}.csv")))?;
        println!("test_{name}: {} samples, classes {:?}", ds.len(), ds.classes());
    }
    Ok(())
}

/// Every `test_<domain>.csv` in `dir`, keyed by domain.
fn load_tests(dir: &Path) -> Result<BTreeMap<String, DataSet>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(domain) = name.strip_prefix("test_").and_then(|n| n.strip_suffix(".csv")) {
            let ds = load_csv(&path).map_err(|e| with_file(e, &path))?;
            out.insert(domain.to_string(), ds);
        }
    }
    Ok(out)
}

fn with_file(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn parse_every(spec: &str, total: usize) -> Result<std::collections::BTreeSet<usize>> {
    let bad = || Error::Config(format!("--expand-every expects START:PERIOD, got {spec:?}"));
    let (a, b) = spec.split_once(':').ok_or_else(bad)?;
    let start = a.trim().parse().map_err(|_| bad())?;
    let every = b.trim().parse().map_err(|_| bad())?;
    Ok(ExpansionConfig::every(start, every, total))
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = &a.ablation {
        c.ablation = v.clone();
    }
    if let Some(v) = a.epochs {
        c.total_epochs = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.lr {
        c.lr_theta = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.lambda {
        c.loss.lambda = v;
    }
    if let Some(v) = a.margin {
        c.loss.margin_m = v;
    }
    if let Some(v) = a.iterations {
        c.expansion.iterations = v;
    }
    if let Some(v) = a.step_size {
        c.expansion.step_size = v;
    }
    if let Some(v) = &a.expansion_epochs {
        c.expansion.epochs = v.iter().copied().collect();
    }
    if let Some(v) = &a.expand_every {
        c.expansion.epochs = parse_every(v, c.total_epochs)?;
    }
    if let Some(v) = a.embed_dim {
        c.encoder.embed_dim = v;
    }
    if let Some(v) = a.eval_every {
        c.eval_every = v;
    }
    if let Some(v) = a.ranking {
        c.ranking = v;
    }
    let registry = StrategyRegistry::builtin();
    c.ablation = registry.resolve(&c.ablation)?.to_string();
    c.validate(&registry)?;
    Ok(c)
}

fn cmd_train(a: TrainArgs, command_line: Vec<String>) -> Result<()> {
    let started = manifest::unix_now();
    let clock = Instant::now();
    let config = resolve_config(&a)?;
    let train_path = a.data.join(TRAIN_FILE);
    let train = load_csv(&train_path).map_err(|e| with_file(e, &train_path))?;
    let tests = load_tests(&a.data)?;

    let mut inputs: Vec<PathBuf> = vec![train_path];
    inputs.extend(tests.keys().map(|d| a.data.join(format!("test_{d}.csv"))));
    inputs.extend(a.config.clone());

    let mut trainer = Trainer::new(&train, config.clone())?.with_tests(&tests);
    if a.dump_trajectories.is_some() {
        trainer = trainer.record_trajectories();
    }
    trainer.run()?;
    let trajectories = trainer.trajectories().map(<[_]>::to_vec);
    let epochs = trainer.epoch();
    let report = trainer.into_report(clock.elapsed().as_secs_f64());

    fs::create_dir_all(&a.out)?;
    let mut artifacts = BTreeMap::new();
    let ck_path = a.out.join(CHECKPOINT_FILE);
    Checkpoint::new(&report.final_model, &config, epochs).save(&ck_path)?;
    artifacts.insert("checkpoint".to_string(), ck_path.display().to_string());
    let report_path = a.out.join(REPORT_FILE);
    write_json(&report_path, &report)?;
    artifacts.insert("report".to_string(), report_path.display().to_string());
    if let (Some(dir), Some(rows)) = (&a.dump_trajectories, trajectories) {
        fs::create_dir_all(dir)?;
        let path = dir.join(TRAJECTORY_FILE);
        write_trajectories(BufWriter::new(File::create(&path)?), &rows)?;
        artifacts.insert("trajectories".to_string(), path.display().to_string());
    }

    for (i, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>3}  loss {loss:.6}", i + 1);
    }
    if let Some((epoch, last)) = report.evaluations.iter().next_back() {
        println!("evaluation after epoch {epoch}:");
        print!("{}", last.to_table());
    }

    let m = RunManifest {
        command_line,
        seed: config.seed,
        input_hash: manifest::hash_inputs(&inputs, &config)?,
        config,
        artifacts,
        call_counts: report.call_counts.clone(),
        started_unix: started,
        finished_unix: manifest::unix_now(),
        wall_clock_seconds: report.wall_clock_seconds,
    };
    write_json(&a.out.join(MANIFEST_FILE), &m)
}

fn load_model(checkpoint: &Path) -> Result<crate::trainer::EncoderModel> {
    Checkpoint::load(checkpoint)?.model()
}

fn cmd_eval(checkpoint: &Path, data: &Path, out: &Path, ranking: Option<RankingMetric>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model()?;
    let tests = load_tests(data)?;
    if tests.is_empty() {
        return Err(Error::Config(format!("no test_*.csv files in {}", data.display())));
    }
    let report = evaluate(&model, &tests, ranking.unwrap_or(ck.config.ranking))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_json(out, &report)?;
    let table = report.to_table();
    fs::write(out.with_extension("txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn export_embeddings(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = load_model(checkpoint)?;
    let ds = load_csv(data).map_err(|e| with_file(e, data))?;
    if let Some(d) = ds.dim().filter(|&d| d != model.input_dim()) {
        return Err(Error::Schema(format!(
            "{} has {d} features but the checkpoint expects {}",
            data.display(),
            model.input_dim()
        )));
    }
    let mut rows = Vec::with_capacity(ds.len());
    for s in ds.samples() {
        rows.push(LabeledSample {
            id: s.id,
            features: model.forward(&s.features)?,
            class_id: s.class_id,
            domain: s.domain.clone(),
        });
    }
    let embedded = DataSet::new(rows)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_csv(BufWriter::new(File::create(out)?), &embedded, "e")?;
    println!("wrote {} embeddings to {}", embedded.len(), out.display());
    Ok(())
}
