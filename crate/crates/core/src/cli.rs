//! The `aplt` command line.
//!
//! Every subcommand writes under an output directory: `--out` when given,
//! otherwise `$APLT_OUTPUT_ROOT/<subcommand>`, otherwise `runs/<subcommand>`.
//! Exit codes are [`EXIT_OK`], [`EXIT_USAGE`] and [`EXIT_RUNTIME`].

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, Mode, RunConfig};
use crate::data::{self, SyntheticSpec};
use crate::engine;
use crate::error::Error;
use crate::metrics::SUMMARY_CSV_HEADER;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const OUTPUT_ROOT_ENV: &str = "APLT_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "aplt", version, about = "Asynchronous pseudo-labeling and training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Gaussian-mixture dataset.
    Gen(GenArgs),
    /// Train a model and write metrics and a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split of a dataset.
    Eval(EvalArgs),
    /// Run FixMatch and APLT side by side and write pseudo-label trajectories.
    Compare(RunArgs),
    /// Run the component ablation grid.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 12 classes, 32 dimensions, 100 samples per class, heavy overlap.
    Hard,
    /// Same shape with overlap 0.1.
    Easy,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "hard")]
    pub preset: Preset,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// File stem of the written CSV and manifest.
    #[arg(long, default_value = "dataset")]
    pub name: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run config. Defaults to the hard synthetic benchmark.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set margin.lambda=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train on a CSV dataset instead of the configured source.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Aplt,
    Fixmatch,
    Supervised,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Aplt => Mode::Aplt,
            ModeArg::Fixmatch => Mode::Fixmatch,
            ModeArg::Supervised => Mode::Supervised,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Seeds to sweep; each seed regenerates data, split and initialization.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Replace an existing ablation CSV instead of appending to it.
    #[arg(long)]
    pub force: bool,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(command: &Command) -> CliResult<()> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

/// `--out`, else `$APLT_OUTPUT_ROOT/<sub>`, else `runs/<sub>`.
pub fn output_dir(explicit: Option<&Path>, sub: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(sub),
        _ => PathBuf::from("runs").join(sub),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(Error::io(dir, e)))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::runtime(Error::io(path, e)))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    file: &'a str,
    params: &'a SyntheticSpec,
    seed: u64,
    rows: usize,
    sha256: String,
}

fn cmd_gen(a: &GenArgs) -> CliResult<()> {
    let mut spec = match a.preset {
        Preset::Hard => SyntheticSpec::hard(a.seed),
        Preset::Easy => SyntheticSpec::easy(a.seed),
    };
    if let Some(c) = a.classes {
        spec.classes = c;
    }
    if let Some(d) = a.dim {
        spec.dim = d;
    }
    if let Some(n) = a.n_per_class {
        spec.n_per_class = n;
    }
    if let Some(o) = a.overlap {
        spec.overlap = o;
    }
    let ds = spec.generate().map_err(CliError::usage)?;

    let dir = output_dir(a.out.as_deref(), "gen");
    create_dir(&dir)?;
    let csv_name = format!("{}.csv", a.name);
    let csv_path = dir.join(&csv_name);
    data::save_csv(&ds, &csv_path).map_err(CliError::runtime)?;
    let bytes = fs::read(&csv_path).map_err(|e| CliError::runtime(Error::io(&csv_path, e)))?;
    let manifest = Manifest {
        file: &csv_name,
        params: &spec,
        seed: spec.seed,
        rows: ds.len(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(CliError::runtime)?;
    write_file(&dir.join(format!("{}.manifest.json", a.name)), text + "\n")?;
    println!("{} rows -> {} (sha256 {})", ds.len(), csv_path.display(), manifest.sha256);
    Ok(())
}

/// Resolves the run config from file, seed, dataset path and `--set`
/// overrides, in that order. Any failure is a usage error.
pub fn resolve_config(a: &RunArgs, mode: Option<Mode>) -> CliResult<RunConfig> {
    let base = match &a.config {
        Some(path) => RunConfig::load(path, &[]).map_err(CliError::usage)?,
        None => RunConfig::hard_benchmark(a.seed.unwrap_or(0)),
    };
    let mut pre = Vec::new();
    if let Some(seed) = a.seed {
        pre.push(format!("seed={seed}"));
        pre.push(format!("split.seed={seed}"));
        if matches!(base.data.source, DataSource::Synthetic(_)) {
            pre.push(format!("data.source.synthetic.seed={seed}"));
        }
    }
    let mut cfg = base.with_overrides(&pre).map_err(CliError::usage)?;
    if let Some(path) = &a.data {
        if !path.is_file() {
            return Err(CliError::usage(format!(
                "dataset not found: {}",
                path.display()
            )));
        }
        cfg.data.source = DataSource::Csv {
            path: path.clone(),
            num_classes: None,
        };
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg.with_overrides(&a.overrides).map_err(CliError::usage)
}

fn prepare(cfg: &RunConfig) -> CliResult<(data::FeatureDataset, data::FeatureDataset)> {
    cfg.prepare_data().map_err(|e| match e {
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::Csv(_)
        | Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::DimensionMismatch { .. }
        | Error::UnknownClass { .. } => CliError::usage(e),
        other => CliError::runtime(other),
    })
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.run, a.mode.map(Mode::from))?;
    let (train, test) = prepare(&cfg)?;
    let out = engine::run(&train, &test, &cfg).map_err(CliError::runtime)?;

    let dir = output_dir(a.run.out.as_deref(), "train");
    create_dir(&dir)?;
    write_file(&dir.join("config.json"), cfg.to_json_pretty() + "\n")?;
    write_file(&dir.join("metrics.ndjson"), out.metrics.to_ndjson())?;
    let summary = out.metrics.summary.as_ref().expect("run writes a summary");
    write_file(
        &dir.join("summary.csv"),
        format!("{SUMMARY_CSV_HEADER}\n{}\n", summary.csv_row()),
    )?;
    Checkpoint::new(out.model, out.bank)
        .save(dir.join("checkpoint.json"))
        .map_err(CliError::runtime)?;
    println!(
        "{}: final accuracy {:.4} after {} epochs ({} offline events) -> {}",
        engine::mode_name(cfg.mode),
        summary.final_accuracy,
        summary.epochs,
        summary.offline_events,
        dir.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    checkpoint: String,
    test_size: usize,
    proto_acc: Option<f64>,
    param_acc: f64,
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.run, None)?;
    let ck = Checkpoint::load(&a.checkpoint).map_err(CliError::usage)?;
    let (_, test) = prepare(&cfg)?;
    if test.dim() != ck.model.input_dim() || test.num_classes() != ck.model.num_classes() {
        return Err(CliError::usage(format!(
            "checkpoint expects {} features and {} classes, dataset has {} and {}",
            ck.model.input_dim(),
            ck.model.num_classes(),
            test.dim(),
            test.num_classes()
        )));
    }
    let (proto_acc, param_acc) =
        engine::evaluate(&ck.model, ck.bank.as_ref(), &test).map_err(CliError::runtime)?;
    let report = EvalReport {
        checkpoint: a.checkpoint.display().to_string(),
        test_size: test.len(),
        proto_acc,
        param_acc,
    };
    let dir = output_dir(a.run.out.as_deref(), "eval");
    create_dir(&dir)?;
    let text = serde_json::to_string_pretty(&report).map_err(CliError::runtime)?;
    write_file(&dir.join("eval.json"), text + "\n")?;
    match proto_acc {
        Some(p) => println!("prototype accuracy {p:.4}, parametric accuracy {param_acc:.4}"),
        None => println!("parametric accuracy {param_acc:.4} (checkpoint has no prototype bank)"),
    }
    Ok(())
}

fn cmd_compare(a: &RunArgs) -> CliResult<()> {
    let cfg = resolve_config(a, None)?;
    let (train, test) = prepare(&cfg)?;
    let (fm, aplt, rows) = engine::compare(&train, &test, &cfg).map_err(CliError::runtime)?;

    let dir = output_dir(a.out.as_deref(), "compare");
    create_dir(&dir)?;
    write_file(&dir.join("config.json"), cfg.to_json_pretty() + "\n")?;
    write_file(&dir.join("trajectory.csv"), engine::trajectory_csv(&rows))?;
    write_file(&dir.join("fixmatch.ndjson"), fm.metrics.to_ndjson())?;
    write_file(&dir.join("aplt.ndjson"), aplt.metrics.to_ndjson())?;
    let (f, p) = (
        fm.metrics.summary.expect("summary"),
        aplt.metrics.summary.expect("summary"),
    );
    write_file(
        &dir.join("summary.csv"),
        format!("{SUMMARY_CSV_HEADER}\n{}\n{}\n", f.csv_row(), p.csv_row()),
    )?;
    println!(
        "fixmatch {:.4}, aplt {:.4} -> {}",
        f.final_accuracy,
        p.final_accuracy,
        dir.display()
    );
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.run, None)?;
    let seeds = if a.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        a.seeds.clone()
    };
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let mut pre = vec![format!("seed={seed}"), format!("split.seed={seed}")];
        if matches!(cfg.data.source, DataSource::Synthetic(_)) {
            pre.push(format!("data.source.synthetic.seed={seed}"));
        }
        let c = cfg.with_overrides(&pre).map_err(CliError::usage)?;
        per_seed.push(c);
    }

    let mut results = Vec::new();
    for c in &per_seed {
        let (train, test) = prepare(c)?;
        let rows = engine::run_ablation_grid(&train, &test, c).map_err(CliError::runtime)?;
        for r in &rows {
            println!(
                "seed {} {:<20} {:.4}",
                r.seed,
                r.row.name(),
                r.summary.final_accuracy
            );
        }
        results.extend(rows);
    }

    let dir = output_dir(a.run.out.as_deref(), "ablate");
    create_dir(&dir)?;
    write_file(&dir.join("config.json"), cfg.to_json_pretty() + "\n")?;
    let path = dir.join("ablation.csv");
    let csv = engine::ablation_csv(&results);
    if a.force || !path.exists() {
        write_file(&path, csv)?;
    } else {
        let body: String = csv.lines().skip(1).map(|l| format!("{l}\n")).collect();
        let mut f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| CliError::runtime(Error::io(&path, e)))?;
        f.write_all(body.as_bytes())
            .map_err(|e| CliError::runtime(Error::io(&path, e)))?;
    }
    println!("{} rows -> {}", results.len(), path.display());
    Ok(())
}
