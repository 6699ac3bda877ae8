//! `kamred`: config-driven experiments on quasi-periodic sl(2,ℝ) cocycles.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use commands::{ErrorBlock, Outcome};
use config::{Command, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "kamred", version, about = "Reducibility experiments for quasi-periodic sl(2,R) cocycles")]
struct Cli {
    #[command(subcommand)]
    action: Action,
}

#[derive(clap::Args, Debug, Clone)]
struct RunArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random perturbations (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Action {
    /// Tabulate Ψ(K) with witnesses.
    PsiScan(RunArgs),
    /// Classify the arithmetic and quasi-analyticity conditions.
    Conditions(RunArgs),
    /// Run the KAM reduction.
    Reduce(RunArgs),
    /// Fibered rotation number against horizon.
    Rotation(RunArgs),
    /// Maximal Lyapunov exponent against horizon.
    Lyapunov(RunArgs),
    /// Build a non-reducible example and its evidence.
    Counterexample(RunArgs),
    /// Run the command named inside the config.
    Run(RunArgs),
    /// Run several configs concurrently, one subdirectory each.
    Batch {
        /// TOML file with `configs = [...]`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

const EXIT_ERROR: u8 = 1;
const EXIT_FAILED: u8 = 2;

struct Prepared {
    command: Command,
    config: ExperimentConfig,
    out: PathBuf,
}

fn prepare(subcommand: Option<Command>, args: &RunArgs) -> Result<Prepared> {
    let mut cfg = match &args.config {
        Some(p) => config::load_config(p)?,
        None => config::parse_config("")?,
    };
    let command = match (subcommand, cfg.command) {
        (Some(s), Some(c)) if s != c => {
            bail!("config names command '{}' but '{}' was requested", c.name(), s.name())
        }
        (Some(s), _) => s,
        (None, Some(c)) => c,
        (None, None) => bail!("the config does not name a command; use a subcommand or set `command`"),
    };
    cfg.command = Some(command);
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    let out = cfg.output.dir.clone();
    Ok(Prepared { command, config: cfg, out })
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs one experiment and writes `report.json`, `run_info.json` and the
/// data files. Returns the report status.
fn execute(p: &Prepared) -> Result<&'static str> {
    std::fs::create_dir_all(&p.out).with_context(|| format!("creating {}", p.out.display()))?;
    let started = unix_seconds();
    let t = Instant::now();
    let outcome = commands::run(p.command, &p.config);
    let elapsed = t.elapsed().as_secs_f64();
    let (status, result, error, files) = match outcome {
        Ok(Outcome { result, files, failure: None }) => ("ok", result, Value::Null, files),
        Ok(Outcome { result, files, failure: Some(f) }) => ("failed", result, serde_json::to_value(f)?, files),
        Err(e) => ("error", Value::Null, serde_json::to_value(ErrorBlock::from_anyhow(&e))?, Vec::new()),
    };
    commands::write_outcome_files(&p.out, &files)?;
    let report = json!({
        "command": p.command.name(),
        "status": status,
        "config": p.config,
        "result": result,
        "error": error,
    });
    write_json(&p.out.join("report.json"), &report)?;
    let mut names: Vec<&str> = files.iter().map(|f| f.0.as_str()).collect();
    names.push("report.json");
    let info = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "elapsed_seconds": elapsed,
        "execution": p.config.execution,
        "parallel_feature": cfg!(feature = "parallel"),
        "threads": std::thread::available_parallelism().map_or(1, |n| n.get()),
        "files": names,
    });
    write_json(&p.out.join("run_info.json"), &info)?;
    if status != "ok" {
        eprintln!("{}: {status}: {}", p.command.name(), error["message"].as_str().unwrap_or(""));
    } else {
        eprintln!("{}: ok ({elapsed:.2} s) -> {}", p.command.name(), p.out.display());
    }
    Ok(status)
}

fn exit_for(status: &str) -> ExitCode {
    match status {
        "ok" => ExitCode::SUCCESS,
        "failed" => ExitCode::from(EXIT_FAILED),
        _ => ExitCode::from(EXIT_ERROR),
    }
}

/// Reports an error that happened before any experiment could start.
fn setup_error(err: &anyhow::Error, out: Option<&Path>, command: Option<Command>) -> ExitCode {
    let block = ErrorBlock::from_anyhow(err);
    eprintln!("error [{}]: {}", block.kind, block.message);
    if let Some(dir) = out {
        let report = json!({
            "command": command.map(Command::name),
            "status": "error",
            "config": Value::Null,
            "result": Value::Null,
            "error": block,
        });
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = write_json(&dir.join("report.json"), &report);
        }
    }
    ExitCode::from(EXIT_ERROR)
}

fn run_single(subcommand: Option<Command>, args: RunArgs) -> ExitCode {
    match prepare(subcommand, &args) {
        Ok(p) => match execute(&p) {
            Ok(status) => exit_for(status),
            Err(e) => setup_error(&e, None, Some(p.command)),
        },
        Err(e) => setup_error(&e, args.out.as_deref(), subcommand),
    }
}

fn run_batch(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    let batch = match config::load_batch(&config) {
        Ok(b) => b,
        Err(e) => return setup_error(&e, out.as_deref(), None),
    };
    let root = out.unwrap_or_else(|| PathBuf::from("out"));
    let jobs = batch
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, batch.configs.len());
    let next = AtomicUsize::new(0);
    let statuses: Mutex<Vec<(usize, Value)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(path) = batch.configs.get(i) else { break };
                let stem = path.file_stem().map_or_else(|| format!("run{i}"), |s| s.to_string_lossy().into_owned());
                let dir = root.join(format!("{i:02}_{stem}"));
                let args = RunArgs { config: Some(path.clone()), out: Some(dir.clone()), seed };
                let status = match prepare(None, &args).and_then(|p| execute(&p)) {
                    Ok(st) => st.to_string(),
                    Err(e) => {
                        let b = ErrorBlock::from_anyhow(&e);
                        eprintln!("{}: error [{}]: {}", path.display(), b.kind, b.message);
                        let _ = std::fs::create_dir_all(&dir);
                        let _ = write_json(
                            &dir.join("report.json"),
                            &json!({ "command": Value::Null, "status": "error", "config": Value::Null,
                                     "result": Value::Null, "error": b }),
                        );
                        "error".into()
                    }
                };
                let entry = json!({ "config": path, "out": dir, "status": status });
                statuses.lock().unwrap().push((i, entry));
            });
        }
    });
    let mut statuses = statuses.into_inner().unwrap();
    statuses.sort_by_key(|e| e.0);
    let worst = statuses
        .iter()
        .map(|e| e.1["status"].as_str().unwrap_or("error").to_string())
        .max_by_key(|s| match s.as_str() {
            "ok" => 0,
            "failed" => 1,
            _ => 2,
        })
        .unwrap_or_else(|| "ok".into());
    let summary = json!({
        "batch": config,
        "jobs": jobs,
        "runs": statuses.into_iter().map(|e| e.1).collect::<Vec<_>>(),
    });
    if let Err(e) = std::fs::create_dir_all(&root).map_err(anyhow::Error::from).and_then(|_| write_json(&root.join("batch.json"), &summary)) {
        return setup_error(&e, None, None);
    }
    exit_for(&worst)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.action {
        Action::PsiScan(a) => run_single(Some(Command::PsiScan), a),
        Action::Conditions(a) => run_single(Some(Command::Conditions), a),
        Action::Reduce(a) => run_single(Some(Command::Reduce), a),
        Action::Rotation(a) => run_single(Some(Command::Rotation), a),
        Action::Lyapunov(a) => run_single(Some(Command::Lyapunov), a),
        Action::Counterexample(a) => run_single(Some(Command::Counterexample), a),
        Action::Run(a) => run_single(None, a),
        Action::Batch { config, out, seed } => run_batch(config, out, seed),
    }
}
