//! `kge-spr`: train, evaluate, sweep and report.
//!
//! Failures print one JSON line `{"error": CODE, "message": TEXT}` on stderr
//! and exit with status 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kge_spr::evaluation::RankMode;
use kge_spr::experiments::{self, ExperimentConfig};
use kge_spr::graph_data::Split;
use kge_spr::Error;

#[derive(Parser)]
#[command(name = "kge-spr", version, about = "Knowledge-graph embeddings with sparse regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Train(Common),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Train every point of the configured grid.
    Sweep(SweepArgs),
    /// Summarize finished runs under a directory.
    Report {
        /// Run or sweep directory.
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DeltaMode {
    Absolute,
    Relative,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Args, Default)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// cp, distmult, complex or rescal.
    #[arg(long)]
    model: Option<String>,
    /// none, f2, n3 or spr.
    #[arg(long)]
    reg: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    delta_mode: Option<DeltaMode>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    neg: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// adagrad or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Train with reciprocal relations.
    #[arg(long)]
    reciprocal: bool,
    /// Unfiltered ranking.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated δ grid.
    #[arg(long)]
    sweep_delta: Option<String>,
    /// Comma-separated λ grid.
    #[arg(long)]
    sweep_lambda: Option<String>,
    /// Comma-separated dimension grid.
    #[arg(long)]
    sweep_dim: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    raw: bool,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Also write the JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("dataset", path(&self.dataset));
        put("model", self.model.clone());
        put("reg", self.reg.clone());
        put("delta", self.delta.map(|v| v.to_string()));
        put(
            "delta_mode",
            self.delta_mode.map(|m| match m {
                DeltaMode::Absolute => "absolute".to_string(),
                DeltaMode::Relative => "relative".to_string(),
            }),
        );
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("dim", self.dim.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("learning_rate", self.lr.map(|v| v.to_string()));
        put("negatives", self.neg.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("optimizer", self.optimizer.clone());
        put("eval_every", self.eval_every.map(|v| v.to_string()));
        put("patience", self.patience.map(|v| v.to_string()));
        put("reciprocal", self.reciprocal.then(|| "true".to_string()));
        put("rank_mode", self.raw.then(|| "raw".to_string()));
        put("out", path(&self.out));
        put("workers", self.workers.map(|v| v.to_string()));
        o
    }

    fn resolve(&self, extra: Vec<(String, String)>) -> Result<ExperimentConfig, Error> {
        let mut o = self.overrides();
        o.extend(extra);
        ExperimentConfig::resolve(self.config.as_deref(), &o)
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve(Vec::new())?;
            let result = experiments::run_train(&cfg.dataset, &cfg.train, &cfg.out)?;
            println!("{}", to_json(&result));
        }
        Command::Eval(args) => {
            let mode = if args.raw { RankMode::Raw } else { RankMode::Filtered };
            let split = match args.split {
                SplitArg::Train => Split::Train,
                SplitArg::Valid => Split::Valid,
                SplitArg::Test => Split::Test,
            };
            let output = experiments::run_eval(&args.checkpoint, &args.dataset, mode, split)?;
            let text = serde_json::to_string_pretty(&output).expect("serializable");
            if let Some(path) = &args.out {
                std::fs::write(path, format!("{text}\n")).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
            }
            println!("{text}");
        }
        Command::Sweep(args) => {
            let mut extra = Vec::new();
            for (k, v) in [
                ("sweep_delta", &args.sweep_delta),
                ("sweep_lambda", &args.sweep_lambda),
                ("sweep_dim", &args.sweep_dim),
            ] {
                if let Some(v) = v {
                    extra.push((k.to_string(), v.clone()));
                }
            }
            let cfg = args.common.resolve(extra)?;
            let s = experiments::run_sweep(&cfg)?;
            println!(
                "{}",
                serde_json::json!({
                    "planned": s.planned,
                    "executed": s.executed,
                    "skipped": s.skipped,
                    "failed": s.failed,
                    "best": s.best,
                })
            );
        }
        Command::Report { dir } => {
            let r = experiments::run_report(&dir)?;
            println!(
                "{}",
                serde_json::json!({ "runs": r.runs, "gap_rows": r.gaps.len(), "final_gaps": r.final_gaps })
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}", serde_json::json!({ "error": e.code(), "message": msg }));
            ExitCode::FAILURE
        }
    }
}
