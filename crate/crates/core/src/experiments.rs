//! The `train`, `eval`, `sweep` and `report` commands.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{EvaluationReport, MetricsRecord, RankMode};
use crate::graph_data::{Dataset, Split};
use crate::regularizers::RegularizerKind;
use crate::sparsifier::ThresholdMode;
use crate::training::{fit_prepared, load_checkpoint, save_checkpoint, PreparedData, TrainConfig};

pub mod config;
pub mod output;
pub mod report;

pub use config::{parse_config_text, ExperimentConfig, SweepAxes, SEED_ENV};
pub use output::{format_number, FlatConfig, ResultRow, RunResult, CURVE_COLUMNS, GAP_COLUMNS, RESULT_COLUMNS};
pub use report::{run_report, ReportSummary};

use output::{append_csv, read_csv, read_json, round6, round_metrics, write_csv, write_curves, write_json};

pub const CURVES_FILE: &str = "curves.csv";
pub const RESULT_FILE: &str = "result.json";
pub const RESULT_CSV_FILE: &str = "result.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_TEST_FILE: &str = "sweep_test.csv";
pub const BEST_FILE: &str = "best.json";

/// Stable identifier of a (dataset, config) pair.
pub fn run_id(dataset: &Path, config: &TrainConfig) -> String {
    let mut h = Sha256::new();
    h.update(dataset.display().to_string().as_bytes());
    h.update(b"\n");
    h.update(config.digest().as_bytes());
    hex::encode(h.finalize())[..12].to_string()
}

fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    Dataset::load(dir)
}

fn run_outputs(out: &Path) -> [PathBuf; 4] {
    [CURVES_FILE, RESULT_FILE, RESULT_CSV_FILE, CHECKPOINT_FILE].map(|f| out.join(f))
}

/// Trains one configuration and writes `curves.csv`, `result.json`,
/// `result.csv` and `model.ckpt` into `out`.
pub fn run_train(dataset: &Path, train: &TrainConfig, out: &Path) -> Result<RunResult> {
    let data = load_dataset_dir(dataset)?;
    let prepared = PreparedData::new(&data, train.reciprocal, train.rank_mode)?;
    train_prepared(dataset, &prepared, train, out)
}

fn train_prepared(dataset: &Path, data: &PreparedData, train: &TrainConfig, out: &Path) -> Result<RunResult> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let outcome = (|| {
        let start = Instant::now();
        let fit = fit_prepared(train, data)?;
        let valid = data.evaluate(&fit.best.params, Split::Valid)?;
        let test = data.evaluate(&fit.best.params, Split::Test)?;
        let result = RunResult {
            run_id: run_id(dataset, train),
            config: FlatConfig::new(dataset, train),
            best_epoch: fit.best.epoch,
            epochs_run: fit.epochs_run,
            stopped_early: fit.stopped_early,
            seconds: round6(start.elapsed().as_secs_f64()),
            valid: round_metrics(&valid.both),
            test: round_metrics(&test.both),
            test_predict_tail: round_metrics(&test.predict_tail),
            test_predict_head: round_metrics(&test.predict_head),
        };
        let [curves, json, csv, ckpt] = run_outputs(out);
        write_curves(&curves, &fit.curves)?;
        save_checkpoint(&fit.best, &ckpt)?;
        write_csv(&csv, RESULT_COLUMNS, result.rows().iter().map(ResultRow::fields))?;
        write_json(&json, &result)?;
        Ok(result)
    })();
    if outcome.is_err() {
        for p in run_outputs(out) {
            let _ = std::fs::remove_file(p);
        }
    }
    outcome
}

/// Output of `eval`: the rounded metrics and the mode they were computed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub split: String,
    pub rank_mode: String,
    pub reciprocal: bool,
    pub both: MetricsRecord,
    pub predict_tail: MetricsRecord,
    pub predict_head: MetricsRecord,
}

/// Re-evaluates a checkpoint. A checkpoint trained with reciprocal
/// relations is recognised by its doubled relation table.
pub fn run_eval(checkpoint: &Path, dataset: &Path, mode: RankMode, split: Split) -> Result<EvalOutput> {
    let state = load_checkpoint(checkpoint)?;
    let data = load_dataset_dir(dataset)?;
    let (ne, nr) = (data.vocab.num_entities(), data.vocab.num_relations());
    let p = &state.params;
    let reciprocal = p.num_relations() == 2 * nr && p.num_entities() == ne;
    if p.num_entities() != ne || !(p.num_relations() == nr || reciprocal) {
        return Err(Error::Checkpoint(format!(
            "vocabulary-size mismatch: checkpoint has {} entities and {} relations, dataset has {ne} and {nr}",
            p.num_entities(),
            p.num_relations()
        )));
    }
    let prepared = PreparedData::new(&data, reciprocal, mode)?;
    let report: EvaluationReport = prepared.evaluate(p, split)?;
    Ok(EvalOutput {
        split: split.as_str().into(),
        rank_mode: mode.as_str().into(),
        reciprocal,
        both: round_metrics(&report.both),
        predict_tail: round_metrics(&report.predict_tail),
        predict_head: round_metrics(&report.predict_head),
    })
}

/// One point of a sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
    pub dim: Option<usize>,
    pub config: TrainConfig,
    pub run_id: String,
}

/// The Cartesian product of the axes, δ outermost and `d` innermost; axes
/// left unset keep the base value.
pub fn sweep_points(dataset: &Path, base: &TrainConfig, axes: &SweepAxes) -> Result<Vec<SweepPoint>> {
    if axes.is_empty() {
        return Err(Error::Config("sweep needs at least one of sweep_delta, sweep_lambda, sweep_dim".into()));
    }
    let lists = [&axes.delta, &axes.lambda];
    for l in lists.into_iter().flatten() {
        if l.is_empty() {
            return Err(Error::Config("empty axis list".into()));
        }
    }
    if axes.dim.as_ref().is_some_and(|d| d.is_empty()) {
        return Err(Error::Config("empty axis list".into()));
    }
    if axes.delta.is_some() && base.regularizer.kind != RegularizerKind::Spr {
        return Err(Error::Config("sweep_delta requires reg = spr".into()));
    }
    let deltas: Vec<Option<f64>> = axes.delta.as_ref().map_or(vec![None], |v| v.iter().copied().map(Some).collect());
    let lambdas: Vec<Option<f64>> = axes.lambda.as_ref().map_or(vec![None], |v| v.iter().copied().map(Some).collect());
    let dims: Vec<Option<usize>> = axes.dim.as_ref().map_or(vec![None], |v| v.iter().copied().map(Some).collect());
    let mut out = Vec::new();
    for &delta in &deltas {
        for &lambda in &lambdas {
            for &dim in &dims {
                let mut c = base.clone();
                if let Some(d) = delta {
                    c.regularizer.threshold = Some(match c.regularizer.threshold {
                        Some(ThresholdMode::Absolute(_)) => ThresholdMode::Absolute(d),
                        _ => ThresholdMode::Relative(d),
                    });
                }
                if let Some(l) = lambda {
                    c.regularizer.lambda = l;
                }
                if let Some(d) = dim {
                    c.dim = d;
                }
                c.validate()?;
                out.push(SweepPoint {
                    index: out.len(),
                    delta,
                    lambda,
                    dim,
                    run_id: run_id(dataset, &c),
                    config: c,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRun {
    pub run_id: String,
    pub config: FlatConfig,
    pub valid_mrr: f64,
    pub valid: MetricsRecord,
    pub test: Option<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub planned: usize,
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub best: Option<BestRun>,
}

fn failed_rows(id: &str, dataset: &Path, c: &TrainConfig, message: &str, seconds: f64) -> [ResultRow; 2] {
    let row = |split: &str| ResultRow {
        run_id: id.to_string(),
        status: "failed".into(),
        error: message.replace(['\n', '\r'], " "),
        config: FlatConfig::new(dataset, c),
        split: split.into(),
        metrics: None,
        best_epoch: None,
        epochs_run: None,
        seconds: round6(seconds),
    };
    [row("valid"), row("test")]
}

fn column(name: &str) -> usize {
    RESULT_COLUMNS.iter().position(|c| *c == name).expect("known column")
}

fn existing_ids(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(read_csv(path, RESULT_COLUMNS)?
        .iter()
        .map(|r| r[column("run_id")].to_string())
        .collect())
}

/// Rewrites `path` with its rows ordered by grid position.
fn sort_rows(path: &Path, order: &[String]) -> Result<()> {
    let mut rows: Vec<Vec<String>> = read_csv(path, RESULT_COLUMNS)?
        .iter()
        .map(|r| r.iter().map(str::to_string).collect())
        .collect();
    let id = column("run_id");
    // A run interrupted between its two appends can leave a stale row.
    let mut seen = std::collections::HashSet::new();
    rows.reverse();
    rows.retain(|r| seen.insert(r[id].clone()));
    let pos = |r: &Vec<String>| order.iter().position(|o| *o == r[id]).unwrap_or(usize::MAX);
    rows.sort_by_key(pos);
    write_csv(path, RESULT_COLUMNS, rows)
}

fn metrics_of(r: &csv::StringRecord) -> Option<MetricsRecord> {
    let f = |name: &str| r[column(name)].parse::<f64>().ok();
    Some(MetricsRecord {
        mrr: f("mrr")?,
        mr: f("mr")?,
        hits1: f("hits1")?,
        hits3: f("hits3")?,
        hits10: f("hits10")?,
        query_count: r[column("query_count")].parse().ok()?,
    })
}

fn best_of(dir: &Path, points: &[SweepPoint], dataset: &Path) -> Result<Option<BestRun>> {
    let valid = read_csv(&dir.join(SWEEP_FILE), RESULT_COLUMNS)?;
    let test = if dir.join(SWEEP_TEST_FILE).exists() {
        read_csv(&dir.join(SWEEP_TEST_FILE), RESULT_COLUMNS)?
    } else {
        Vec::new()
    };
    let mut best: Option<BestRun> = None;
    // Grid order, so ties go to the earliest point.
    for p in points {
        let Some(row) = valid
            .iter()
            .find(|r| r[column("run_id")] == p.run_id && &r[column("status")] == "ok")
        else {
            continue;
        };
        let Some(m) = metrics_of(row) else { continue };
        if best.as_ref().is_some_and(|b| b.valid_mrr >= m.mrr) {
            continue;
        }
        let t = test
            .iter()
            .find(|r| r[column("run_id")] == p.run_id)
            .and_then(metrics_of);
        best = Some(BestRun {
            run_id: p.run_id.clone(),
            config: FlatConfig::new(dataset, &p.config),
            valid_mrr: m.mrr,
            valid: m,
            test: t,
        });
    }
    Ok(best)
}

fn write_if_changed(path: &Path, text: &str) -> Result<()> {
    if std::fs::read_to_string(path).is_ok_and(|old| old == text) {
        return Ok(());
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every grid point not already recorded in `sweep.csv`.
///
/// Each run writes its files under `runs/<run_id>/`. Valid-split rows go to
/// `sweep.csv`, test-split rows to `sweep_test.csv`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepSummary> {
    let points = sweep_points(&cfg.dataset, &cfg.train, &cfg.sweep)?;
    let data = load_dataset_dir(&cfg.dataset)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let sweep_csv = cfg.out.join(SWEEP_FILE);
    let sweep_test_csv = cfg.out.join(SWEEP_TEST_FILE);
    let done = existing_ids(&sweep_csv)?;
    let todo: Vec<&SweepPoint> = points.iter().filter(|p| !done.contains(&p.run_id)).collect();

    let prepared: Vec<(bool, PreparedData)> = {
        let mut v = Vec::new();
        for recip in [false, true] {
            if todo.iter().any(|p| p.config.reciprocal == recip) {
                v.push((recip, PreparedData::new(&data, recip, cfg.train.rank_mode)?));
            }
        }
        v
    };
    let next = AtomicUsize::new(0);
    let log = Mutex::new(());
    let failed = AtomicUsize::new(0);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);

    std::thread::scope(|s| {
        for _ in 0..cfg.workers.min(todo.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(p) = todo.get(i) else { break };
                let data = &prepared
                    .iter()
                    .find(|(r, _)| *r == p.config.reciprocal)
                    .expect("prepared")
                    .1;
                let start = Instant::now();
                let run_dir = cfg.out.join("runs").join(&p.run_id);
                let rows = match train_prepared(&cfg.dataset, data, &p.config, &run_dir) {
                    Ok(r) => r.rows(),
                    Err(e) => {
                        failed.fetch_add(1, Ordering::SeqCst);
                        let msg = format!("{}: {e}", e.code());
                        failed_rows(&p.run_id, &cfg.dataset, &p.config, &msg, start.elapsed().as_secs_f64())
                    }
                };
                let _guard = log.lock().expect("log lock");
                // Test rows first: a run counts as done once its valid row exists.
                let written = append_csv(&sweep_test_csv, RESULT_COLUMNS, &[rows[1].fields()])
                    .and_then(|_| append_csv(&sweep_csv, RESULT_COLUMNS, &[rows[0].fields()]));
                if let Err(e) = written {
                    first_error.lock().expect("error lock").get_or_insert(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }

    let order: Vec<String> = points.iter().map(|p| p.run_id.clone()).collect();
    if !todo.is_empty() {
        sort_rows(&sweep_csv, &order)?;
        sort_rows(&sweep_test_csv, &order)?;
    }
    let best = best_of(&cfg.out, &points, &cfg.dataset)?;
    let mut text = serde_json::to_string_pretty(&best).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    write_if_changed(&cfg.out.join(BEST_FILE), &text)?;
    Ok(SweepSummary {
        planned: points.len(),
        executed: todo.len(),
        skipped: points.len() - todo.len(),
        failed: failed.into_inner(),
        best,
    })
}

/// Loads the `result.json` of a finished run.
pub fn read_result(dir: &Path) -> Result<RunResult> {
    read_json(&dir.join(RESULT_FILE))
}
