//! CSV and JSON emission.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::MetricsRecord;
use crate::regularizers::RegularizerKind;
use crate::training::{CurvePoint, CurveSplit, TrainConfig};

pub const CURVE_COLUMNS: &[&str] = &["epoch", "split", "loss", "mrr", "mr", "hits1", "hits3", "hits10"];

pub const RESULT_COLUMNS: &[&str] = &[
    "run_id",
    "status",
    "error",
    "dataset",
    "model",
    "dim",
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "negatives",
    "seed",
    "reg",
    "lambda",
    "delta",
    "delta_mode",
    "eval_every",
    "patience",
    "reciprocal",
    "rank_mode",
    "loss_orientation",
    "init_scale",
    "split",
    "mrr",
    "mr",
    "hits1",
    "hits3",
    "hits10",
    "query_count",
    "best_epoch",
    "epochs_run",
    "seconds",
];

pub const GAP_COLUMNS: &[&str] = &[
    "run", "model", "reg", "epoch", "train_mrr", "valid_mrr", "gap_loss", "gap_mrr", "gap_mr", "gap_hits1",
    "gap_hits3", "gap_hits10",
];

/// `%.6g`-style rendering: six significant digits, '.' separator.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `x` rounded to what `format_number` prints.
pub fn round6(x: f64) -> f64 {
    if x.is_finite() {
        format_number(x).parse().expect("formatted number parses")
    } else {
        x
    }
}

pub fn round_metrics(m: &MetricsRecord) -> MetricsRecord {
    MetricsRecord {
        mrr: round6(m.mrr),
        mr: round6(m.mr),
        hits1: round6(m.hits1),
        hits3: round6(m.hits3),
        hits10: round6(m.hits10),
        query_count: m.query_count,
    }
}

/// The experiment settings of one run, flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatConfig {
    pub dataset: String,
    pub model: String,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: String,
    pub negatives: usize,
    pub seed: u64,
    pub reg: String,
    pub lambda: f64,
    pub delta: Option<f64>,
    pub delta_mode: Option<String>,
    pub eval_every: usize,
    pub patience: usize,
    pub reciprocal: bool,
    pub rank_mode: String,
    pub loss_orientation: String,
    pub init_scale: Option<f64>,
}

impl FlatConfig {
    pub fn new(dataset: &Path, t: &TrainConfig) -> Self {
        let spr = t.regularizer.kind == RegularizerKind::Spr;
        let threshold = t.regularizer.threshold.filter(|_| spr);
        FlatConfig {
            dataset: dataset.display().to_string(),
            model: t.model.as_str().into(),
            dim: t.dim,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer.as_str().into(),
            negatives: t.negatives,
            seed: t.seed,
            reg: t.regularizer.kind.as_str().into(),
            lambda: t.regularizer.lambda,
            delta: threshold.map(|m| m.value()),
            delta_mode: threshold.map(|m| m.mode_name().to_string()),
            eval_every: t.eval_every,
            patience: t.patience,
            reciprocal: t.reciprocal,
            rank_mode: t.rank_mode.as_str().into(),
            loss_orientation: t.loss_orientation.as_str().into(),
            init_scale: t.init_scale,
        }
    }

    fn fields(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(format_number).unwrap_or_default();
        vec![
            self.dataset.clone(),
            self.model.clone(),
            self.dim.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            format_number(self.learning_rate),
            self.optimizer.clone(),
            self.negatives.to_string(),
            self.seed.to_string(),
            self.reg.clone(),
            format_number(self.lambda),
            opt(self.delta),
            self.delta_mode.clone().unwrap_or_default(),
            self.eval_every.to_string(),
            self.patience.to_string(),
            self.reciprocal.to_string(),
            self.rank_mode.clone(),
            self.loss_orientation.clone(),
            opt(self.init_scale),
        ]
    }
}

/// One (config, split) evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    /// `ok` or `failed`.
    pub status: String,
    pub error: String,
    pub config: FlatConfig,
    pub split: String,
    pub metrics: Option<MetricsRecord>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub seconds: f64,
}

impl ResultRow {
    pub fn fields(&self) -> Vec<String> {
        let mut out = vec![self.run_id.clone(), self.status.clone(), self.error.clone()];
        out.extend(self.config.fields());
        out.push(self.split.clone());
        match &self.metrics {
            Some(m) => {
                out.extend([m.mrr, m.mr, m.hits1, m.hits3, m.hits10].map(format_number));
                out.push(m.query_count.to_string());
            }
            None => out.extend(std::iter::repeat(String::new()).take(6)),
        }
        let opt = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
        out.push(opt(self.best_epoch));
        out.push(opt(self.epochs_run));
        out.push(format_number(self.seconds));
        out
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("csv error in {}: {other:?}", path.display())),
    }
}

/// Writes a CSV file with `header` and `rows`.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends rows, writing the header first when the file is new or empty.
pub fn append_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(header).map_err(|e| csv_error(path, e))?;
    }
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header and records of a CSV file, checking the header against `expected`.
pub fn read_csv(path: &Path, expected: &[&str]) -> Result<Vec<csv::StringRecord>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Config(format!("unexpected columns in {}", path.display())));
    }
    r.records()
        .map(|rec| rec.map_err(|e| csv_error(path, e)))
        .collect()
}

pub fn curve_fields(p: &CurvePoint) -> Vec<String> {
    let mut out = vec![p.epoch.to_string(), p.split.as_str().to_string()];
    out.extend([p.loss, p.mrr, p.mr, p.hits1, p.hits3, p.hits10].map(format_number));
    out
}

pub fn write_curves(path: &Path, curves: &[CurvePoint]) -> Result<()> {
    write_csv(path, CURVE_COLUMNS, curves.iter().map(curve_fields))
}

pub fn read_curves(path: &Path) -> Result<Vec<CurvePoint>> {
    let bad = |what: &str| Error::Config(format!("bad {what} in {}", path.display()));
    read_csv(path, CURVE_COLUMNS)?
        .iter()
        .map(|r| {
            let num = |i: usize, name: &str| -> Result<f64> { r[i].parse().map_err(|_| bad(name)) };
            let split = match &r[1] {
                "train" => CurveSplit::Train,
                "valid" => CurveSplit::Valid,
                _ => return Err(bad("split")),
            };
            Ok(CurvePoint {
                epoch: r[0].parse().map_err(|_| bad("epoch"))?,
                split,
                loss: num(2, "loss")?,
                mrr: num(3, "mrr")?,
                mr: num(4, "mr")?,
                hits1: num(5, "hits1")?,
                hits3: num(6, "hits3")?,
                hits10: num(7, "hits10")?,
            })
        })
        .collect()
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub config: FlatConfig,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub seconds: f64,
    pub valid: MetricsRecord,
    pub test: MetricsRecord,
    pub test_predict_tail: MetricsRecord,
    pub test_predict_head: MetricsRecord,
}

impl RunResult {
    pub fn rows(&self) -> [ResultRow; 2] {
        let row = |split: &str, m: MetricsRecord| ResultRow {
            run_id: self.run_id.clone(),
            status: "ok".into(),
            error: String::new(),
            config: self.config.clone(),
            split: split.into(),
            metrics: Some(m),
            best_epoch: Some(self.best_epoch),
            epochs_run: Some(self.epochs_run),
            seconds: self.seconds,
        };
        [row("valid", self.valid), row("test", self.test)]
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad json in {}: {e}", path.display())))
}
