//! `gap.csv` and `summary.md` from finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::output::{format_number, round6, read_csv, read_curves, read_json, write_csv, RunResult, GAP_COLUMNS, RESULT_COLUMNS};
use super::{CURVES_FILE, RESULT_FILE, SWEEP_FILE};
use crate::error::{Error, Result};
use crate::training::{CurvePoint, CurveSplit};

/// One row of `gap.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub run: String,
    pub model: String,
    pub reg: String,
    pub epoch: usize,
    pub train_mrr: f64,
    pub valid_mrr: f64,
    pub gap_loss: f64,
    pub gap_mrr: f64,
    pub gap_mr: f64,
    pub gap_hits1: f64,
    pub gap_hits3: f64,
    pub gap_hits10: f64,
}

impl GapRow {
    fn fields(&self) -> Vec<String> {
        let mut out = vec![self.run.clone(), self.model.clone(), self.reg.clone(), self.epoch.to_string()];
        out.extend(
            [
                self.train_mrr,
                self.valid_mrr,
                self.gap_loss,
                self.gap_mrr,
                self.gap_mr,
                self.gap_hits1,
                self.gap_hits3,
                self.gap_hits10,
            ]
            .map(format_number),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub runs: Vec<String>,
    pub gaps: Vec<GapRow>,
    /// Gap of the last evaluated epoch, per run.
    pub final_gaps: BTreeMap<String, f64>,
}

/// Train-minus-valid differences at every epoch with both points.
pub fn gap_rows(run: &str, model: &str, reg: &str, curves: &[CurvePoint]) -> Vec<GapRow> {
    let mut out = Vec::new();
    for t in curves.iter().filter(|p| p.split == CurveSplit::Train) {
        let Some(v) = curves
            .iter()
            .find(|p| p.split == CurveSplit::Valid && p.epoch == t.epoch)
        else {
            continue;
        };
        out.push(GapRow {
            run: run.into(),
            model: model.into(),
            reg: reg.into(),
            epoch: t.epoch,
            train_mrr: t.mrr,
            valid_mrr: v.mrr,
            gap_loss: t.loss - v.loss,
            gap_mrr: t.mrr - v.mrr,
            gap_mr: t.mr - v.mr,
            gap_hits1: t.hits1 - v.hits1,
            gap_hits3: t.hits3 - v.hits3,
            gap_hits10: t.hits10 - v.hits10,
        });
    }
    out
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) {
        if dir.join(CURVES_FILE).is_file() {
            out.push(dir.to_path_buf());
        }
        if depth == 0 {
            return;
        }
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        let mut subdirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for d in subdirs {
            walk(&d, depth - 1, out);
        }
    }
    let mut out = Vec::new();
    walk(root, 3, &mut out);
    out
}

fn label(root: &Path, dir: &Path) -> String {
    match dir.strip_prefix(root) {
        Ok(rel) if rel.as_os_str().is_empty() => ".".into(),
        Ok(rel) => rel.display().to_string(),
        Err(_) => dir.display().to_string(),
    }
}

fn cell(x: f64) -> String {
    format_number(x)
}

/// Writes `gap.csv` and `summary.md` into `dir`.
pub fn run_report(dir: &Path) -> Result<ReportSummary> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let runs = run_dirs(dir);
    let sweep = dir.join(SWEEP_FILE);
    if runs.is_empty() && !sweep.is_file() {
        return Err(Error::Config(format!(
            "no {CURVES_FILE} or {SWEEP_FILE} found under {}",
            dir.display()
        )));
    }

    let mut gaps = Vec::new();
    let mut final_gaps = BTreeMap::new();
    let mut results: Vec<(String, RunResult)> = Vec::new();
    let mut labels = Vec::new();
    for run in &runs {
        let name = label(dir, run);
        let result: Option<RunResult> = if run.join(RESULT_FILE).is_file() {
            Some(read_json(&run.join(RESULT_FILE))?)
        } else {
            None
        };
        let (model, reg) = result
            .as_ref()
            .map(|r| (r.config.model.clone(), r.config.reg.clone()))
            .unwrap_or_default();
        let rows = gap_rows(&name, &model, &reg, &read_curves(&run.join(CURVES_FILE))?);
        if let Some(last) = rows.last() {
            final_gaps.insert(name.clone(), round6(last.gap_mrr));
        }
        gaps.extend(rows);
        if let Some(r) = result {
            results.push((name.clone(), r));
        }
        labels.push(name);
    }
    write_csv(&dir.join("gap.csv"), GAP_COLUMNS, gaps.iter().map(GapRow::fields))?;

    let mut md = String::from("# Summary\n");
    if !results.is_empty() {
        md.push_str("\n## Test metrics by model and regularizer\n\n");
        md.push_str("| model | reg | runs | MRR | MR | Hits@1 | Hits@3 | Hits@10 |\n|---|---|---|---|---|---|---|---|\n");
        let mut groups: BTreeMap<(String, String), Vec<&RunResult>> = BTreeMap::new();
        for (_, r) in &results {
            groups
                .entry((r.config.model.clone(), r.config.reg.clone()))
                .or_default()
                .push(r);
        }
        for ((model, reg), rs) in &groups {
            let n = rs.len() as f64;
            let mean = |f: fn(&RunResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let _ = writeln!(
                md,
                "| {model} | {reg} | {} | {} | {} | {} | {} | {} |",
                rs.len(),
                cell(mean(|r| r.test.mrr)),
                cell(mean(|r| r.test.mr)),
                cell(mean(|r| r.test.hits1)),
                cell(mean(|r| r.test.hits3)),
                cell(mean(|r| r.test.hits10)),
            );
        }
        md.push_str("\n## Runs\n\n");
        md.push_str("| run | model | reg | lambda | delta | seed | best epoch | valid MRR | test MRR | test Hits@1 | final MRR gap |\n|---|---|---|---|---|---|---|---|---|---|---|\n");
        for (name, r) in &results {
            let c = &r.config;
            let _ = writeln!(
                md,
                "| {name} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                c.model,
                c.reg,
                cell(c.lambda),
                c.delta.map(cell).unwrap_or_else(|| "-".into()),
                c.seed,
                r.best_epoch,
                cell(r.valid.mrr),
                cell(r.test.mrr),
                cell(r.test.hits1),
                final_gaps.get(name).map(|g| cell(*g)).unwrap_or_else(|| "-".into()),
            );
        }
    }
    if sweep.is_file() {
        let rows = read_csv(&sweep, RESULT_COLUMNS)?;
        let col = |name: &str| RESULT_COLUMNS.iter().position(|c| *c == name).expect("column");
        md.push_str("\n## Sweep (valid split)\n\n");
        md.push_str("| run | status | dim | lambda | delta | MRR | Hits@1 | Hits@10 |\n|---|---|---|---|---|---|---|---|\n");
        for r in &rows {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                &r[col("run_id")],
                &r[col("status")],
                &r[col("dim")],
                &r[col("lambda")],
                &r[col("delta")],
                &r[col("mrr")],
                &r[col("hits1")],
                &r[col("hits10")],
            );
        }
    }
    if !final_gaps.is_empty() {
        md.push_str("\n## Final train - valid MRR gap\n\n| run | gap |\n|---|---|\n");
        for (name, g) in &final_gaps {
            let _ = writeln!(md, "| {name} | {} |", cell(*g));
        }
    }
    let path = dir.join("summary.md");
    std::fs::write(&path, md).map_err(|e| Error::io(&path, e))?;
    Ok(ReportSummary {
        runs: labels,
        gaps,
        final_gaps,
    })
}
