//! Cartesian-product sweeps with per-cell seed statistics.

use std::path::PathBuf;

use elephant_core::csvio::{format_f64, CsvOut};
use elephant_core::exec;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{canonical_json, parse_grid_value, ExperimentConfig};
use crate::error::{io_err, ExpError, Result};
use crate::runner::{run_or_resume, DataCache, RunReport};

/// Key excluded from the grouping when picking the best cell.
pub const LEARNING_RATE_KEY: &str = "optimizer.learning_rate";

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<Value>,
}

/// Parses `key=v1,v2;other.key=v3`. Values are read as TOML literals.
pub fn parse_grid(spec: &str) -> Result<Vec<GridAxis>> {
    let mut axes = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, vals) = part
            .split_once('=')
            .ok_or_else(|| ExpError::Config(format!("grid entry `{part}` is not key=values")))?;
        let key = key.trim();
        let values: Vec<Value> = vals
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(parse_grid_value)
            .collect();
        if key.is_empty() || values.is_empty() {
            return Err(ExpError::Config(format!("grid entry `{part}` needs a key and at least one value")));
        }
        if axes.iter().any(|a: &GridAxis| a.key == key) {
            return Err(ExpError::Config(format!("grid key `{key}` given twice")));
        }
        axes.push(GridAxis {
            key: key.to_string(),
            values,
        });
    }
    Ok(axes)
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub index: usize,
    pub assignments: Vec<(String, Value)>,
    pub config: ExperimentConfig,
}

impl SweepCell {
    pub fn label(&self) -> String {
        self.assignments
            .iter()
            .map(|(k, v)| format!("{k}={}", canonical_json(v)))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Assignments other than the learning rate.
    pub fn group(&self) -> String {
        self.assignments
            .iter()
            .filter(|(k, _)| k != LEARNING_RATE_KEY)
            .map(|(k, v)| format!("{k}={}", canonical_json(v)))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Every combination of axis values applied to `base`; the first axis varies slowest.
pub fn expand(base: &ExperimentConfig, axes: &[GridAxis]) -> Result<Vec<SweepCell>> {
    let mut combos: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for ax in axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                ax.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((ax.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .enumerate()
        .map(|(index, assignments)| {
            let mut config = base.clone();
            for (k, v) in &assignments {
                config = config.with_override(k, v.clone())?;
            }
            Ok(SweepCell {
                index,
                assignments,
                config,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: usize,
    pub label: String,
    pub group: String,
    pub config_hash: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub aborted: usize,
}

/// Mean and standard error of the mean (sample standard deviation over √n).
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn summarize(cell: &SweepCell, reports: &[RunReport]) -> CellSummary {
    let (metric, _) = cell.config.harness.primary_metric();
    let values: Vec<f64> = reports
        .iter()
        .filter(|r| !r.aborted)
        .filter_map(|r| r.metric(metric))
        .collect();
    let (mean, stderr) = mean_stderr(&values);
    CellSummary {
        cell: cell.index,
        label: cell.label(),
        group: cell.group(),
        config_hash: cell.config.hash(),
        metric: metric.to_string(),
        mean,
        stderr,
        n: values.len(),
        aborted: reports.iter().filter(|r| r.aborted).count(),
    }
}

/// Best cell of each group by seed mean. Cells with aborted seeds only win
/// when every cell of the group has one.
pub fn best_per_group(cells: &[CellSummary], larger_is_better: bool) -> Vec<usize> {
    let mut groups: Vec<&str> = Vec::new();
    for c in cells {
        if !groups.contains(&c.group.as_str()) {
            groups.push(&c.group);
        }
    }
    groups
        .into_iter()
        .filter_map(|g| {
            let members: Vec<&CellSummary> = cells.iter().filter(|c| c.group == g && c.mean.is_finite()).collect();
            let clean: Vec<&CellSummary> = members.iter().copied().filter(|c| c.aborted == 0).collect();
            let pool = if clean.is_empty() { members } else { clean };
            pool.into_iter()
                .reduce(|a, b| {
                    let better = if larger_is_better { b.mean > a.mean } else { b.mean < a.mean };
                    if better {
                        b
                    } else {
                        a
                    }
                })
                .map(|c| c.cell)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellSummary>,
    /// Cell indices, one per group.
    pub best: Vec<usize>,
    pub reports: Vec<Vec<RunReport>>,
    pub summary_dir: PathBuf,
}

impl SweepResult {
    pub fn any_aborted(&self) -> bool {
        self.reports.iter().flatten().any(|r| r.aborted)
    }
}

fn sweep_id(base: &ExperimentConfig, axes: &[GridAxis]) -> String {
    let grid: Vec<Value> = axes
        .iter()
        .map(|a| Value::Array(vec![Value::String(a.key.clone()), Value::Array(a.values.clone())]))
        .collect();
    let doc = Value::Array(vec![base.semantic_value(), Value::Array(grid), serde_json::json!(base.seeds())]);
    hex::encode(&Sha256::digest(canonical_json(&doc).as_bytes())[..8])
}

/// Runs every (cell, seed) pair, then writes `summary.csv` and `best.csv`
/// under `output_dir/sweeps/<id>/`.
pub fn sweep(base: &ExperimentConfig, axes: &[GridAxis], resume: bool, data: &DataCache) -> Result<SweepResult> {
    base.validate()?;
    let cells = expand(base, axes)?;
    let seeds = base.seeds();
    for c in &cells {
        let dir = c.config.output_dir.join(c.config.hash());
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let p = dir.join("config.json");
        let text = serde_json::to_string_pretty(&c.config.resolved()).map_err(|e| ExpError::Format(e.to_string()))?;
        std::fs::write(&p, text).map_err(io_err(&p))?;
    }
    let jobs: Vec<(usize, u64)> = cells
        .iter()
        .flat_map(|c| seeds.iter().map(move |s| (c.index, *s)))
        .collect();
    let flat = exec::map(&jobs, |(i, s)| run_or_resume(&cells[*i].config, *s, resume, data));
    let reports: Vec<Vec<RunReport>> = flat.chunks(seeds.len()).map(<[RunReport]>::to_vec).collect();
    let summaries: Vec<CellSummary> = cells.iter().zip(&reports).map(|(c, r)| summarize(c, r)).collect();
    let (_, larger) = base.harness.primary_metric();
    let best = best_per_group(&summaries, larger);

    let dir = base.output_dir.join("sweeps").join(sweep_id(base, axes));
    let mut header = vec!["cell".to_string(), "config_hash".into()];
    header.extend(axes.iter().map(|a| a.key.clone()));
    header.extend(["metric", "mean", "stderr", "n", "aborted"].map(String::from));
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = CsvOut::create(&dir.join("summary.csv"), &h)?;
    let mut wb = CsvOut::create(&dir.join("best.csv"), &h)?;
    for (c, s) in cells.iter().zip(&summaries) {
        let mut row = vec![s.cell.to_string(), s.config_hash.clone()];
        row.extend(c.assignments.iter().map(|(_, v)| match v {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), format_f64),
            other => canonical_json(other),
        }));
        row.extend([
            s.metric.clone(),
            format_f64(s.mean),
            format_f64(s.stderr),
            s.n.to_string(),
            s.aborted.to_string(),
        ]);
        w.row(&row)?;
        if best.contains(&s.cell) {
            wb.row(&row)?;
        }
    }
    w.finish()?;
    wb.finish()?;
    Ok(SweepResult {
        cells: summaries,
        best,
        reports,
        summary_dir: dir,
    })
}
