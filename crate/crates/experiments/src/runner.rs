//! Runs one config over its seeds and writes every artifact under
//! `output_dir/<hash>/<seed>/`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use elephant_core::checkpoint;
use elephant_core::csvio::{format_f64, CsvOut};
use elephant_core::diagnostics::{gradient_covariance, ntk_curve, representation_sparsity, write_ntk_curve_csv};
use elephant_core::loss::LossSample;
use elephant_core::network::linspace;
use elephant_core::{exec, Network, RngState};
use serde::{Deserialize, Serialize};

use crate::classify::{load_mnist, run_class_incremental, LabeledDataset};
use crate::config::{ExperimentConfig, Harness, SampleSource};
use crate::error::{io_err, ExpError, Result};
use crate::regression::{make_sine_stream, run_point_edit, run_streaming_regression, target, RegressionRun};
use crate::rl::dqn::{covariance_snapshot, dqn_train};
use crate::rl::{make_env, ReplayBuffer, Transition};

pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "net.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub harness: Harness,
    pub metrics: BTreeMap<String, f64>,
    /// File names relative to the run directory.
    pub artifacts: Vec<String>,
    pub wall_clock_s: f64,
    pub aborted: bool,
    #[serde(default)]
    pub abort_reason: Option<String>,
}

impl RunReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Datasets loaded once and shared read-only between runs.
#[derive(Default)]
pub struct DataCache {
    mnist: Mutex<HashMap<PathBuf, Arc<(LabeledDataset, LabeledDataset)>>>,
}

impl DataCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mnist(&self, dir: &Path) -> Result<Arc<(LabeledDataset, LabeledDataset)>> {
        let mut m = self.mnist.lock().expect("data cache lock");
        if let Some(d) = m.get(dir) {
            return Ok(d.clone());
        }
        let d = Arc::new(load_mnist(dir)?);
        m.insert(dir.to_path_buf(), d.clone());
        Ok(d)
    }
}

pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join(cfg.hash()).join(seed.to_string())
}

/// Previously written report for this config and seed, if any.
pub fn existing_report(cfg: &ExperimentConfig, seed: u64) -> Option<RunReport> {
    let text = std::fs::read_to_string(run_dir(cfg, seed).join(REPORT_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

struct Artifacts {
    dir: PathBuf,
    names: Vec<String>,
    metrics: BTreeMap<String, f64>,
}

impl Artifacts {
    fn path(&mut self, name: impl Into<String>) -> PathBuf {
        let name = name.into();
        let p = self.dir.join(&name);
        self.names.push(name);
        p
    }

    fn csv(&mut self, name: &str, header: &[&str]) -> Result<CsvOut> {
        let p = self.path(name);
        Ok(CsvOut::create(&p, header)?)
    }

    fn metric(&mut self, name: impl Into<String>, v: f64) {
        if v.is_finite() {
            self.metrics.insert(name.into(), v);
        }
    }

    fn checkpoint(&mut self, net: &Network) -> Result<()> {
        let p = self.path(CHECKPOINT_FILE);
        Ok(checkpoint::save_binary(net, &p)?)
    }
}

fn write_regression(run: &RegressionRun, a: &mut Artifacts) -> Result<()> {
    let r = &run.report;
    let mut w = a.csv("mse_curve.csv", &["step", "test_mse"])?;
    for (i, m) in r.mse_curve.iter().enumerate() {
        w.row(&[(i + 1).to_string(), format_f64(*m)])?;
    }
    w.finish()?;
    let mut w = a.csv("prediction.csv", &["x", "target", "prediction"])?;
    for (x, p) in r.test_x.iter().zip(&r.predictions) {
        w.floats(&[*x, target(*x), *p])?;
    }
    w.finish()?;
    let mut w = a.csv("stream.csv", &["index", "x", "y"])?;
    for (i, (x, y)) in r.stream.x.iter().zip(&r.stream.y).enumerate() {
        w.row(&[i.to_string(), format_f64(*x), format_f64(*y)])?;
    }
    w.finish()?;
    for s in &r.ntk_snapshots {
        let p = a.path(format!("ntk_step{}.csv", s.step));
        write_ntk_curve_csv(&p, &r.test_x, &s.curve)?;
        a.metric(format!("ntk_far_max_step{}", s.step), s.far_max);
        a.metric(format!("ntk_far_max_by_self_step{}", s.step), s.far_max_by_self);
        a.metric(format!("ntk_anchor_step{}", s.step), s.x_t);
    }
    a.metric("test_mse", r.test_mse);
    a.metric("n_params", run.net.n_params() as f64);
    a.checkpoint(&run.net)
}

fn run_regression(cfg: &ExperimentConfig, seed: u64, a: &mut Artifacts) -> Result<Option<String>> {
    let run = run_streaming_regression(cfg, seed)?;
    write_regression(&run, a)?;
    Ok(run.report.aborted)
}

fn run_edit(cfg: &ExperimentConfig, seed: u64, a: &mut Artifacts) -> Result<Option<String>> {
    let (run, edit) = run_point_edit(cfg, seed)?;
    write_regression(&run, a)?;
    a.metrics.remove("test_mse");
    a.metric("pretrain_mse", run.report.test_mse);
    if let Some(e) = edit {
        let mut w = a.csv("edit_curves.csv", &["x", "before", "after"])?;
        for i in 0..e.test_x.len() {
            w.floats(&[e.test_x[i], e.before[i], e.after[i]])?;
        }
        w.finish()?;
        a.metric("spill", e.spill);
        a.metric("edit_updates", e.updates as f64);
        a.metric("edit_converged", if e.converged { 1.0 } else { 0.0 });
        a.metric("edit_final_error", e.final_error);
        a.metric("edit_test_mse", crate::regression::test_mse(&run.net, &e.test_x)?);
    }
    Ok(run.report.aborted)
}

fn run_classify(cfg: &ExperimentConfig, seed: u64, data: &DataCache, a: &mut Artifacts) -> Result<Option<String>> {
    let d = data.mnist(&cfg.classify.data_dir)?;
    let run = run_class_incremental(cfg, seed, &d.0, &d.1)?;
    let r = &run.report;
    let tasks = r.task_accuracy.len();
    let mut header = vec!["batch".to_string(), "seen".into(), "accuracy".into()];
    header.extend((0..tasks).map(|t| format!("task{t}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = a.csv("trajectory.csv", &header)?;
    for p in &r.trajectory {
        let mut row = vec![p.batch.to_string(), p.seen.to_string(), format_f64(p.accuracy)];
        row.extend(p.task_accuracy.iter().map(|v| format_f64(*v)));
        w.row(&row)?;
    }
    w.finish()?;
    a.metric("accuracy", r.accuracy);
    for (t, v) in r.task_accuracy.iter().enumerate() {
        a.metric(format!("task{t}_accuracy"), *v);
    }
    a.metric("batches", r.batches as f64);
    a.metric("final_loss", r.final_loss);
    a.metric("n_params", run.net.n_params() as f64);
    a.checkpoint(&run.net)?;
    Ok(r.aborted.clone())
}

fn run_dqn(cfg: &ExperimentConfig, seed: u64, a: &mut Artifacts) -> Result<Option<String>> {
    let run = dqn_train(cfg, seed)?;
    let r = &run.report;
    let mut w = a.csv("train.csv", &["step", "episode", "return", "epsilon", "loss", "lr"])?;
    for e in &r.episodes {
        w.row(&[
            e.step.to_string(),
            e.episode.to_string(),
            format_f64(e.ret),
            format_f64(e.epsilon),
            format_f64(e.loss),
            format_f64(e.lr),
        ])?;
    }
    w.finish()?;
    let mut w = a.csv("eval.csv", &["step", "mean_return"])?;
    for (s, e) in &r.evals {
        w.row(&[s.to_string(), format_f64(e.mean)])?;
    }
    w.finish()?;
    for c in &r.covariance {
        let p = a.path(format!("covariance_step{}.csv", c.step));
        c.matrix.write_csv(&p)?;
    }
    if let Some(c) = r.covariance.last() {
        a.metric("covariance_mean_abs_offdiag", c.matrix.mean_abs_off_diagonal());
        a.metric("covariance_excluded", c.matrix.excluded.len() as f64);
    }
    a.metric("final_return", r.final_return);
    if let Some(g) = r.greedy_return {
        a.metric("greedy_return", g);
    }
    a.metric("episodes", r.episodes.len() as f64);
    a.metric("steps", r.steps as f64);
    a.metric("n_params", run.net.n_params() as f64);
    a.metric("hidden_width", run.net.layers()[0].spec.out_features as f64);
    a.checkpoint(&run.net)?;
    Ok(r.aborted.clone())
}

fn random_transitions(kind: crate::config::EnvKind, n: usize, rng: &mut RngState) -> Result<ReplayBuffer> {
    let mut env = make_env(kind);
    let mut buf = ReplayBuffer::new(n.max(1));
    let mut obs = env.reset(rng);
    for _ in 0..n {
        let action = rng.index(env.n_actions());
        let out = env.step(action)?;
        let done = out.done();
        buf.push(Transition {
            state: std::mem::replace(&mut obs, out.obs.clone()),
            action,
            reward: out.reward,
            next_state: out.obs,
            done: out.terminated,
        });
        if done {
            obs = env.reset(rng);
        }
    }
    Ok(buf)
}

/// Number of random-policy steps gathered for environment-based covariances.
const DIAG_ROLLOUT_STEPS: usize = 1000;

fn run_diagnostics(cfg: &ExperimentConfig, seed: u64, data: &DataCache, a: &mut Artifacts) -> Result<Option<String>> {
    let dc = &cfg.diagnostics;
    let path = dc.checkpoint.as_ref().expect("validated");
    let net = if path.extension().is_some_and(|e| e == "json") {
        checkpoint::load_json(path)
    } else {
        checkpoint::load_binary(path)
    }
    .map_err(|source| ExpError::Checkpoint {
        path: path.clone(),
        source,
    })?;
    let rng = RngState::new(seed);
    if !dc.ntk_anchors.is_empty() {
        let xs = linspace(dc.ntk_lo, dc.ntk_hi, dc.ntk_points);
        let grid: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        for (i, anchor) in dc.ntk_anchors.iter().enumerate() {
            let curve = ntk_curve(&net, &[*anchor], &grid, dc.ntk_include_elephant)?;
            let p = a.path(format!("ntk_anchor{i}.csv"));
            write_ntk_curve_csv(&p, &xs, &curve)?;
            a.metric(format!("ntk_anchor{i}_self"), curve.self_value);
        }
    }
    let k = dc.covariance_samples;
    let mut r = rng.derive(1);
    let (matrix, inputs) = match dc.covariance_source {
        None => (None, Vec::new()),
        Some(SampleSource::Sine) => {
            let s = make_sine_stream(k.max(2), &mut r)?;
            let samples: Vec<LossSample> = s
                .x
                .iter()
                .zip(&s.y)
                .map(|(x, y)| LossSample::SquaredError { x: vec![*x], target: vec![*y] })
                .collect();
            let ids = (0..samples.len()).map(|i| format!("x{i}")).collect::<Vec<_>>();
            let inputs = samples.iter().map(|s| s.input().to_vec()).collect();
            (Some(gradient_covariance(&net, &samples, &ids)?), inputs)
        }
        Some(SampleSource::Mnist) => {
            let d = data.mnist(&cfg.classify.data_dir)?;
            let test = &d.1;
            let mut idx: Vec<usize> = (0..test.len()).collect();
            r.shuffle(&mut idx);
            idx.truncate(k);
            let samples: Vec<LossSample> = idx
                .iter()
                .map(|i| LossSample::CrossEntropy {
                    x: test.input(*i).iter().map(|v| f64::from(*v)).collect(),
                    label: test.labels()[*i],
                })
                .collect();
            let ids = idx.iter().map(|i| format!("test{i}")).collect::<Vec<_>>();
            let inputs = samples.iter().map(|s| s.input().to_vec()).collect();
            (Some(gradient_covariance(&net, &samples, &ids)?), inputs)
        }
        Some(src @ (SampleSource::Acrobot | SampleSource::MountainCar)) => {
            let kind = if src == SampleSource::Acrobot {
                crate::config::EnvKind::Acrobot
            } else {
                crate::config::EnvKind::MountainCar
            };
            let buf = random_transitions(kind, DIAG_ROLLOUT_STEPS, &mut r)?;
            let m = covariance_snapshot(&net, &net, &buf, k, dc.gamma, &mut rng.derive(2))?;
            let inputs = buf.iter().take(k).map(|t| t.state.clone()).collect();
            (Some(m), inputs)
        }
    };
    if let Some(m) = matrix {
        let p = a.path("covariance.csv");
        m.write_csv(&p)?;
        a.metric("covariance_mean_abs_offdiag", m.mean_abs_off_diagonal());
        a.metric("covariance_excluded", m.excluded.len() as f64);
        if net.layers().len() >= 2 {
            a.metric("representation_sparsity", representation_sparsity(&net, &inputs, dc.sparsity_eps)?);
        }
    }
    Ok(None)
}

/// Runs a single seed and writes its artifacts and report.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, data: &DataCache) -> Result<RunReport> {
    let dir = run_dir(cfg, seed);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let start = Instant::now();
    let mut a = Artifacts {
        dir: dir.clone(),
        names: Vec::new(),
        metrics: BTreeMap::new(),
    };
    let aborted = match cfg.harness {
        Harness::Regression => run_regression(cfg, seed, &mut a)?,
        Harness::Edit => run_edit(cfg, seed, &mut a)?,
        Harness::Classify => run_classify(cfg, seed, data, &mut a)?,
        Harness::Dqn => run_dqn(cfg, seed, &mut a)?,
        Harness::Diagnostics => run_diagnostics(cfg, seed, data, &mut a)?,
    };
    if let Some(reason) = &aborted {
        log::warn!("seed {seed} aborted: {reason}");
    }
    let report = RunReport {
        config_hash: cfg.hash(),
        seed,
        harness: cfg.harness,
        metrics: a.metrics,
        artifacts: a.names,
        wall_clock_s: start.elapsed().as_secs_f64(),
        aborted: aborted.is_some(),
        abort_reason: aborted,
    };
    let p = dir.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&report).map_err(|e| ExpError::Format(e.to_string()))?;
    std::fs::write(&p, text).map_err(io_err(&p))?;
    Ok(report)
}

fn write_config(cfg: &ExperimentConfig) -> Result<()> {
    let dir = cfg.output_dir.join(cfg.hash());
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let p = dir.join("config.json");
    let text = serde_json::to_string_pretty(&cfg.resolved()).map_err(|e| ExpError::Format(e.to_string()))?;
    std::fs::write(&p, text).map_err(io_err(&p))
}

/// A report standing in for a seed that failed with an error. It is not
/// written to disk, so a resumed run retries the seed.
pub fn failed_report(cfg: &ExperimentConfig, seed: u64, e: &ExpError) -> RunReport {
    RunReport {
        config_hash: cfg.hash(),
        seed,
        harness: cfg.harness,
        metrics: BTreeMap::new(),
        artifacts: Vec::new(),
        wall_clock_s: 0.0,
        aborted: true,
        abort_reason: Some(format!("error: {e}")),
    }
}

/// Runs `seed` unless `resume` is set and a report already exists.
pub fn run_or_resume(cfg: &ExperimentConfig, seed: u64, resume: bool, data: &DataCache) -> RunReport {
    if resume {
        if let Some(r) = existing_report(cfg, seed) {
            log::info!("seed {seed} of {} already done, skipping", cfg.hash());
            return r;
        }
    }
    run_seed(cfg, seed, data).unwrap_or_else(|e| {
        log::error!("seed {seed} failed: {e}");
        failed_report(cfg, seed, &e)
    })
}

/// One report per seed, in seed order. Seeds run concurrently when the
/// parallel mode is active.
pub fn run_experiment(cfg: &ExperimentConfig, resume: bool, data: &DataCache) -> Result<Vec<RunReport>> {
    cfg.validate()?;
    write_config(cfg)?;
    Ok(exec::map(&cfg.seeds(), |s| run_or_resume(cfg, *s, resume, data)))
}
