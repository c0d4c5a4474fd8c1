//! Single-pass sine regression, NTK snapshots and the point-edit probe.

use elephant_core::diagnostics::{ntk_curve, NtkCurve};
use elephant_core::network::linspace;
use elephant_core::{build_mlp, Error as CoreError, Network, Optimizer, RngState};

use crate::config::{EditConfig, ExperimentConfig};
use crate::error::{ExpError, Result};

pub const X_LO: f64 = 0.0;
pub const X_HI: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionStream {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl RegressionStream {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

pub fn target(x: f64) -> f64 {
    (std::f64::consts::PI * x).sin()
}

/// `n` sorted draws from U[0, 2] paired with sin(πx).
pub fn make_sine_stream(n: usize, rng: &mut RngState) -> Result<RegressionStream> {
    if n < 2 {
        return Err(ExpError::Spec(format!("stream needs at least 2 samples, got {n}")));
    }
    let mut x: Vec<f64> = (0..n).map(|_| rng.uniform(X_LO, X_HI)).collect();
    x.sort_by(f64::total_cmp);
    let y = x.iter().map(|v| target(*v)).collect();
    Ok(RegressionStream { x, y })
}

pub fn test_grid(points: usize) -> Vec<f64> {
    linspace(X_LO, X_HI, points)
}

pub fn predict_curve(net: &Network, xs: &[f64]) -> Result<Vec<f64>> {
    Ok(net.predict_batch(xs, xs.len())?)
}

/// Mean squared error against sin(πx) over `xs`.
pub fn test_mse(net: &Network, xs: &[f64]) -> Result<f64> {
    let p = predict_curve(net, xs)?;
    Ok(p.iter().zip(xs).map(|(f, x)| (f - target(*x)).powi(2)).sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NtkSnapshot {
    /// 1-based stream position after which the curve was taken.
    pub step: usize,
    pub x_t: f64,
    pub curve: NtkCurve,
    /// Largest |normalized kernel| farther than the radius from `x_t`.
    pub far_max: f64,
    pub far_max_by_self: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionReport {
    pub test_mse: f64,
    /// Test MSE after each stream sample.
    pub mse_curve: Vec<f64>,
    pub ntk_snapshots: Vec<NtkSnapshot>,
    pub test_x: Vec<f64>,
    pub predictions: Vec<f64>,
    pub stream: RegressionStream,
    pub aborted: Option<String>,
}

pub struct RegressionRun {
    pub report: RegressionReport,
    pub net: Network,
    pub optimizer: Optimizer,
}

pub fn build_regression_net(cfg: &ExperimentConfig, rng: &mut RngState) -> Result<Network> {
    let specs = cfg.network.layer_specs(1, 1)?;
    Ok(build_mlp(&specs, cfg.network.sigma_bias, rng)?)
}

/// One squared-error update on a single sample. Returns the pre-update error.
pub fn squared_error_step(net: &mut Network, opt: &mut Optimizer, x: f64, y: f64) -> Result<f64> {
    let (f, cache) = net.forward(&[x])?;
    let err = f[0] - y;
    let g = net.backward(&cache, &[2.0 * err])?;
    opt.step(net, &g)?;
    Ok(err)
}

fn far_max(xs: &[f64], values: &[f64], x_t: f64, radius: f64) -> f64 {
    xs.iter()
        .zip(values)
        .filter(|(x, _)| (*x - x_t).abs() > radius)
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()))
}

fn abort_reason(e: ExpError) -> Result<String> {
    match e {
        ExpError::Core(CoreError::NonFinite { layer, tensor }) => {
            Ok(format!("non-finite gradient in layer {layer} {tensor}"))
        }
        other => Err(other),
    }
}

pub fn run_streaming_regression(cfg: &ExperimentConfig, seed: u64) -> Result<RegressionRun> {
    let rc = &cfg.regression;
    let root = RngState::new(seed);
    let mut net = build_regression_net(cfg, &mut root.derive(1))?;
    let stream = make_sine_stream(rc.stream_size, &mut root.derive(2))?;
    let mut opt = Optimizer::new(cfg.optimizer())?;
    let test_x = test_grid(rc.test_points);
    let grid: Vec<Vec<f64>> = test_x.iter().map(|x| vec![*x]).collect();

    let mut mse_curve = Vec::with_capacity(stream.len());
    let mut ntk_snapshots = Vec::new();
    let mut aborted = None;
    'stream: for (i, (&x, &y)) in stream.x.iter().zip(&stream.y).enumerate() {
        for _ in 0..rc.updates_per_sample {
            if let Err(e) = squared_error_step(&mut net, &mut opt, x, y) {
                aborted = Some(abort_reason(e)?);
                break 'stream;
            }
        }
        let mse = test_mse(&net, &test_x)?;
        mse_curve.push(mse);
        if !(mse <= rc.divergence_mse) {
            aborted = Some(format!("test MSE {mse} exceeded {} at step {}", rc.divergence_mse, i + 1));
            break;
        }
        let step = i + 1;
        if rc.ntk_steps.contains(&step) {
            let curve = ntk_curve(&net, &[x], &grid, true)?;
            ntk_snapshots.push(NtkSnapshot {
                step,
                x_t: x,
                far_max: far_max(&test_x, &curve.by_max, x, rc.ntk_radius),
                far_max_by_self: far_max(&test_x, &curve.by_self, x, rc.ntk_radius),
                curve,
            });
        }
    }
    let predictions = predict_curve(&net, &test_x)?;
    let final_mse = match mse_curve.last() {
        Some(v) => *v,
        None => test_mse(&net, &test_x)?,
    };
    Ok(RegressionRun {
        report: RegressionReport {
            test_mse: final_mse,
            mse_curve,
            ntk_snapshots,
            test_x,
            predictions,
            stream,
            aborted,
        },
        net,
        optimizer: opt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditReport {
    pub updates: usize,
    pub converged: bool,
    /// |f(x) − y| after the edit.
    pub final_error: f64,
    /// Largest |f_after − f_before| on test points outside the window.
    pub spill: f64,
    pub test_x: Vec<f64>,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

/// Updates only on `(edit.x, edit.y)` until the error drops below the
/// tolerance or the update cap is hit.
pub fn point_edit(net: &mut Network, opt: &mut Optimizer, edit: &EditConfig, test_x: &[f64]) -> Result<EditReport> {
    let before = predict_curve(net, test_x)?;
    let mut updates = 0;
    let mut error = (net.predict(&[edit.x])?[0] - edit.y).abs();
    while error >= edit.tolerance && updates < edit.max_updates {
        squared_error_step(net, opt, edit.x, edit.y)?;
        updates += 1;
        error = (net.predict(&[edit.x])?[0] - edit.y).abs();
    }
    let after = predict_curve(net, test_x)?;
    let spill = test_x
        .iter()
        .zip(before.iter().zip(&after))
        .filter(|(x, _)| (*x - edit.x).abs() > edit.window)
        .fold(0.0f64, |m, (_, (b, a))| m.max((a - b).abs()));
    Ok(EditReport {
        updates,
        converged: error < edit.tolerance,
        final_error: error,
        spill,
        test_x: test_x.to_vec(),
        before,
        after,
    })
}

/// Streaming pre-training followed by a point edit with the same optimizer.
pub fn run_point_edit(cfg: &ExperimentConfig, seed: u64) -> Result<(RegressionRun, Option<EditReport>)> {
    let mut run = run_streaming_regression(cfg, seed)?;
    if run.report.aborted.is_some() {
        return Ok((run, None));
    }
    let test_x = run.report.test_x.clone();
    let edit = point_edit(&mut run.net, &mut run.optimizer, &cfg.edit, &test_x)?;
    Ok((run, Some(edit)))
}
