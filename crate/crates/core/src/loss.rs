//! Per-sample losses and their output cotangents.

use crate::error::{Error, Result};
use crate::network::{GradientBundle, Network};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(logits)[label]` and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let mut g = softmax(logits);
    g[label] -= 1.0;
    Ok((lse - logits[label], g))
}

/// One sample together with the loss it is scored by.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSample {
    /// `½‖f(x) − target‖²`
    SquaredError { x: Vec<f64>, target: Vec<f64> },
    /// `½(f(x)[index] − target)²`, e.g. a TD error on the taken action.
    SelectedSquaredError { x: Vec<f64>, index: usize, target: f64 },
    /// Softmax cross-entropy against a class label.
    CrossEntropy { x: Vec<f64>, label: usize },
}

impl LossSample {
    pub fn input(&self) -> &[f64] {
        match self {
            LossSample::SquaredError { x, .. }
            | LossSample::SelectedSquaredError { x, .. }
            | LossSample::CrossEntropy { x, .. } => x,
        }
    }
}

/// Loss value and parameter gradient of one sample.
pub fn loss_gradient(net: &Network, sample: &LossSample) -> Result<(f64, GradientBundle)> {
    let (y, cache) = net.forward(sample.input())?;
    let (loss, d) = match sample {
        LossSample::SquaredError { target, .. } => {
            if target.len() != y.len() {
                return Err(Error::shape("squared-error target", y.len(), target.len()));
            }
            let d: Vec<f64> = y.iter().zip(target).map(|(a, b)| a - b).collect();
            (0.5 * d.iter().map(|v| v * v).sum::<f64>(), d)
        }
        LossSample::SelectedSquaredError { index, target, .. } => {
            if *index >= y.len() {
                return Err(Error::InvalidInput(format!(
                    "output index {index} out of range for {} outputs",
                    y.len()
                )));
            }
            let mut d = vec![0.0; y.len()];
            d[*index] = y[*index] - target;
            (0.5 * d[*index] * d[*index], d)
        }
        LossSample::CrossEntropy { label, .. } => cross_entropy(&y, *label)?,
    };
    Ok((loss, net.backward(&cache, &d)?))
}
