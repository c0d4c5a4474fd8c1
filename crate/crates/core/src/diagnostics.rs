//! Tangent kernels, gradient covariance and representation sparsity.

use std::path::Path;

use crate::csvio::{format_f64, CsvOut};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{dot, DenseMatrix, DenseVector};
use crate::loss::{loss_gradient, LossSample};
use crate::network::Network;

/// Default number of samples in a gradient covariance matrix.
pub const DEFAULT_COVARIANCE_SAMPLES: usize = 32;

/// Gradient norms at or below this are treated as zero.
pub const MIN_GRADIENT_NORM: f64 = 1e-12;

fn scalar_gradient(net: &Network, x: &[f64], include_elephant: bool) -> Result<DenseVector> {
    if net.output_dim() != 1 {
        return Err(Error::Usage(format!(
            "tangent kernel needs a scalar-output network, this one has {} outputs",
            net.output_dim()
        )));
    }
    Ok(net.output_gradient(x, 0)?.flatten_with(include_elephant))
}

/// `⟨∇_w f(x), ∇_w f(x_t)⟩` for a scalar-output network.
pub fn ntk(net: &Network, x: &[f64], x_t: &[f64], include_elephant: bool) -> Result<f64> {
    let g = scalar_gradient(net, x, include_elephant)?;
    let gt = scalar_gradient(net, x_t, include_elephant)?;
    Ok(dot(&g, &gt))
}

/// Raw kernel values `ntk(x, x_t)` for every `x` in `xs`.
pub fn ntk_row(net: &Network, x_t: &[f64], xs: &[Vec<f64>], include_elephant: bool) -> Result<Vec<f64>> {
    let gt = scalar_gradient(net, x_t, include_elephant)?;
    exec::map(xs, |x| scalar_gradient(net, x, include_elephant).map(|g| dot(&g, &gt)))
        .into_iter()
        .collect()
}

/// A kernel slice `ntk(·, x_t)` with both normalizations.
#[derive(Debug, Clone, PartialEq)]
pub struct NtkCurve {
    pub raw: Vec<f64>,
    pub self_value: f64,
    /// Divided by the largest magnitude along the curve.
    pub by_max: Vec<f64>,
    /// Divided by `ntk(x_t, x_t)`.
    pub by_self: Vec<f64>,
}

pub fn ntk_curve(net: &Network, x_t: &[f64], xs: &[Vec<f64>], include_elephant: bool) -> Result<NtkCurve> {
    let gt = scalar_gradient(net, x_t, include_elephant)?;
    let self_value = dot(&gt, &gt);
    if !(self_value > 0.0) {
        return Err(Error::Degenerate(
            "tangent kernel at the target point is zero".into(),
        ));
    }
    let raw = ntk_row(net, x_t, xs, include_elephant)?;
    let max = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let by_max = if max > 0.0 {
        raw.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; raw.len()]
    };
    let by_self = raw.iter().map(|v| v / self_value).collect();
    Ok(NtkCurve {
        raw,
        self_value,
        by_max,
        by_self,
    })
}

/// `ntk(x, x_t)` over `xs`, scaled into `[-1, 1]` by the curve's largest magnitude.
pub fn normalized_ntk_curve(net: &Network, x_t: &[f64], xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(ntk_curve(net, x_t, xs, true)?.by_max)
}

/// Writes `x,value,value_by_self,raw` rows for a one-dimensional input grid.
pub fn write_ntk_curve_csv(path: &Path, xs: &[f64], curve: &NtkCurve) -> Result<()> {
    if xs.len() != curve.raw.len() {
        return Err(Error::shape("ntk curve csv", curve.raw.len(), xs.len()));
    }
    let mut w = CsvOut::create(path, &["x", "value", "value_by_self", "raw"])?;
    for (i, x) in xs.iter().enumerate() {
        w.floats(&[*x, curve.by_max[i], curve.by_self[i], curve.raw[i]])?;
    }
    w.finish()
}

/// Normalized inner products of per-sample gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub entries: DenseMatrix,
    pub sample_ids: Vec<String>,
    /// Samples dropped because their gradient vanished.
    pub excluded: Vec<String>,
}

impl KernelMatrix {
    pub fn k(&self) -> usize {
        self.entries.rows()
    }

    pub fn mean_abs_off_diagonal(&self) -> f64 {
        let k = self.k();
        if k < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    s += self.entries.get(i, j).abs();
                }
            }
        }
        s / (k * (k - 1)) as f64
    }

    /// `i,j,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = CsvOut::create(path, &["i", "j", "value"])?;
        for i in 0..self.k() {
            for j in 0..self.k() {
                w.row(&[i.to_string(), j.to_string(), format_f64(self.entries.get(i, j))])?;
            }
        }
        w.finish()
    }
}

/// Cosine-similarity matrix of the given gradient vectors. Zero-norm
/// gradients are excluded and reported.
pub fn covariance_from_gradients(ids: &[String], grads: &[DenseVector]) -> Result<KernelMatrix> {
    if ids.len() != grads.len() {
        return Err(Error::shape("covariance ids", grads.len(), ids.len()));
    }
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (id, g) in ids.iter().zip(grads) {
        let n = dot(g, g).sqrt();
        if n > MIN_GRADIENT_NORM {
            kept.push((id.clone(), g, n));
        } else {
            log::warn!("gradient covariance: sample {id} has a vanishing gradient, excluded");
            excluded.push(id.clone());
        }
    }
    if kept.len() < 2 {
        return Err(Error::Degenerate(format!(
            "gradient covariance needs at least 2 samples with nonzero gradient, got {}",
            kept.len()
        )));
    }
    let k = kept.len();
    let rows = exec::map_range(k, |i| {
        (0..k)
            .map(|j| {
                if i == j {
                    1.0
                } else {
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    let v = dot(kept[a].1, kept[b].1) / (kept[a].2 * kept[b].2);
                    v.clamp(-1.0, 1.0)
                }
            })
            .collect::<Vec<f64>>()
    });
    Ok(KernelMatrix {
        entries: DenseMatrix::from_rows(&rows)?,
        sample_ids: kept.into_iter().map(|(id, _, _)| id).collect(),
        excluded,
    })
}

/// `C_ij = ⟨∇l_i, ∇l_j⟩ / (‖∇l_i‖‖∇l_j‖)` over per-sample loss gradients.
pub fn gradient_covariance(net: &Network, samples: &[LossSample], ids: &[String]) -> Result<KernelMatrix> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "gradient covariance needs k >= 2 samples, got {}",
            samples.len()
        )));
    }
    let grads: Result<Vec<DenseVector>> = exec::map(samples, |s| {
        loss_gradient(net, s).map(|(_, g)| g.flatten_with(true))
    })
    .into_iter()
    .collect();
    covariance_from_gradients(ids, &grads?)
}

/// Fraction of last-hidden-layer activations with `|value| <= eps`.
pub fn representation_sparsity(net: &Network, inputs: &[Vec<f64>], eps: f64) -> Result<f64> {
    let n_layers = net.layers().len();
    if n_layers < 2 {
        return Err(Error::Usage("representation sparsity needs a hidden layer".into()));
    }
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no inputs".into()));
    }
    let fractions: Result<Vec<f64>> = exec::map(inputs, |x| {
        let (_, cache) = net.forward(x)?;
        let h = cache.activations(n_layers - 2);
        Ok(h.iter().filter(|v| v.abs() <= eps).count() as f64 / h.len() as f64)
    })
    .into_iter()
    .collect();
    Ok(fractions?.iter().sum::<f64>() / inputs.len() as f64)
}
