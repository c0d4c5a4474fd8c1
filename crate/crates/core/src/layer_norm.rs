//! Layer normalization without affine parameters.

use crate::error::{Error, Result};
use crate::linalg::DenseVector;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Values retained by [`layer_norm_forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormCache {
    pub normalized: DenseVector,
    pub inv_std: f64,
}

/// `y = (x - mean(x)) / sqrt(var(x) + eps)` using the population variance.
pub fn layer_norm_forward(x: &[f64], eps: f64) -> Result<(DenseVector, LayerNormCache)> {
    if x.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "layer norm needs at least 2 features, got {}",
            x.len()
        )));
    }
    if !(eps >= 0.0) {
        return Err(Error::Parameter(format!("layer norm eps must be >= 0, got {eps}")));
    }
    let mut y = vec![0.0; x.len()];
    let inv_std = normalize_into(x, eps, &mut y);
    let y = DenseVector(y);
    Ok((
        y.clone(),
        LayerNormCache {
            normalized: y,
            inv_std,
        },
    ))
}

/// Returns `∂L/∂x` given `∂L/∂y`.
pub fn layer_norm_backward(cache: &LayerNormCache, upstream: &[f64]) -> Result<DenseVector> {
    if upstream.len() != cache.normalized.len() {
        return Err(Error::shape(
            "layer_norm_backward",
            cache.normalized.len(),
            upstream.len(),
        ));
    }
    let mut dx = vec![0.0; upstream.len()];
    backward_into(&cache.normalized, cache.inv_std, upstream, &mut dx);
    Ok(DenseVector(dx))
}

/// Row kernel shared with the batched path. Returns `1/sqrt(var + eps)`.
pub(crate) fn normalize_into(x: &[f64], eps: f64, y: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = (xi - mean) * inv_std;
    }
    inv_std
}

/// `dx = inv_std · (dy − mean(dy) − y · mean(dy ∘ y))`
pub(crate) fn backward_into(y: &[f64], inv_std: f64, dy: &[f64], dx: &mut [f64]) {
    let n = y.len() as f64;
    let mean_dy = dy.iter().sum::<f64>() / n;
    let mean_dy_y = dy.iter().zip(y).map(|(g, v)| g * v).sum::<f64>() / n;
    for ((o, g), v) in dx.iter_mut().zip(dy).zip(y) {
        *o = inv_std * (g - mean_dy - v * mean_dy_y);
    }
}
