//! Fully connected networks: construction, forward and reverse passes and
//! gradient flattening.
//!
//! Each layer computes `z = W x + b`, optionally layer-normalizes `z` and
//! then applies its activation. The per-sample pass is the reference; the
//! batched pass computes the sum of per-sample gradients with matrix
//! products and is what training loops use.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::activation::{backward_row, forward_row, ActivationSpec, ElephantParams};
use crate::error::{Error, Result};
use crate::exec;
use crate::layer_norm::{backward_into, normalize_into, DEFAULT_EPS};
use crate::linalg::{gemm, linear_forward, DenseMatrix, DenseVector, MatRef};
use crate::rng::RngState;

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub in_features: usize,
    pub out_features: usize,
    #[serde(default)]
    pub activation: Option<ActivationSpec>,
    #[serde(default)]
    pub pre_layer_norm: bool,
}

impl LayerSpec {
    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerSpec {
            in_features,
            out_features,
            activation: None,
            pre_layer_norm: false,
        }
    }

    pub fn hidden(in_features: usize, out_features: usize, activation: ActivationSpec) -> Self {
        LayerSpec {
            in_features,
            out_features,
            activation: Some(activation),
            pre_layer_norm: false,
        }
    }

    pub fn with_layer_norm(mut self, on: bool) -> Self {
        self.pre_layer_norm = on;
        self
    }

    /// Width of the layer's output after the activation.
    pub fn output_width(&self) -> usize {
        match &self.activation {
            Some(a) => a.output_width(self.out_features),
            None => self.out_features,
        }
    }

    fn is_elephant(&self) -> bool {
        matches!(self.activation, Some(ActivationSpec::Elephant { .. }))
    }
}

/// Checks every spec on its own and that consecutive layers chain.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Spec("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_features == 0 || s.out_features == 0 {
            return Err(Error::Spec(format!(
                "layer {i}: in_features and out_features must be >= 1"
            )));
        }
        if let Some(a) = &s.activation {
            a.validate()?;
            a.check_units(s.out_features)
                .map_err(|e| Error::Spec(format!("layer {i}: {e}")))?;
        }
        if s.pre_layer_norm && s.out_features < 2 {
            return Err(Error::Spec(format!(
                "layer {i}: layer norm needs out_features >= 2"
            )));
        }
        if i + 1 < specs.len() && s.output_width() != specs[i + 1].in_features {
            return Err(Error::Spec(format!(
                "layer {i} outputs {} features but layer {} expects {}",
                s.output_width(),
                i + 1,
                specs[i + 1].in_features
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: DenseMatrix,
    pub bias: DenseVector,
    pub elephant: Option<ElephantParams>,
}

impl Layer {
    fn n_params(&self) -> usize {
        let mut n = self.weights.as_slice().len() + self.bias.len();
        if let Some(e) = &self.elephant {
            if e.learnable {
                n += 2 * e.units();
            }
        }
        n
    }
}

#[derive(Debug)]
pub struct Network {
    layers: Vec<Layer>,
    id: u64,
    version: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            layers: self.layers.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// `n` evenly spaced values over `[lo, hi]`, endpoints included.
/// A single point sits at `lo`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + i as f64 * step })
                .collect()
        }
    }
}

/// Builds a network with uniform `±sqrt(1/in)` weights. Layers feeding an
/// elephant activation get biases evenly spaced over
/// `[-sqrt(3)·sigma_bias, sqrt(3)·sigma_bias]`; all other biases are zero.
pub fn build_mlp(specs: &[LayerSpec], sigma_bias: f64, rng: &mut RngState) -> Result<Network> {
    validate_specs(specs)?;
    if !(sigma_bias >= 0.0) || !sigma_bias.is_finite() {
        return Err(Error::Parameter(format!(
            "sigma_bias must be finite and >= 0, got {sigma_bias}"
        )));
    }
    let mut layers = Vec::with_capacity(specs.len());
    for s in specs {
        let bound = (1.0 / s.in_features as f64).sqrt();
        let w: Vec<f64> = (0..s.in_features * s.out_features)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let weights = DenseMatrix::from_vec(s.out_features, s.in_features, w)?;
        let (bias, elephant) = match s.activation {
            Some(ActivationSpec::Elephant { a, h, d, learnable }) => {
                let r = 3f64.sqrt() * sigma_bias;
                (
                    DenseVector(linspace(-r, r, s.out_features)),
                    Some(ElephantParams::uniform(s.out_features, a, h, d, learnable)?),
                )
            }
            _ => (DenseVector::zeros(s.out_features), None),
        };
        layers.push(Layer {
            spec: s.clone(),
            weights,
            bias,
            elephant,
        });
    }
    Ok(Network::from_layers(layers))
}

impl Network {
    pub(crate) fn from_layers(layers: Vec<Layer>) -> Self {
        Network {
            layers,
            id: fresh_id(),
            version: 0,
        }
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec.clone()).collect();
        validate_specs(&specs)?;
        for (i, l) in layers.iter().enumerate() {
            let s = &l.spec;
            if l.weights.rows() != s.out_features || l.weights.cols() != s.in_features {
                return Err(Error::Spec(format!(
                    "layer {i}: weights are {}x{}, spec says {}x{}",
                    l.weights.rows(),
                    l.weights.cols(),
                    s.out_features,
                    s.in_features
                )));
            }
            if l.bias.len() != s.out_features {
                return Err(Error::Spec(format!(
                    "layer {i}: bias has {} entries, expected {}",
                    l.bias.len(),
                    s.out_features
                )));
            }
            match (&l.elephant, s.is_elephant()) {
                (Some(e), true) => {
                    if e.a.len() != s.out_features || e.h.len() != s.out_features {
                        return Err(Error::Spec(format!(
                            "layer {i}: elephant parameters do not match {} units",
                            s.out_features
                        )));
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(Error::Spec(format!(
                        "layer {i}: elephant parameters present iff activation is elephant"
                    )))
                }
            }
        }
        Ok(Network::from_layers(layers))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_features
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.spec.output_width()).unwrap_or(0)
    }

    /// Number of trainable scalars (frozen elephant parameters excluded).
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.is_finite()
                && l.bias.is_finite()
                && l.elephant.as_ref().is_none_or(|e| {
                    e.a.iter().chain(&e.h).all(|v| v.is_finite())
                })
        })
    }

    /// Trainable tensors as `(layer, name, values)` in flattening order.
    pub fn tensors_mut(&mut self) -> Vec<(usize, &'static str, &mut [f64])> {
        self.version += 1;
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((i, "weights", l.weights.as_mut_slice()));
            out.push((i, "bias", &mut l.bias.0[..]));
            if let Some(e) = l.elephant.as_mut() {
                if e.learnable {
                    out.push((i, "a", &mut e.a[..]));
                    out.push((i, "h", &mut e.h[..]));
                }
            }
        }
        out
    }

    /// Clamps every learnable elephant `a`, `h` to the positive floor.
    pub fn clamp_elephant(&mut self) -> usize {
        let mut n = 0;
        for l in &mut self.layers {
            if let Some(e) = l.elephant.as_mut() {
                if e.learnable {
                    n += e.clamp();
                }
            }
        }
        if n > 0 {
            self.version += 1;
        }
        n
    }

    fn stamp(&self) -> (u64, u64) {
        (self.id, self.version)
    }

    fn check_stamp(&self, stamp: (u64, u64)) -> Result<()> {
        if stamp != self.stamp() {
            return Err(Error::Usage(
                "forward cache is stale: the network changed after the forward pass".into(),
            ));
        }
        Ok(())
    }

    /// Output only, no cache.
    pub fn predict(&self, x: &[f64]) -> Result<DenseVector> {
        Ok(self.forward(x)?.0)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(DenseVector, ForwardCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), x.len()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for l in &self.layers {
            let z = linear_forward(&l.weights, &l.bias, &cur)?.0;
            let norm = if l.spec.pre_layer_norm {
                let mut y = vec![0.0; z.len()];
                let inv = normalize_into(&z, DEFAULT_EPS, &mut y);
                Some((y, inv))
            } else {
                None
            };
            let out = match &l.spec.activation {
                Some(act) => {
                    let n = norm.as_ref().map_or(&z, |(y, _)| y);
                    let mut o = vec![0.0; act.output_width(n.len())];
                    forward_row(act, n, l.elephant.as_ref(), &mut o);
                    o
                }
                None => norm.as_ref().map_or_else(|| z.clone(), |(y, _)| y.clone()),
            };
            caches.push(LayerCache { z, norm, out: out.clone() });
            cur = out;
        }
        Ok((
            DenseVector(cur),
            ForwardCache {
                stamp: self.stamp(),
                input: x.to_vec(),
                layers: caches,
            },
        ))
    }

    /// Gradients of `⟨d_output, f(x)⟩` with respect to every trainable parameter.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64]) -> Result<GradientBundle> {
        self.check_stamp(cache.stamp)?;
        if d_output.len() != self.output_dim() {
            return Err(Error::shape("d_output", self.output_dim(), d_output.len()));
        }
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut dy = d_output.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let c = &cache.layers[i];
            let mut g = LayerGrad::zeros_for(l);
            let n = c.norm.as_ref().map_or(&c.z, |(y, _)| y);
            let dn = match &l.spec.activation {
                Some(act) => {
                    let mut dn = vec![0.0; n.len()];
                    let eg = match (&mut g.a, &mut g.h) {
                        (Some(a), Some(h)) => Some((&mut a.0[..], &mut h.0[..])),
                        _ => None,
                    };
                    backward_row(act, n, l.elephant.as_ref(), &dy, &mut dn, eg);
                    dn
                }
                None => dy,
            };
            let dz = match &c.norm {
                Some((y, inv)) => {
                    let mut dz = vec![0.0; dn.len()];
                    backward_into(y, *inv, &dn, &mut dz);
                    dz
                }
                None => dn,
            };
            let x_in = if i == 0 { &cache.input } else { &cache.layers[i - 1].out };
            for (r, dzr) in dz.iter().enumerate() {
                for (w, xv) in g.weights.row_mut(r).iter_mut().zip(x_in) {
                    *w = dzr * xv;
                }
            }
            g.bias.0.copy_from_slice(&dz);
            if i > 0 {
                dy = l.weights.matvec_t(&dz)?.0;
            } else {
                dy = Vec::new();
            }
            grads.push(g);
        }
        grads.reverse();
        Ok(GradientBundle { layers: grads })
    }

    /// Gradient of output `index` with respect to the parameters at `x`.
    pub fn output_gradient(&self, x: &[f64], index: usize) -> Result<GradientBundle> {
        if index >= self.output_dim() {
            return Err(Error::InvalidInput(format!(
                "output index {index} out of range for {} outputs",
                self.output_dim()
            )));
        }
        let (_, cache) = self.forward(x)?;
        let mut d = vec![0.0; self.output_dim()];
        d[index] = 1.0;
        self.backward(&cache, &d)
    }

    /// Row-major batch forward. `x` holds `rows` inputs back to back.
    pub fn forward_batch(&self, x: &[f64], rows: usize) -> Result<(Vec<f64>, BatchCache)> {
        let din = self.input_dim();
        if x.len() != rows * din {
            return Err(Error::shape("batch input", rows * din, x.len()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let mut cur_w = din;
        for l in &self.layers {
            let units = l.spec.out_features;
            let mut z = vec![0.0; rows * units];
            for r in z.chunks_exact_mut(units) {
                r.copy_from_slice(&l.bias);
            }
            gemm(
                1.0,
                MatRef::new(&cur, rows, cur_w),
                MatRef::from(&l.weights).t(),
                1.0,
                &mut z,
            )?;
            let out_w = l.spec.output_width();
            let blocks = row_blocks(rows, units);
            let parts = exec::map(&blocks, |&(r0, r1)| {
                let mut norm = Vec::new();
                let mut inv = Vec::new();
                if l.spec.pre_layer_norm {
                    norm = vec![0.0; (r1 - r0) * units];
                    for (r, y) in (r0..r1).zip(norm.chunks_exact_mut(units)) {
                        inv.push(normalize_into(&z[r * units..(r + 1) * units], DEFAULT_EPS, y));
                    }
                }
                let out = match &l.spec.activation {
                    Some(act) => {
                        let mut o = vec![0.0; (r1 - r0) * out_w];
                        for (k, r) in (r0..r1).enumerate() {
                            let n = if l.spec.pre_layer_norm {
                                &norm[k * units..(k + 1) * units]
                            } else {
                                &z[r * units..(r + 1) * units]
                            };
                            forward_row(act, n, l.elephant.as_ref(), &mut o[k * out_w..(k + 1) * out_w]);
                        }
                        o
                    }
                    None if l.spec.pre_layer_norm => norm.clone(),
                    None => z[r0 * units..r1 * units].to_vec(),
                };
                (norm, inv, out)
            });
            let mut norm = Vec::new();
            let mut inv = Vec::new();
            let mut out = Vec::with_capacity(rows * out_w);
            for (n, i, o) in parts {
                norm.extend(n);
                inv.extend(i);
                out.extend(o);
            }
            caches.push(BatchLayerCache {
                z,
                norm: if l.spec.pre_layer_norm { Some((norm, inv)) } else { None },
                out: out.clone(),
            });
            cur = out;
            cur_w = out_w;
        }
        Ok((
            cur,
            BatchCache {
                stamp: self.stamp(),
                rows,
                input: x.to_vec(),
                layers: caches,
            },
        ))
    }

    /// Batch outputs without keeping intermediates. Rows are processed in
    /// fixed chunks so memory stays bounded on wide networks.
    pub fn predict_batch(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        let din = self.input_dim();
        if x.len() != rows * din {
            return Err(Error::shape("batch input", rows * din, x.len()));
        }
        let starts: Vec<usize> = (0..rows).step_by(CHUNK).collect();
        let parts = exec::map(&starts, |&r0| {
            let r1 = (r0 + CHUNK).min(rows);
            self.forward_batch(&x[r0 * din..r1 * din], r1 - r0).map(|(y, _)| y)
        });
        let mut out = Vec::with_capacity(rows * self.output_dim());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Sum over the batch of per-sample gradients of `⟨d_output_r, f(x_r)⟩`.
    pub fn backward_batch(&self, cache: &BatchCache, d_output: &[f64]) -> Result<GradientBundle> {
        self.check_stamp(cache.stamp)?;
        let rows = cache.rows;
        if d_output.len() != rows * self.output_dim() {
            return Err(Error::shape("batch d_output", rows * self.output_dim(), d_output.len()));
        }
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut dy = d_output.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let c = &cache.layers[i];
            let units = l.spec.out_features;
            let out_w = l.spec.output_width();
            let mut g = LayerGrad::zeros_for(l);
            let blocks = row_blocks(rows, units);
            let want_elephant = g.a.is_some();
            let parts = exec::map(&blocks, |&(r0, r1)| {
                let mut dz = vec![0.0; (r1 - r0) * units];
                let mut da = vec![0.0; if want_elephant { units } else { 0 }];
                let mut dh = da.clone();
                let mut dn = vec![0.0; units];
                for (k, r) in (r0..r1).enumerate() {
                    let n = match &c.norm {
                        Some((y, _)) => &y[r * units..(r + 1) * units],
                        None => &c.z[r * units..(r + 1) * units],
                    };
                    let dyr = &dy[r * out_w..(r + 1) * out_w];
                    match &l.spec.activation {
                        Some(act) => {
                            let eg = if want_elephant {
                                Some((&mut da[..], &mut dh[..]))
                            } else {
                                None
                            };
                            backward_row(act, n, l.elephant.as_ref(), dyr, &mut dn, eg);
                        }
                        None => dn.copy_from_slice(dyr),
                    }
                    let dzr = &mut dz[k * units..(k + 1) * units];
                    match &c.norm {
                        Some((_, inv)) => backward_into(n, inv[r], &dn, dzr),
                        None => dzr.copy_from_slice(&dn),
                    }
                }
                (dz, da, dh)
            });
            let mut dz = Vec::with_capacity(rows * units);
            for (d, da, dh) in parts {
                dz.extend(d);
                if let (Some(ga), Some(gh)) = (g.a.as_mut(), g.h.as_mut()) {
                    for (t, v) in ga.iter_mut().zip(&da) {
                        *t += v;
                    }
                    for (t, v) in gh.iter_mut().zip(&dh) {
                        *t += v;
                    }
                }
            }
            let (x_in, in_w) = if i == 0 {
                (&cache.input, self.input_dim())
            } else {
                (&cache.layers[i - 1].out, self.layers[i - 1].spec.output_width())
            };
            gemm(
                1.0,
                MatRef::new(&dz, rows, units).t(),
                MatRef::new(x_in, rows, in_w),
                0.0,
                g.weights.as_mut_slice(),
            )?;
            for r in dz.chunks_exact(units) {
                for (b, v) in g.bias.iter_mut().zip(r) {
                    *b += v;
                }
            }
            if i > 0 {
                let mut dx = vec![0.0; rows * in_w];
                gemm(
                    1.0,
                    MatRef::new(&dz, rows, units),
                    MatRef::from(&l.weights),
                    0.0,
                    &mut dx,
                )?;
                dy = dx;
            }
            grads.push(g);
        }
        grads.reverse();
        Ok(GradientBundle { layers: grads })
    }
}

/// Splits `rows` into contiguous blocks of roughly 16k values. The split
/// depends only on the shape, so per-block partial sums are the same in
/// every execution mode.
fn row_blocks(rows: usize, width: usize) -> Vec<(usize, usize)> {
    let per = (16_384 / width.max(1)).max(1);
    (0..rows)
        .step_by(per)
        .map(|r0| (r0, (r0 + per).min(rows)))
        .collect()
}

#[derive(Debug, Clone)]
struct LayerCache {
    z: Vec<f64>,
    norm: Option<(Vec<f64>, f64)>,
    out: Vec<f64>,
}

/// Intermediate values of one per-sample forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: (u64, u64),
    input: Vec<f64>,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// Output of hidden layer `i` after its activation.
    pub fn activations(&self, i: usize) -> &[f64] {
        &self.layers[i].out
    }

    /// Input to layer `i`'s activation (after layer norm when enabled).
    pub fn pre_activations(&self, i: usize) -> &[f64] {
        let c = &self.layers[i];
        c.norm.as_ref().map_or(&c.z, |(y, _)| y)
    }
}

#[derive(Debug, Clone)]
struct BatchLayerCache {
    z: Vec<f64>,
    norm: Option<(Vec<f64>, Vec<f64>)>,
    out: Vec<f64>,
}

/// Intermediate values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchCache {
    stamp: (u64, u64),
    rows: usize,
    input: Vec<f64>,
    layers: Vec<BatchLayerCache>,
}

impl BatchCache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Row-major activations of layer `i`.
    pub fn activations(&self, i: usize) -> &[f64] {
        &self.layers[i].out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: DenseMatrix,
    pub bias: DenseVector,
    /// Present only for learnable elephant layers.
    pub a: Option<DenseVector>,
    pub h: Option<DenseVector>,
}

impl LayerGrad {
    fn zeros_for(l: &Layer) -> Self {
        let learn = l.elephant.as_ref().filter(|e| e.learnable);
        LayerGrad {
            weights: DenseMatrix::zeros(l.weights.rows(), l.weights.cols()),
            bias: DenseVector::zeros(l.bias.len()),
            a: learn.map(|e| DenseVector::zeros(e.units())),
            h: learn.map(|e| DenseVector::zeros(e.units())),
        }
    }

    fn tensors(&self) -> impl Iterator<Item = (&'static str, &[f64])> {
        [
            Some(("weights", self.weights.as_slice())),
            Some(("bias", &self.bias.0[..])),
            self.a.as_ref().map(|v| ("a", &v.0[..])),
            self.h.as_ref().map(|v| ("h", &v.0[..])),
        ]
        .into_iter()
        .flatten()
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        [
            Some(self.weights.as_mut_slice()),
            Some(&mut self.bias.0[..]),
            self.a.as_mut().map(|v| &mut v.0[..]),
            self.h.as_mut().map(|v| &mut v.0[..]),
        ]
        .into_iter()
        .flatten()
    }
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
}

impl GradientBundle {
    pub fn zeros_like(net: &Network) -> Self {
        GradientBundle {
            layers: net.layers.iter().map(LayerGrad::zeros_for).collect(),
        }
    }

    fn check_same_shape(&self, other: &GradientBundle) -> Result<()> {
        let a: Vec<usize> = self.tensors().map(|(_, _, t)| t.len()).collect();
        let b: Vec<usize> = other.tensors().map(|(_, _, t)| t.len()).collect();
        if a != b {
            return Err(Error::shape("gradient bundle", a.iter().sum(), b.iter().sum()));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &GradientBundle) -> Result<()> {
        self.check_same_shape(other)?;
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (t, (_, s)) in l.tensors_mut().zip(o.tensors()) {
                for (x, y) in t.iter_mut().zip(s) {
                    *x += y;
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            for t in l.tensors_mut() {
                t.iter_mut().for_each(|x| *x *= k);
            }
        }
    }

    /// `(layer, name, values)` in flattening order.
    pub fn tensors(&self) -> impl Iterator<Item = (usize, &'static str, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.tensors().map(move |(n, t)| (i, n, t)))
    }

    pub fn len(&self) -> usize {
        self.tensors().map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.tensors()
            .find(|(_, _, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(i, n, _)| (i, n))
    }

    /// Concatenates layer by layer: weights row-major, bias, then `a` and
    /// `h` when `include_elephant` is set.
    pub fn flatten_with(&self, include_elephant: bool) -> DenseVector {
        let mut out = Vec::with_capacity(self.len());
        for (_, name, t) in self.tensors() {
            if include_elephant || (name != "a" && name != "h") {
                out.extend_from_slice(t);
            }
        }
        DenseVector(out)
    }
}

/// Full flattening including learnable elephant parameters.
pub fn flatten_gradients(g: &GradientBundle) -> DenseVector {
    g.flatten_with(true)
}
