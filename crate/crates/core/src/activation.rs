//! Activation functions and the grid estimator of function sparsity.
//!
//! The elephant activation `h / (1 + |x/a|^d)` is bell shaped: both its value
//! and its derivative vanish away from a narrow band around zero, which is
//! what makes the tangent kernel of an elephant layer local.
//!
//! Maxout and LWTA act on groups of `k` consecutive units, FTA expands every
//! unit into `k` fuzzy bins. The classical functions and the elephant map one
//! unit to one output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseVector;

/// Smallest value learnable elephant widths and heights are clamped to.
pub const ELEPHANT_PARAM_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Tanh,
    Sigmoid,
    Elu,
    Maxout,
    Lwta,
    Fta,
    Elephant,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Elu => "elu",
            ActivationKind::Maxout => "maxout",
            ActivationKind::Lwta => "lwta",
            ActivationKind::Fta => "fta",
            ActivationKind::Elephant => "elephant",
        }
    }
}

impl std::fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One activation function together with its hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawActivation", into = "RawActivation")]
pub enum ActivationSpec {
    Relu,
    Tanh,
    Sigmoid,
    Elu,
    Maxout {
        k: usize,
    },
    Lwta {
        k: usize,
    },
    Fta {
        k: usize,
        l: f64,
        u: f64,
        /// Fuzziness; defaults to the bin width.
        eta: Option<f64>,
    },
    Elephant {
        a: f64,
        h: f64,
        d: u32,
        /// Whether `a` and `h` are trained alongside the weights.
        learnable: bool,
    },
}

/// Flat wire form; every field except `kind` is optional so that misplaced
/// parameters can be reported by name.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawActivation {
    kind: ActivationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    learnable: Option<bool>,
}

impl TryFrom<RawActivation> for ActivationSpec {
    type Error = String;

    fn try_from(r: RawActivation) -> std::result::Result<Self, String> {
        let kind = r.kind;
        let present = [
            ("k", r.k.is_some()),
            ("l", r.l.is_some()),
            ("u", r.u.is_some()),
            ("eta", r.eta.is_some()),
            ("a", r.a.is_some()),
            ("h", r.h.is_some()),
            ("d", r.d.is_some()),
            ("learnable", r.learnable.is_some()),
        ];
        let allowed: &[&str] = match kind {
            ActivationKind::Maxout | ActivationKind::Lwta => &["k"],
            ActivationKind::Fta => &["k", "l", "u", "eta"],
            ActivationKind::Elephant => &["a", "h", "d", "learnable"],
            _ => &[],
        };
        if let Some((name, _)) = present.iter().find(|(n, p)| *p && !allowed.contains(n)) {
            return Err(format!("unknown field `{name}` for activation {kind}"));
        }
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| format!("missing field `{name}` for activation {kind}"))
        };
        let need_k = || r.k.ok_or_else(|| format!("missing field `k` for activation {kind}"));
        Ok(match kind {
            ActivationKind::Relu => ActivationSpec::Relu,
            ActivationKind::Tanh => ActivationSpec::Tanh,
            ActivationKind::Sigmoid => ActivationSpec::Sigmoid,
            ActivationKind::Elu => ActivationSpec::Elu,
            ActivationKind::Maxout => ActivationSpec::Maxout { k: need_k()? },
            ActivationKind::Lwta => ActivationSpec::Lwta { k: need_k()? },
            ActivationKind::Fta => ActivationSpec::Fta {
                k: need_k()?,
                l: need("l", r.l)?,
                u: need("u", r.u)?,
                eta: r.eta,
            },
            ActivationKind::Elephant => ActivationSpec::Elephant {
                a: need("a", r.a)?,
                h: need("h", r.h)?,
                d: r.d.ok_or_else(|| format!("missing field `d` for activation {kind}"))?,
                learnable: r.learnable.unwrap_or(true),
            },
        })
    }
}

impl From<ActivationSpec> for RawActivation {
    fn from(s: ActivationSpec) -> Self {
        let mut r = RawActivation {
            kind: s.kind(),
            k: None,
            l: None,
            u: None,
            eta: None,
            a: None,
            h: None,
            d: None,
            learnable: None,
        };
        match s {
            ActivationSpec::Maxout { k } | ActivationSpec::Lwta { k } => r.k = Some(k),
            ActivationSpec::Fta { k, l, u, eta } => {
                r.k = Some(k);
                r.l = Some(l);
                r.u = Some(u);
                r.eta = eta;
            }
            ActivationSpec::Elephant { a, h, d, learnable } => {
                r.a = Some(a);
                r.h = Some(h);
                r.d = Some(d);
                r.learnable = Some(learnable);
            }
            _ => {}
        }
        r
    }
}

impl ActivationSpec {
    pub fn elephant(a: f64, h: f64, d: u32) -> Self {
        ActivationSpec::Elephant {
            a,
            h,
            d,
            learnable: true,
        }
    }

    pub fn fta(k: usize, l: f64, u: f64) -> Self {
        ActivationSpec::Fta { k, l, u, eta: None }
    }

    pub fn kind(&self) -> ActivationKind {
        match self {
            ActivationSpec::Relu => ActivationKind::Relu,
            ActivationSpec::Tanh => ActivationKind::Tanh,
            ActivationSpec::Sigmoid => ActivationKind::Sigmoid,
            ActivationSpec::Elu => ActivationKind::Elu,
            ActivationSpec::Maxout { .. } => ActivationKind::Maxout,
            ActivationSpec::Lwta { .. } => ActivationKind::Lwta,
            ActivationSpec::Fta { .. } => ActivationKind::Fta,
            ActivationSpec::Elephant { .. } => ActivationKind::Elephant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationSpec::Maxout { k } | ActivationSpec::Lwta { k } if k < 2 => Err(
                Error::Parameter(format!("{} group size k must be >= 2, got {k}", self.kind())),
            ),
            ActivationSpec::Fta { k, l, u, eta } => {
                if k < 2 {
                    return Err(Error::Parameter(format!("fta bin count k must be >= 2, got {k}")));
                }
                if !(l < u) {
                    return Err(Error::Parameter(format!("fta needs l < u, got [{l}, {u}]")));
                }
                if let Some(e) = eta {
                    if !(e > 0.0) {
                        return Err(Error::Parameter(format!("fta eta must be > 0, got {e}")));
                    }
                }
                Ok(())
            }
            ActivationSpec::Elephant { a, h, d, .. } => check_elephant(a, h, d),
            _ => Ok(()),
        }
    }

    /// Number of outputs produced from `units` pre-activations.
    pub fn output_width(&self, units: usize) -> usize {
        match *self {
            ActivationSpec::Maxout { k } => units / k,
            ActivationSpec::Fta { k, .. } => units * k,
            _ => units,
        }
    }

    /// Checks that `units` pre-activations can be fed to this activation.
    pub fn check_units(&self, units: usize) -> Result<()> {
        match *self {
            ActivationSpec::Maxout { k } | ActivationSpec::Lwta { k } if units % k != 0 => {
                Err(Error::shape("group activation (units divisible by k)", units.next_multiple_of(k), units))
            }
            _ => Ok(()),
        }
    }

    /// Value and derivative for the activations that map a scalar to a scalar.
    pub fn eval_scalar(&self, x: f64) -> Option<(f64, f64)> {
        match *self {
            ActivationSpec::Relu
            | ActivationSpec::Tanh
            | ActivationSpec::Sigmoid
            | ActivationSpec::Elu => classical_forward(self.kind(), x).ok(),
            ActivationSpec::Elephant { a, h, d, .. } => {
                let (y, dx, _, _) = elephant_terms(x, a, h, d);
                Some((y, dx))
            }
            _ => None,
        }
    }
}

fn check_elephant(a: f64, h: f64, d: u32) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Parameter(format!("elephant width a must be > 0, got {a}")));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Parameter(format!("elephant height h must be > 0, got {h}")));
    }
    if d < 2 {
        return Err(Error::Parameter(format!("elephant exponent d must be >= 2, got {d}")));
    }
    Ok(())
}

/// Value, `∂/∂x`, `∂/∂a`, `∂/∂h` of the elephant function. No validation.
#[inline]
pub(crate) fn elephant_terms(x: f64, a: f64, h: f64, d: u32) -> (f64, f64, f64, f64) {
    let t = (x / a).abs();
    let td1 = t.powi(d as i32 - 1);
    let td = td1 * t;
    if td == f64::INFINITY {
        // Far tail: value and all derivatives have underflowed to zero.
        return (0.0, 0.0, 0.0, 0.0);
    }
    let inv = 1.0 / (1.0 + td);
    let slope = h * (d as f64 / a) * inv * inv;
    let dx = if x == 0.0 { 0.0 } else { -slope * td1 * x.signum() };
    (h * inv, dx, slope * td, inv)
}

/// `h / (1 + |x/a|^d)`.
pub fn elephant_forward(x: f64, a: f64, h: f64, d: u32) -> Result<f64> {
    check_elephant(a, h, d)?;
    Ok(elephant_terms(x, a, h, d).0)
}

/// Gradients of `upstream · elephant(x; a, h, d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElephantGrad {
    pub dx: f64,
    pub da: f64,
    pub dh: f64,
}

pub fn elephant_backward(x: f64, a: f64, h: f64, d: u32, upstream: f64) -> Result<ElephantGrad> {
    check_elephant(a, h, d)?;
    let (_, dx, da, dh) = elephant_terms(x, a, h, d);
    Ok(ElephantGrad {
        dx: upstream * dx,
        da: upstream * da,
        dh: upstream * dh,
    })
}

/// Value and derivative of ReLU, tanh, sigmoid or ELU (α = 1).
///
/// The ReLU derivative at 0 is taken as 0.
pub fn classical_forward(kind: ActivationKind, x: f64) -> Result<(f64, f64)> {
    Ok(match kind {
        ActivationKind::Relu => {
            if x > 0.0 {
                (x, 1.0)
            } else {
                (0.0, 0.0)
            }
        }
        ActivationKind::Tanh => {
            let y = x.tanh();
            (y, 1.0 - y * y)
        }
        ActivationKind::Sigmoid => {
            let y = sigmoid(x);
            (y, y * (1.0 - y))
        }
        ActivationKind::Elu => {
            if x > 0.0 {
                (x, 1.0)
            } else {
                let e = x.exp();
                (e - 1.0, e)
            }
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "{other} is not a scalar classical activation"
            )))
        }
    })
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-unit learnable elephant parameters of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElephantParams {
    pub a: Vec<f64>,
    pub h: Vec<f64>,
    pub d: u32,
    pub learnable: bool,
}

impl ElephantParams {
    pub fn uniform(units: usize, a: f64, h: f64, d: u32, learnable: bool) -> Result<Self> {
        check_elephant(a, h, d)?;
        Ok(ElephantParams {
            a: vec![a; units],
            h: vec![h; units],
            d,
            learnable,
        })
    }

    pub fn units(&self) -> usize {
        self.a.len()
    }

    /// Raises every `a_i`, `h_i` to at least [`ELEPHANT_PARAM_FLOOR`].
    /// Returns how many entries were changed.
    pub fn clamp(&mut self) -> usize {
        let mut n = 0;
        for v in self.a.iter_mut().chain(self.h.iter_mut()) {
            if *v < ELEPHANT_PARAM_FLOOR {
                *v = ELEPHANT_PARAM_FLOOR;
                n += 1;
            }
        }
        n
    }
}

fn fta_geometry(k: usize, l: f64, u: f64, eta: Option<f64>) -> (f64, f64) {
    let delta = (u - l) / k as f64;
    (delta, eta.unwrap_or(delta))
}

#[inline]
fn fta_distance(x: f64, c: f64, delta: f64) -> f64 {
    (c - x).max(0.0) + (x - c - delta).max(0.0)
}

/// Index of the group maximum; the lowest index wins ties.
#[inline]
fn argmax(group: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in group.iter().enumerate().skip(1) {
        if *v > group[best] {
            best = i;
        }
    }
    best
}

/// Maxout, LWTA or FTA applied to a pre-activation vector.
pub fn structured_forward(spec: &ActivationSpec, x: &[f64]) -> Result<DenseVector> {
    spec.validate()?;
    match spec {
        ActivationSpec::Maxout { .. } | ActivationSpec::Lwta { .. } | ActivationSpec::Fta { .. } => {}
        other => {
            return Err(Error::InvalidInput(format!(
                "{} is not a structured activation",
                other.kind()
            )))
        }
    }
    spec.check_units(x.len())?;
    let mut out = vec![0.0; spec.output_width(x.len())];
    forward_row(spec, x, None, &mut out);
    Ok(DenseVector(out))
}

/// Applies `spec` to one row of pre-activations. Shapes are assumed checked.
pub(crate) fn forward_row(
    spec: &ActivationSpec,
    n: &[f64],
    elephant: Option<&ElephantParams>,
    out: &mut [f64],
) {
    match *spec {
        ActivationSpec::Relu => {
            for (o, x) in out.iter_mut().zip(n) {
                *o = x.max(0.0);
            }
        }
        ActivationSpec::Tanh => {
            for (o, x) in out.iter_mut().zip(n) {
                *o = x.tanh();
            }
        }
        ActivationSpec::Sigmoid => {
            for (o, x) in out.iter_mut().zip(n) {
                *o = sigmoid(*x);
            }
        }
        ActivationSpec::Elu => {
            for (o, x) in out.iter_mut().zip(n) {
                *o = if *x > 0.0 { *x } else { x.exp() - 1.0 };
            }
        }
        ActivationSpec::Maxout { k } => {
            for (o, g) in out.iter_mut().zip(n.chunks_exact(k)) {
                *o = g[argmax(g)];
            }
        }
        ActivationSpec::Lwta { k } => {
            for (o, g) in out.chunks_exact_mut(k).zip(n.chunks_exact(k)) {
                o.fill(0.0);
                let w = argmax(g);
                o[w] = g[w];
            }
        }
        ActivationSpec::Fta { k, l, u, eta } => {
            let (delta, eta) = fta_geometry(k, l, u, eta);
            for (o, x) in out.chunks_exact_mut(k).zip(n) {
                for (i, oi) in o.iter_mut().enumerate() {
                    let c = l + i as f64 * delta;
                    *oi = 1.0 - (fta_distance(*x, c, delta) / eta).min(1.0);
                }
            }
        }
        ActivationSpec::Elephant { a, h, d, .. } => match elephant {
            Some(p) => {
                for (i, (o, x)) in out.iter_mut().zip(n).enumerate() {
                    *o = elephant_terms(*x, p.a[i], p.h[i], p.d).0;
                }
            }
            None => {
                for (o, x) in out.iter_mut().zip(n) {
                    *o = elephant_terms(*x, a, h, d).0;
                }
            }
        },
    }
}

/// Reverse pass of [`forward_row`]: writes `∂L/∂n` into `dn` and, for the
/// elephant, accumulates `∂L/∂a`, `∂L/∂h` into `da`, `dh`.
pub(crate) fn backward_row(
    spec: &ActivationSpec,
    n: &[f64],
    elephant: Option<&ElephantParams>,
    dy: &[f64],
    dn: &mut [f64],
    mut elephant_grads: Option<(&mut [f64], &mut [f64])>,
) {
    match *spec {
        ActivationSpec::Relu => {
            for ((g, x), up) in dn.iter_mut().zip(n).zip(dy) {
                *g = if *x > 0.0 { *up } else { 0.0 };
            }
        }
        ActivationSpec::Tanh => {
            for ((g, x), up) in dn.iter_mut().zip(n).zip(dy) {
                let t = x.tanh();
                *g = up * (1.0 - t * t);
            }
        }
        ActivationSpec::Sigmoid => {
            for ((g, x), up) in dn.iter_mut().zip(n).zip(dy) {
                let s = sigmoid(*x);
                *g = up * s * (1.0 - s);
            }
        }
        ActivationSpec::Elu => {
            for ((g, x), up) in dn.iter_mut().zip(n).zip(dy) {
                *g = if *x > 0.0 { *up } else { up * x.exp() };
            }
        }
        ActivationSpec::Maxout { k } => {
            for ((gd, g), up) in dn.chunks_exact_mut(k).zip(n.chunks_exact(k)).zip(dy) {
                gd.fill(0.0);
                gd[argmax(g)] = *up;
            }
        }
        ActivationSpec::Lwta { k } => {
            for ((gd, g), up) in dn.chunks_exact_mut(k).zip(n.chunks_exact(k)).zip(dy.chunks_exact(k)) {
                gd.fill(0.0);
                let w = argmax(g);
                gd[w] = up[w];
            }
        }
        ActivationSpec::Fta { k, l, u, eta } => {
            let (delta, eta) = fta_geometry(k, l, u, eta);
            for ((g, x), up) in dn.iter_mut().zip(n).zip(dy.chunks_exact(k)) {
                let mut s = 0.0;
                for (i, ui) in up.iter().enumerate() {
                    let c = l + i as f64 * delta;
                    if fta_distance(*x, c, delta) < eta {
                        // d(distance)/dx is -1 left of the bin, +1 right of it.
                        if *x < c {
                            s += ui / eta;
                        } else if *x > c + delta {
                            s -= ui / eta;
                        }
                    }
                }
                *g = s;
            }
        }
        ActivationSpec::Elephant { a, h, d, .. } => {
            for i in 0..n.len() {
                let (ai, hi, di) = match elephant {
                    Some(p) => (p.a[i], p.h[i], p.d),
                    None => (a, h, d),
                };
                let (_, gx, ga, gh) = elephant_terms(n[i], ai, hi, di);
                dn[i] = dy[i] * gx;
                if let Some((da, dh)) = elephant_grads.as_mut() {
                    da[i] += dy[i] * ga;
                    dh[i] += dy[i] * gh;
                }
            }
        }
    }
}

/// Distance from `x` to the nearest point where the activation is not
/// differentiable (infinite for smooth activations).
pub fn kink_distance(spec: &ActivationSpec, n: &[f64]) -> f64 {
    match *spec {
        ActivationSpec::Relu | ActivationSpec::Elu => {
            n.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
        }
        ActivationSpec::Maxout { k } | ActivationSpec::Lwta { k } => {
            let mut m = f64::INFINITY;
            for g in n.chunks_exact(k) {
                let mut s = g.to_vec();
                s.sort_by(|a, b| b.total_cmp(a));
                m = m.min(s[0] - s[1]);
            }
            m
        }
        ActivationSpec::Fta { k, l, u, eta } => {
            let (delta, eta) = fta_geometry(k, l, u, eta);
            let mut m = f64::INFINITY;
            for x in n {
                for i in 0..k {
                    let c = l + i as f64 * delta;
                    for edge in [c, c + delta, c - eta, c + delta + eta] {
                        m = m.min((x - edge).abs());
                    }
                }
            }
            m
        }
        _ => f64::INFINITY,
    }
}

/// Fraction of an even `n_grid`-point grid on `[-c, c]` where `|f(x)| <= eps`.
pub fn sparsity_estimate(f: impl Fn(f64) -> f64, eps: f64, c: f64, n_grid: usize) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be > 0, got {eps}")));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidInput(format!("C must be > 0, got {c}")));
    }
    if n_grid < 2 {
        return Err(Error::InvalidInput(format!("n_grid must be >= 2, got {n_grid}")));
    }
    let step = 2.0 * c / (n_grid - 1) as f64;
    let hits = (0..n_grid)
        .filter(|i| f(-c + *i as f64 * step).abs() <= eps)
        .count();
    Ok(hits as f64 / n_grid as f64)
}

/// Default grid size of [`sparsity_estimate`].
pub const DEFAULT_SPARSITY_GRID: usize = 100_001;
