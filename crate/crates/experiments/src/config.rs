//! Experiment configuration.
//!
//! A config is a TOML document (JSON is accepted too) with one table per
//! concern. Every table rejects keys it does not know, and the error message
//! names the key. Only `harness` is required; everything else has defaults.
//!
//! ```toml
//! harness = "regression"
//! seeds = [0, 1, 2]
//! output_dir = "runs"
//!
//! [network]
//! hidden = [1000]
//! sigma_bias = 1.28
//! activation = { kind = "elephant", a = 0.08, h = 1.0, d = 8, learnable = false }
//!
//! [optimizer]
//! kind = "adam"
//! learning_rate = 1e-4
//! ```

use std::path::{Path, PathBuf};

use elephant_core::{ActivationSpec, LayerSpec, OptimizerConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{io_err, ExpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Harness {
    Regression,
    Edit,
    Classify,
    Dqn,
    Diagnostics,
}

impl Harness {
    pub fn name(self) -> &'static str {
        match self {
            Harness::Regression => "regression",
            Harness::Edit => "edit",
            Harness::Classify => "classify",
            Harness::Dqn => "dqn",
            Harness::Diagnostics => "diagnostics",
        }
    }

    /// Metric used to rank sweep cells and whether larger is better.
    pub fn primary_metric(self) -> (&'static str, bool) {
        match self {
            Harness::Regression => ("test_mse", false),
            Harness::Edit => ("spill", false),
            Harness::Classify => ("accuracy", true),
            Harness::Dqn => ("final_return", true),
            Harness::Diagnostics => ("covariance_mean_abs_offdiag", false),
        }
    }

    pub fn default_seeds(self) -> Vec<u64> {
        match self {
            Harness::Dqn => (0..10).collect(),
            _ => (0..5).collect(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub harness: Harness,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub regression: RegressionConfig,
    #[serde(default)]
    pub edit: EditConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default)]
    pub dqn: DqnConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

fn default_hidden() -> Vec<usize> {
    vec![1000]
}

fn default_activation() -> ActivationSpec {
    ActivationSpec::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: ActivationSpec,
    /// Layer norm on every hidden pre-activation.
    #[serde(default)]
    pub layer_norm: bool,
    #[serde(default)]
    pub sigma_bias: f64,
    /// Treat the single hidden width as a baseline and resize it so the
    /// parameter count matches a plain layer of that width.
    #[serde(default)]
    pub match_params: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: default_hidden(),
            activation: default_activation(),
            layer_norm: false,
            sigma_bias: 0.0,
            match_params: false,
        }
    }
}

fn single_hidden_params(input: usize, output: usize, width: usize, act: &ActivationSpec) -> usize {
    let extra = match act {
        ActivationSpec::Elephant { learnable: true, .. } => 2 * width,
        _ => 0,
    };
    input * width + width + extra + act.output_width(width) * output + output
}

/// Hidden width whose one-hidden-layer parameter count is closest to that of
/// a plain (ReLU-like) layer of width `baseline`.
pub fn matched_width(input: usize, output: usize, baseline: usize, act: &ActivationSpec) -> Result<usize> {
    let target = single_hidden_params(input, output, baseline, &ActivationSpec::Relu) as i64;
    let mut best: Option<(i64, usize)> = None;
    for w in 1..=4 * baseline.max(1) {
        if act.check_units(w).is_err() {
            continue;
        }
        let diff = (single_hidden_params(input, output, w, act) as i64 - target).abs();
        if best.is_none_or(|(d, _)| diff < d) {
            best = Some((diff, w));
        }
    }
    best.map(|(_, w)| w)
        .ok_or_else(|| ExpError::Spec(format!("no valid width for {}", act.kind())))
}

impl NetworkConfig {
    pub fn hidden_widths(&self, input: usize, output: usize) -> Result<Vec<usize>> {
        if !self.match_params {
            return Ok(self.hidden.clone());
        }
        match self.hidden.as_slice() {
            [w] => Ok(vec![matched_width(input, output, *w, &self.activation)?]),
            _ => Err(ExpError::Config(
                "network.match_params needs exactly one hidden layer".into(),
            )),
        }
    }

    pub fn layer_specs(&self, input: usize, output: usize) -> Result<Vec<LayerSpec>> {
        let mut specs = Vec::new();
        let mut width = input;
        for w in self.hidden_widths(input, output)? {
            specs.push(LayerSpec::hidden(width, w, self.activation.clone()).with_layer_norm(self.layer_norm));
            width = self.activation.output_width(w);
        }
        specs.push(LayerSpec::linear(width, output));
        Ok(specs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionConfig {
    pub stream_size: usize,
    pub updates_per_sample: usize,
    pub test_points: usize,
    /// Stream positions (1-based) after which an NTK curve is recorded.
    pub ntk_steps: Vec<usize>,
    /// Distance from the anchor beyond which the curve counts as far.
    pub ntk_radius: f64,
    pub divergence_mse: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            stream_size: 200,
            updates_per_sample: 10,
            test_points: 1000,
            ntk_steps: vec![50, 150],
            ntk_radius: 0.5,
            divergence_mse: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    pub x: f64,
    pub y: f64,
    pub tolerance: f64,
    pub max_updates: usize,
    /// Test points farther than this from `x` count towards the spill.
    pub window: f64,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            x: 1.5,
            y: -1.5,
            tolerance: 0.05,
            max_updates: 1000,
            window: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub data_dir: PathBuf,
    pub classes_per_task: usize,
    pub batch_size: usize,
    pub updates_per_batch: usize,
    pub trajectory_every: usize,
    pub trajectory_samples: usize,
    /// Use only the first `n` training samples.
    pub train_limit: Option<usize>,
    pub divergence_loss: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            data_dir: PathBuf::from("data/mnist"),
            classes_per_task: 2,
            batch_size: 125,
            updates_per_batch: 1,
            trajectory_every: 50,
            trajectory_samples: 1000,
            train_limit: None,
            divergence_loss: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    MountainCar,
    Acrobot,
}

impl EnvKind {
    pub fn default_steps(self) -> u64 {
        match self {
            EnvKind::MountainCar => 100_000,
            EnvKind::Acrobot => 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub env: EnvKind,
    /// Environment steps; defaults per environment.
    pub steps: Option<u64>,
    pub buffer: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub target_sync: u64,
    pub warmup: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the budget over which epsilon decays linearly.
    pub epsilon_fraction: f64,
    pub updates_per_step: usize,
    /// Greedy evaluation period in steps; defaults to a tenth of the budget.
    pub eval_every: Option<u64>,
    pub eval_episodes: usize,
    pub covariance_samples: usize,
    /// Steps at which a covariance matrix is saved, besides the end of training.
    pub covariance_steps: Vec<u64>,
    pub q_limit: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            env: EnvKind::Acrobot,
            steps: None,
            buffer: 10_000,
            batch_size: 32,
            gamma: 0.99,
            target_sync: 200,
            warmup: 1000,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_fraction: 0.1,
            updates_per_step: 1,
            eval_every: None,
            eval_episodes: 5,
            covariance_samples: 32,
            covariance_steps: Vec::new(),
            q_limit: 1e6,
        }
    }
}

impl DqnConfig {
    pub fn total_steps(&self) -> u64 {
        self.steps.unwrap_or_else(|| self.env.default_steps())
    }

    pub fn eval_period(&self) -> u64 {
        self.eval_every.unwrap_or_else(|| (self.total_steps() / 10).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Sine,
    Mnist,
    MountainCar,
    Acrobot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub checkpoint: Option<PathBuf>,
    /// Anchor inputs of NTK curves; scalar-input networks only.
    pub ntk_anchors: Vec<f64>,
    pub ntk_lo: f64,
    pub ntk_hi: f64,
    pub ntk_points: usize,
    pub ntk_include_elephant: bool,
    pub covariance_source: Option<SampleSource>,
    pub covariance_samples: usize,
    /// Threshold for the representation sparsity of the probe inputs.
    pub sparsity_eps: f64,
    pub gamma: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            checkpoint: None,
            ntk_anchors: Vec::new(),
            ntk_lo: 0.0,
            ntk_hi: 2.0,
            ntk_points: 1000,
            ntk_include_elephant: true,
            covariance_source: None,
            covariance_samples: 32,
            sparsity_eps: 0.1,
            gamma: 0.99,
        }
    }
}

fn with_context(e: ExpError, path: &Path) -> ExpError {
    match e {
        ExpError::Config(m) => ExpError::Config(format!("{}: {m}", path.display())),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn new(harness: Harness) -> Self {
        ExperimentConfig {
            harness,
            seeds: None,
            output_dir: default_output_dir(),
            network: NetworkConfig::default(),
            optimizer: None,
            regression: RegressionConfig::default(),
            edit: EditConfig::default(),
            classify: ClassifyConfig::default(),
            dqn: DqnConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c = Self::parse_toml(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let c = Self::parse_json(s)?;
        c.validate()?;
        Ok(c)
    }

    fn parse_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| ExpError::Config(e.to_string()))
    }

    fn parse_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| ExpError::Config(e.to_string()))
    }

    /// Reads a `.json` file as JSON and anything else as TOML, without
    /// validating, so callers can apply overrides first.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if json {
            Self::parse_json(&text)
        } else {
            Self::parse_toml(&text)
        };
        parsed.map_err(|e| with_context(e, path))
    }

    /// [`read`](Self::read) followed by validation.
    pub fn load(path: &Path) -> Result<Self> {
        let c = Self::read(path)?;
        c.validate().map_err(|e| with_context(e, path))?;
        Ok(c)
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        if let Some(o) = &self.optimizer {
            return o.clone();
        }
        match self.harness {
            Harness::Regression | Harness::Edit | Harness::Diagnostics => OptimizerConfig::adam(1e-3),
            Harness::Classify => OptimizerConfig::rmsprop(3e-6, 0.999),
            Harness::Dqn => OptimizerConfig::rmsprop(1e-3, 0.999),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| self.harness.default_seeds())
    }

    /// The config with every harness-dependent default written out.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.optimizer = Some(self.optimizer());
        c.seeds = Some(self.seeds());
        c.dqn.steps = Some(self.dqn.total_steps());
        c.dqn.eval_every = Some(self.dqn.eval_period());
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExpError::Config(m));
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return bad("seeds must not be empty".into());
            }
            let mut s = seeds.clone();
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return bad("seeds must be distinct".into());
            }
        }
        self.network.activation.validate().map_err(|e| ExpError::Config(format!("network.activation: {e}")))?;
        if self.network.hidden.contains(&0) {
            return bad("network.hidden widths must be >= 1".into());
        }
        if !(self.network.sigma_bias >= 0.0 && self.network.sigma_bias.is_finite()) {
            return bad("network.sigma_bias must be finite and >= 0".into());
        }
        self.optimizer().validate().map_err(|e| ExpError::Config(format!("optimizer: {e}")))?;
        let r = &self.regression;
        if r.stream_size < 2 {
            return bad("regression.stream_size must be >= 2".into());
        }
        if r.test_points < 2 {
            return bad("regression.test_points must be >= 2".into());
        }
        if let Some(s) = r.ntk_steps.iter().find(|s| **s == 0 || **s > r.stream_size) {
            return bad(format!("regression.ntk_steps entry {s} outside 1..={}", r.stream_size));
        }
        if !(self.edit.tolerance > 0.0) || !(self.edit.window >= 0.0) {
            return bad("edit.tolerance must be > 0 and edit.window >= 0".into());
        }
        let c = &self.classify;
        if c.classes_per_task == 0 || c.batch_size == 0 || c.updates_per_batch == 0 || c.trajectory_every == 0 {
            return bad("classify.classes_per_task, batch_size, updates_per_batch and trajectory_every must be >= 1".into());
        }
        let d = &self.dqn;
        if d.buffer == 0 || d.batch_size == 0 || d.target_sync == 0 || d.eval_period() == 0 {
            return bad("dqn.buffer, batch_size, target_sync and eval_every must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&d.gamma) {
            return bad(format!("dqn.gamma must lie in [0, 1], got {}", d.gamma));
        }
        if !(0.0..=1.0).contains(&d.epsilon_fraction)
            || !(0.0..=1.0).contains(&d.epsilon_start)
            || !(0.0..=1.0).contains(&d.epsilon_end)
        {
            return bad("dqn epsilon settings must lie in [0, 1]".into());
        }
        if d.eval_episodes == 0 {
            return bad("dqn.eval_episodes must be >= 1".into());
        }
        let g = &self.diagnostics;
        if g.ntk_points < 2 || !(g.ntk_hi > g.ntk_lo) {
            return bad("diagnostics.ntk_points must be >= 2 and ntk_hi > ntk_lo".into());
        }
        if self.harness == Harness::Diagnostics && g.checkpoint.is_none() {
            return bad("diagnostics.checkpoint is required for the diagnostics harness".into());
        }
        Ok(())
    }

    /// The parts of the config that affect results, as a JSON value.
    pub fn semantic_value(&self) -> Value {
        let r = self.resolved();
        let mut m = serde_json::Map::new();
        m.insert("harness".into(), to(&r.harness));
        if self.harness != Harness::Diagnostics {
            m.insert("network".into(), to(&r.network));
        }
        m.insert("optimizer".into(), to(&r.optimizer));
        match self.harness {
            Harness::Regression => {
                m.insert("regression".into(), to(&r.regression));
            }
            Harness::Edit => {
                m.insert("regression".into(), to(&r.regression));
                m.insert("edit".into(), to(&r.edit));
            }
            Harness::Classify => {
                m.insert("classify".into(), to(&r.classify));
            }
            Harness::Dqn => {
                m.insert("dqn".into(), to(&r.dqn));
            }
            Harness::Diagnostics => {
                m.insert("diagnostics".into(), to(&r.diagnostics));
                if r.diagnostics.covariance_source == Some(SampleSource::Mnist) {
                    m.insert("data_dir".into(), to(&r.classify.data_dir));
                }
            }
        }
        Value::Object(m)
    }

    /// Short digest of [`semantic_value`](Self::semantic_value). Independent of
    /// key order in the source file, of seeds and of the output directory.
    pub fn hash(&self) -> String {
        let canon = canonical_json(&self.semantic_value());
        let digest = Sha256::digest(canon.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Replaces the value at a dotted key path, e.g. `optimizer.learning_rate`.
    pub fn with_override(&self, key: &str, value: Value) -> Result<Self> {
        let mut root = serde_json::to_value(self.resolved()).map_err(|e| ExpError::Config(e.to_string()))?;
        let mut cur = &mut root;
        for part in key.split('.') {
            cur = cur
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| ExpError::Config(format!("key `{key}` not found in config")))?;
        }
        *cur = value;
        let c: Self = serde_json::from_value(root).map_err(|e| ExpError::Config(format!("{key}: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

fn to<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config values serialize")
}

/// JSON text with object keys sorted at every level.
pub fn canonical_json(v: &Value) -> String {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical_json(&m[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(a) => format!("[{}]", a.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

/// Parses a grid value written the way it would appear in TOML; bare words
/// become strings.
pub fn parse_grid_value(text: &str) -> Value {
    let t = text.trim();
    match toml::from_str::<toml::Table>(&format!("v = {t}")) {
        Ok(mut table) => match table.remove("v") {
            Some(v) => serde_json::to_value(v).unwrap_or(Value::String(t.to_string())),
            None => Value::String(t.to_string()),
        },
        Err(_) => Value::String(t.to_string()),
    }
}
