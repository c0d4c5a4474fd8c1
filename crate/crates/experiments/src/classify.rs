//! Class-incremental learning on split datasets: one pass, no task
//! boundaries, no replay.

use std::path::Path;

use elephant_core::loss::softmax;
use elephant_core::{build_mlp, Network, Optimizer, RngState};

use crate::config::ExperimentConfig;
use crate::error::{io_err, ExpError, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
/// Rows per forward pass when scoring a dataset.
const EVAL_CHUNK: usize = 1000;

/// Fixed-width feature vectors with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    n_classes: usize,
    inputs: Vec<f32>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(dim: usize, n_classes: usize, inputs: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(ExpError::Spec(format!(
                "{} input values do not form {} rows of width {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l >= n_classes) {
            return Err(ExpError::Spec(format!("label {l} outside 0..{n_classes}")));
        }
        Ok(LabeledDataset {
            dim,
            n_classes,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major f64 copy of the selected inputs.
    pub fn gather(&self, indices: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.reserve(indices.len() * self.dim);
        for &i in indices {
            out.extend(self.input(i).iter().map(|v| f64::from(*v)));
        }
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        LabeledDataset {
            dim: self.dim,
            n_classes: self.n_classes,
            inputs: self.inputs[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn with_classes(mut self, n_classes: usize) -> Result<Self> {
        if self.labels.iter().any(|l| *l >= n_classes) {
            return Err(ExpError::Spec(format!("labels exceed {n_classes} classes")));
        }
        self.n_classes = n_classes;
        Ok(self)
    }
}

fn be_u32(buf: &[u8], offset: usize, what: &str, file: &str) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            ExpError::Format(format!(
                "{file}: truncated {what} at offset {offset} (file has {} bytes)",
                buf.len()
            ))
        })
}

/// Parses IDX image and label buffers. Pixels are scaled to [0, 1].
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let magic = be_u32(images, 0, "magic number", "images")?;
    if magic != IMAGE_MAGIC {
        return Err(ExpError::Format(format!(
            "images: bad magic 0x{magic:08x} at offset 0, expected 0x{IMAGE_MAGIC:08x}"
        )));
    }
    let n = be_u32(images, 4, "image count", "images")? as usize;
    let rows = be_u32(images, 8, "row count", "images")? as usize;
    let cols = be_u32(images, 12, "column count", "images")? as usize;
    let magic = be_u32(labels, 0, "magic number", "labels")?;
    if magic != LABEL_MAGIC {
        return Err(ExpError::Format(format!(
            "labels: bad magic 0x{magic:08x} at offset 0, expected 0x{LABEL_MAGIC:08x}"
        )));
    }
    let n_labels = be_u32(labels, 4, "label count", "labels")? as usize;
    if n != n_labels {
        return Err(ExpError::Format(format!(
            "count mismatch: {n} images (offset 4) but {n_labels} labels (offset 4)"
        )));
    }
    let dim = rows * cols;
    let pixels = &images[16..];
    if pixels.len() != n * dim {
        return Err(ExpError::Format(format!(
            "images: expected {} pixel bytes from offset 16, found {}",
            n * dim,
            pixels.len()
        )));
    }
    let raw_labels = &labels[8..];
    if raw_labels.len() != n {
        return Err(ExpError::Format(format!(
            "labels: expected {n} label bytes from offset 8, found {}",
            raw_labels.len()
        )));
    }
    let labels: Vec<usize> = raw_labels.iter().map(|l| *l as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let inputs = pixels.iter().map(|p| f32::from(*p) / 255.0).collect();
    LabeledDataset::new(dim, n_classes, inputs, labels)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path).map_err(io_err(images_path))?;
    let labels = std::fs::read(labels_path).map_err(io_err(labels_path))?;
    parse_idx(&images, &labels).map_err(|e| match e {
        ExpError::Format(m) => ExpError::Format(format!(
            "{} / {}: {m}",
            images_path.display(),
            labels_path.display()
        )),
        other => other,
    })
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Train and test splits from a directory holding the four MNIST IDX files.
pub fn load_mnist(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let p = |i: usize| dir.join(MNIST_FILES[i]);
    let train = load_idx(&p(0), &p(1))?;
    let test = load_idx(&p(2), &p(3))?;
    let classes = train.n_classes().max(test.n_classes());
    Ok((train.with_classes(classes)?, test.with_classes(classes)?))
}

/// Mini-batches of sample indices, task after task. The stream itself
/// carries no task information.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub batches: Vec<Vec<usize>>,
}

impl TaskStream {
    pub fn samples(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

/// Groups classes `[t·c, (t+1)·c)` into task `t`, shuffles within each task
/// and cuts the concatenation into batches.
pub fn make_split_stream(
    ds: &LabeledDataset,
    classes_per_task: usize,
    batch: usize,
    rng: &mut RngState,
) -> Result<TaskStream> {
    if classes_per_task == 0 || ds.n_classes() % classes_per_task != 0 {
        return Err(ExpError::Spec(format!(
            "{} classes cannot be split into tasks of {classes_per_task}",
            ds.n_classes()
        )));
    }
    if batch == 0 {
        return Err(ExpError::Spec("batch size must be >= 1".into()));
    }
    let n_tasks = ds.n_classes() / classes_per_task;
    let mut order = Vec::with_capacity(ds.len());
    for t in 0..n_tasks {
        let mut idx: Vec<usize> = (0..ds.len())
            .filter(|i| ds.labels[*i] / classes_per_task == t)
            .collect();
        rng.shuffle(&mut idx);
        order.extend(idx);
    }
    Ok(TaskStream {
        batches: order.chunks(batch).map(<[usize]>::to_vec).collect(),
    })
}

/// Overall accuracy and per-class (correct, total) counts.
pub fn evaluate(net: &Network, ds: &LabeledDataset, indices: &[usize]) -> Result<(f64, Vec<(usize, usize)>)> {
    let mut per_class = vec![(0usize, 0usize); ds.n_classes()];
    let mut buf = Vec::new();
    let k = net.output_dim();
    for chunk in indices.chunks(EVAL_CHUNK) {
        ds.gather(chunk, &mut buf);
        let out = net.predict_batch(&buf, chunk.len())?;
        for (i, row) in chunk.iter().zip(out.chunks_exact(k)) {
            let label = ds.labels[*i];
            per_class[label].1 += 1;
            if argmax(row) == label {
                per_class[label].0 += 1;
            }
        }
    }
    let correct: usize = per_class.iter().map(|c| c.0).sum();
    Ok((correct as f64 / indices.len().max(1) as f64, per_class))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn task_accuracy(per_class: &[(usize, usize)], classes_per_task: usize) -> Vec<f64> {
    per_class
        .chunks(classes_per_task)
        .map(|c| {
            let (ok, n) = c.iter().fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
            if n == 0 {
                0.0
            } else {
                ok as f64 / n as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub batch: usize,
    pub seen: usize,
    pub accuracy: f64,
    pub task_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyReport {
    pub accuracy: f64,
    pub task_accuracy: Vec<f64>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub batches: usize,
    pub final_loss: f64,
    pub aborted: Option<String>,
}

pub struct ClassifyRun {
    pub report: ClassifyReport,
    pub net: Network,
}

/// Mean cross-entropy of a batch and its gradient with respect to the logits.
fn batch_cross_entropy(logits: &[f64], labels: &[usize], k: usize) -> (f64, Vec<f64>) {
    let rows = labels.len() as f64;
    let mut loss = 0.0;
    let mut d = Vec::with_capacity(logits.len());
    for (row, &label) in logits.chunks_exact(k).zip(labels) {
        let p = softmax(row);
        loss -= p[label].max(f64::MIN_POSITIVE).ln();
        d.extend(p.iter().enumerate().map(|(j, pj)| {
            let y = if j == label { 1.0 } else { 0.0 };
            (pj - y) / rows
        }));
    }
    (loss / rows, d)
}

/// Trains on the batches in order, `updates` optimizer steps per batch.
/// Returns the last batch loss, or the reason training stopped.
pub fn train_stream(
    net: &mut Network,
    opt: &mut Optimizer,
    ds: &LabeledDataset,
    stream: &TaskStream,
    updates: usize,
    divergence_loss: f64,
    mut after_batch: impl FnMut(usize, &Network) -> Result<()>,
) -> Result<std::result::Result<f64, String>> {
    let k = net.output_dim();
    let mut x = Vec::new();
    let mut loss = f64::NAN;
    for (b, batch) in stream.batches.iter().enumerate() {
        ds.gather(batch, &mut x);
        let labels: Vec<usize> = batch.iter().map(|i| ds.labels[*i]).collect();
        for _ in 0..updates {
            let (logits, cache) = net.forward_batch(&x, batch.len())?;
            let (l, d) = batch_cross_entropy(&logits, &labels, k);
            loss = l;
            if !(l <= divergence_loss) {
                return Ok(Err(format!("loss {l} exceeded {divergence_loss} at batch {b}")));
            }
            let g = net.backward_batch(&cache, &d)?;
            if let Err(e) = opt.step(net, &g) {
                return Ok(Err(e.to_string()));
            }
        }
        after_batch(b, net)?;
    }
    Ok(Ok(loss))
}

pub fn run_class_incremental(
    cfg: &ExperimentConfig,
    seed: u64,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<ClassifyRun> {
    let cc = &cfg.classify;
    let train_view;
    let train = match cc.train_limit {
        Some(n) => {
            train_view = train.truncated(n).with_classes(train.n_classes())?;
            &train_view
        }
        None => train,
    };
    let root = RngState::new(seed);
    let specs = cfg.network.layer_specs(train.dim(), train.n_classes())?;
    let mut net = build_mlp(&specs, cfg.network.sigma_bias, &mut root.derive(1))?;
    let stream = make_split_stream(train, cc.classes_per_task, cc.batch_size, &mut root.derive(2))?;
    let mut probe: Vec<usize> = (0..test.len()).collect();
    root.derive(3).shuffle(&mut probe);
    probe.truncate(cc.trajectory_samples.min(test.len()));
    probe.sort_unstable();

    let mut opt = Optimizer::new(cfg.optimizer())?;
    let mut trajectory = Vec::new();
    let mut seen = 0;
    let outcome = train_stream(
        &mut net,
        &mut opt,
        train,
        &stream,
        cc.updates_per_batch,
        cc.divergence_loss,
        |b, net| {
            seen += stream.batches[b].len();
            if (b + 1) % cc.trajectory_every == 0 && !probe.is_empty() {
                let (acc, per_class) = evaluate(net, test, &probe)?;
                trajectory.push(TrajectoryPoint {
                    batch: b + 1,
                    seen,
                    accuracy: acc,
                    task_accuracy: task_accuracy(&per_class, cc.classes_per_task),
                });
            }
            Ok(())
        },
    )?;
    let all: Vec<usize> = (0..test.len()).collect();
    let (accuracy, per_class) = evaluate(&net, test, &all)?;
    let (final_loss, aborted) = match outcome {
        Ok(l) => (l, None),
        Err(reason) => (f64::NAN, Some(reason)),
    };
    Ok(ClassifyRun {
        report: ClassifyReport {
            accuracy,
            task_accuracy: task_accuracy(&per_class, cc.classes_per_task),
            trajectory,
            batches: stream.batches.len(),
            final_loss,
            aborted,
        },
        net,
    })
}
