use elephant_core::{build_mlp, ActivationSpec, Optimizer, OptimizerConfig, RngState};
use elephant_experiments::classify::{
    argmax, evaluate, load_idx, load_mnist, make_split_stream, parse_idx, run_class_incremental, train_stream,
    LabeledDataset, TaskStream, MNIST_FILES,
};
use elephant_experiments::{ExpError, ExperimentConfig, Harness};

fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0803, n, rows, cols] {
        b.extend(u32::to_be_bytes(v));
    }
    b.extend(pixels);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0801, labels.len() as u32] {
        b.extend(u32::to_be_bytes(v));
    }
    b.extend(labels);
    b
}

fn format_message(e: ExpError) -> String {
    match e {
        ExpError::Format(m) => m,
        other => panic!("expected a format error, got {other:?}"),
    }
}

/// Ten noisy prototypes in 20 dimensions, one per class.
fn blobs(per_class: usize, seed: u64) -> LabeledDataset {
    let mut rng = RngState::new(seed);
    let dim = 20;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for c in 0..10 {
        for _ in 0..per_class {
            for j in 0..dim {
                let centre = if j == c * 2 || j == c * 2 + 1 { 0.9 } else { 0.1 };
                inputs.push((centre + rng.uniform(-0.1, 0.1)) as f32);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(dim, 10, inputs, labels).unwrap()
}

#[test]
fn parses_idx_bytes() {
    let ds = parse_idx(&idx_images(2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4]), &idx_labels(&[7, 3])).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.dim(), 4);
    assert_eq!(ds.n_classes(), 8);
    assert_eq!(ds.labels(), &[7, 3]);
    assert_eq!(ds.input(0), &[0.0, 1.0, 0.2, 0.4]);
}

#[test]
fn malformed_idx_errors_name_the_offset() {
    let labels = idx_labels(&[1, 2]);
    let images = idx_images(2, 2, 2, &[0; 8]);

    let mut bad_magic = images.clone();
    bad_magic[3] = 0x02;
    let m = format_message(parse_idx(&bad_magic, &labels).unwrap_err());
    assert!(m.contains("magic") && m.contains("offset 0"), "{m}");

    let m = format_message(parse_idx(&images[..10], &labels).unwrap_err());
    assert!(m.contains("offset 8"), "{m}");

    let m = format_message(parse_idx(&images[..images.len() - 1], &labels).unwrap_err());
    assert!(m.contains("offset 16"), "{m}");

    let m = format_message(parse_idx(&images, &idx_labels(&[1, 2, 3])).unwrap_err());
    assert!(m.contains("mismatch"), "{m}");

    let m = format_message(parse_idx(&[], &labels).unwrap_err());
    assert!(m.contains("offset 0"), "{m}");
}

#[test]
fn loads_from_files_and_reports_paths() {
    let dir = tempfile::tempdir().unwrap();
    let images = idx_images(3, 1, 2, &[0, 1, 2, 3, 4, 5]);
    let labels = idx_labels(&[0, 1, 1]);
    for (i, bytes) in [&images, &labels, &images, &labels].iter().enumerate() {
        std::fs::write(dir.path().join(MNIST_FILES[i]), bytes).unwrap();
    }
    let (train, test) = load_mnist(dir.path()).unwrap();
    assert_eq!(train.len(), 3);
    assert_eq!(test.n_classes(), 2);

    std::fs::write(dir.path().join(MNIST_FILES[1]), idx_labels(&[0])).unwrap();
    let m = format_message(load_idx(&dir.path().join(MNIST_FILES[0]), &dir.path().join(MNIST_FILES[1])).unwrap_err());
    assert!(m.contains(MNIST_FILES[0]), "{m}");

    let missing = load_mnist(&dir.path().join("nowhere")).unwrap_err();
    assert!(matches!(missing, ExpError::Io { .. }));
}

#[test]
fn split_stream_visits_every_sample_once_task_by_task() {
    let ds = blobs(37, 0);
    let stream = make_split_stream(&ds, 2, 25, &mut RngState::new(1)).unwrap();
    let mut seen: Vec<usize> = stream.batches.concat();
    assert_eq!(stream.samples(), ds.len());
    assert!(stream.batches[..stream.batches.len() - 1].iter().all(|b| b.len() == 25));
    let tasks: Vec<usize> = seen.iter().map(|i| ds.labels()[*i] / 2).collect();
    assert!(tasks.windows(2).all(|w| w[0] <= w[1]));
    let mut distinct = tasks.clone();
    distinct.dedup();
    assert_eq!(distinct, vec![0, 1, 2, 3, 4]);
    seen.sort_unstable();
    assert_eq!(seen, (0..ds.len()).collect::<Vec<_>>());
}

#[test]
fn split_stream_rejects_uneven_tasks() {
    let ds = blobs(2, 0);
    assert!(matches!(make_split_stream(&ds, 3, 10, &mut RngState::new(0)), Err(ExpError::Spec(_))));
    assert!(make_split_stream(&ds, 2, 0, &mut RngState::new(0)).is_err());
}

#[test]
fn argmax_prefers_the_lowest_index() {
    assert_eq!(argmax(&[0.0, 2.0, 2.0, 1.0]), 1);
    assert_eq!(argmax(&[5.0]), 0);
}

#[test]
fn training_only_sees_batch_contents() {
    // The same batches stored at different dataset positions must train identically.
    let ds = blobs(10, 4);
    let stream = make_split_stream(&ds, 2, 16, &mut RngState::new(2)).unwrap();
    let order: Vec<usize> = stream.batches.concat();
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in &order {
        inputs.extend_from_slice(ds.input(*i));
        labels.push(ds.labels()[*i]);
    }
    let permuted = LabeledDataset::new(ds.dim(), 10, inputs, labels).unwrap();
    let positions: Vec<usize> = (0..order.len()).collect();
    let relabelled = TaskStream {
        batches: positions.chunks(16).map(<[usize]>::to_vec).collect(),
    };

    let cfg = {
        let mut c = ExperimentConfig::new(Harness::Classify);
        c.network.hidden = vec![16];
        c
    };
    let specs = cfg.network.layer_specs(ds.dim(), 10).unwrap();
    let train = |data: &LabeledDataset, s: &TaskStream| {
        let mut net = build_mlp(&specs, 0.0, &mut RngState::new(9)).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::rmsprop(1e-3, 0.999)).unwrap();
        let loss = train_stream(&mut net, &mut opt, data, s, 2, 1e6, |_, _| Ok(())).unwrap().unwrap();
        (net, loss)
    };
    let (a, la) = train(&ds, &stream);
    let (b, lb) = train(&permuted, &relabelled);
    assert_eq!(la, lb);
    assert_eq!(a, b);
}

#[test]
fn learns_separable_classes_from_an_iid_stream() {
    let ds = blobs(60, 6);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    RngState::new(3).shuffle(&mut order);
    let stream = TaskStream {
        batches: order.chunks(20).map(<[usize]>::to_vec).collect(),
    };
    let specs = {
        let mut c = ExperimentConfig::new(Harness::Classify);
        c.network.hidden = vec![32];
        c.network.layer_specs(ds.dim(), 10).unwrap()
    };
    let mut net = build_mlp(&specs, 0.0, &mut RngState::new(0)).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::rmsprop(3e-3, 0.99)).unwrap();
    for _ in 0..5 {
        train_stream(&mut net, &mut opt, &ds, &stream, 1, 1e6, |_, _| Ok(())).unwrap().unwrap();
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let (acc, per_class) = evaluate(&net, &ds, &all).unwrap();
    assert!(acc > 0.95, "accuracy {acc}");
    assert_eq!(per_class.iter().map(|c| c.1).sum::<usize>(), ds.len());
}

#[test]
fn harness_reports_trajectory_and_tasks() {
    let train = blobs(20, 1);
    let test = blobs(5, 2);
    let mut cfg = ExperimentConfig::new(Harness::Classify);
    cfg.network.hidden = vec![16];
    cfg.network.activation = ActivationSpec::Elephant {
        a: 0.32,
        h: 1.0,
        d: 4,
        learnable: true,
    };
    cfg.network.layer_norm = true;
    cfg.classify.batch_size = 10;
    cfg.classify.trajectory_every = 4;
    cfg.classify.trajectory_samples = 30;
    let run = run_class_incremental(&cfg, 0, &train, &test).unwrap();
    let r = &run.report;
    assert!(r.aborted.is_none());
    assert_eq!(r.batches, 20);
    assert_eq!(r.task_accuracy.len(), 5);
    assert_eq!(r.trajectory.len(), 5);
    assert_eq!(r.trajectory.last().unwrap().seen, 200);
    assert!((0.0..=1.0).contains(&r.accuracy));
    let again = run_class_incremental(&cfg, 0, &train, &test).unwrap();
    assert_eq!(again.report, run.report);
}
