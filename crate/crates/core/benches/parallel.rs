//! Parallel against sequential execution of the batched kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use elephant_core::diagnostics::{gradient_covariance, ntk_row};
use elephant_core::exec::{self, Mode};
use elephant_core::loss::LossSample;
use elephant_core::{build_mlp, ActivationSpec, LayerSpec, Network, RngState};

const MODES: [(&str, Mode); 2] = [("parallel", Mode::Parallel), ("sequential", Mode::Sequential)];

fn elephant_mlp(input: usize, width: usize, output: usize) -> Network {
    let act = ActivationSpec::Elephant {
        a: 0.32,
        h: 1.0,
        d: 4,
        learnable: true,
    };
    let specs = [
        LayerSpec::hidden(input, width, act).with_layer_norm(true),
        LayerSpec::linear(width, output),
    ];
    build_mlp(&specs, 0.16, &mut RngState::new(0)).unwrap()
}

fn inputs(rows: usize, dim: usize) -> Vec<f64> {
    let mut rng = RngState::new(1);
    (0..rows * dim).map(|_| rng.uniform(0.0, 1.0)).collect()
}

fn batch_pass(c: &mut Criterion) {
    let net = elephant_mlp(784, 1000, 10);
    let rows = 125;
    let x = inputs(rows, 784);
    let d = vec![1.0 / rows as f64; rows * 10];
    let mut g = c.benchmark_group("forward_backward_batch_125x784x1000");
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            exec::set_mode(mode);
            b.iter(|| {
                let (_, cache) = net.forward_batch(&x, rows).unwrap();
                net.backward_batch(&cache, &d).unwrap()
            });
        });
    }
    g.finish();
    exec::set_mode(Mode::Parallel);
}

fn predict(c: &mut Criterion) {
    let net = elephant_mlp(784, 1000, 10);
    let rows = 1000;
    let x = inputs(rows, 784);
    let mut g = c.benchmark_group("predict_batch_1000x784x1000");
    g.sample_size(20);
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            exec::set_mode(mode);
            b.iter(|| net.predict_batch(&x, rows).unwrap());
        });
    }
    g.finish();
    exec::set_mode(Mode::Parallel);
}

fn kernels(c: &mut Criterion) {
    let net = elephant_mlp(1, 1000, 1);
    let xs: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 100.0]).collect();
    let samples: Vec<LossSample> = xs
        .iter()
        .take(32)
        .map(|x| LossSample::SquaredError {
            x: x.clone(),
            target: vec![(x[0] * std::f64::consts::PI).sin()],
        })
        .collect();
    let ids: Vec<String> = (0..samples.len()).map(|i| i.to_string()).collect();
    let mut g = c.benchmark_group("kernels_width_1000");
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::new("ntk_row_200", name), &mode, |b, mode| {
            exec::set_mode(*mode);
            b.iter(|| ntk_row(&net, &[1.0], &xs, true).unwrap());
        });
        g.bench_with_input(BenchmarkId::new("gradient_covariance_32", name), &mode, |b, mode| {
            exec::set_mode(*mode);
            b.iter(|| gradient_covariance(&net, &samples, &ids).unwrap());
        });
    }
    g.finish();
    exec::set_mode(Mode::Parallel);
}

criterion_group!(benches, batch_pass, predict, kernels);
criterion_main!(benches);
