use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use projhead_bench::{destroyed_spec, diagonal_model, graded_downstream, graded_spec, linear_model, subclass_spec};
use projhead_core::evaluation::exhaustive_margin;
use projhead_core::losses::{loss_and_gradient, GradientMode, Objective};
use projhead_core::theory::{beta_gamma, depth_curve, min_norm_refactor_check, DepthScaling};
use projhead_core::training::{train, TrainConfig};
use projhead_core::{DownstreamSpec, PretrainSpec};

fn gradients(c: &mut Criterion) {
    let mut g = c.benchmark_group("population_gradient");
    for d in [5, 20, 50] {
        let spec = PretrainSpec::new(vec![1.0; d], (0..d).map(|i| i as f64 / d as f64).collect(), 0.1, d / 2).unwrap();
        let model = linear_model(d, d / 2, 1);
        let obj = Objective::Cl(spec);
        g.bench_with_input(BenchmarkId::new("linear_cl", d), &d, |b, _| {
            b.iter(|| loss_and_gradient(black_box(&model), &obj, GradientMode::Population).unwrap())
        });
    }
    let net = diagonal_model();
    for (name, obj) in [
        ("diagonal_cl", Objective::Cl(destroyed_spec())),
        ("diagonal_scl", Objective::Scl(subclass_spec())),
        ("diagonal_mse", Objective::Mse(subclass_spec())),
    ] {
        g.bench_function(name, |b| b.iter(|| loss_and_gradient(black_box(&net), &obj, GradientMode::Population).unwrap()));
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    let cfg = TrainConfig { step_size: 0.02, max_steps: 2000, grad_tol: 0.0, record_every: 2000, ..Default::default() };
    let obj = Objective::Cl(graded_spec());
    let model = linear_model(5, 4, 0);
    g.bench_function("linear_2000_steps", |b| b.iter(|| train(&model, &obj, &cfg).unwrap()));
    let obj = Objective::Cl(destroyed_spec());
    let net = diagonal_model();
    g.bench_function("diagonal_2000_steps", |b| b.iter(|| train(&net, &obj, &cfg).unwrap()));
    g.finish();
}

fn theory(c: &mut Criterion) {
    let spec = graded_spec();
    c.bench_function("beta_gamma", |b| b.iter(|| beta_gamma(black_box(&spec)).unwrap()));
    let mut weights = vec![0.4; 10];
    weights[9] = 0.6;
    let mut phi_hat = vec![1.0; 9];
    phi_hat.push(0.1);
    let ds = DownstreamSpec::new(phi_hat, 9).unwrap();
    c.bench_function("depth_curve_12", |b| {
        b.iter(|| depth_curve(black_box(&weights), &ds, 12, DepthScaling::PerLayer).unwrap())
    });
    let w = nalgebra::DMatrix::from_fn(4, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
    c.bench_function("min_norm_100_trials", |b| b.iter(|| min_norm_refactor_check(&w, 100, 3).unwrap()));
}

fn margins(c: &mut Criterion) {
    let model = linear_model(5, 5, 2);
    let ds = graded_downstream();
    c.bench_function("exhaustive_margin_d5", |b| b.iter(|| exhaustive_margin(black_box(&model), 1, &ds).unwrap()));
}

criterion_group!(benches, gradients, training, theory, margins);
criterion_main!(benches);
