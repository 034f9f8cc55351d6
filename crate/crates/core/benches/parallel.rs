//! Sequential vs rayon execution on the two hot paths: dataset generation
//! (one flow solve per sample) and a desk-scale training step.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ved_surrogate::config::DataConfig;
use ved_surrogate::exec::Execution;
use ved_surrogate::field::{build_kle, generate_dataset};
use ved_surrogate::losses::{total_loss_and_backward, LossWeights};
use ved_surrogate::nn::{ArchConfig, Noise, Ved};
use ved_surrogate::rng;
use ved_surrogate::train::PreparedData;

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn datagen(c: &mut Criterion) {
    let cfg = DataConfig::default();
    let grid = cfg.build_grid(0).unwrap();
    let kernel = cfg.kernel();
    let kle = build_kle(&grid, &kernel, cfg.kle_order).unwrap();
    let mut group = c.benchmark_group("datagen_200");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                black_box(generate_dataset(&grid, &kle, &kernel, 200, cfg.n_wells, cfg.split, 1, exec).unwrap())
            })
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let cfg = DataConfig { n_samples: 200, ..DataConfig::default() };
    let grid = cfg.build_grid(0).unwrap();
    let kernel = cfg.kernel();
    let kle = build_kle(&grid, &kernel, cfg.kle_order).unwrap();
    let ds = generate_dataset(&grid, &kle, &kernel, 200, cfg.n_wells, cfg.split, 1, Execution::Sequential).unwrap();
    let data = PreparedData::from_dataset(&ds, None, None).unwrap();
    let rows: Vec<usize> = (0..100).collect();
    let (x, y) = data.batch::<f32>(&rows);
    let arch = ArchConfig { input_h: data.height, input_w: data.width, output_dim: data.m, ..ArchConfig::full_scale(32) };
    let w = LossWeights::new(0.01, 0.01).unwrap();
    let mut group = c.benchmark_group("train_step_b100");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let mut model = Ved::<f32>::new(arch.clone(), 0).unwrap();
        model.set_execution(exec);
        let mut noise = rng::substream(0, "noise", 0);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                model.zero_grad();
                black_box(total_loss_and_backward(&mut model, &x, &y, w, Noise::Sample(&mut noise)).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, datagen, train_step);
criterion_main!(benches);
