//! Parallel vs sequential execution of the two data-parallel workloads:
//! confidence-map rows and independent training seeds.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mafgan::data::SyntheticSpec;
use mafgan::metrics::{confidence_map, Bounds};
use mafgan::nn::{Discriminator, DiscriminatorConfig, GeneratorConfig, InitScheme};
use mafgan::objectives::{ObjectiveKind, ObjectiveSpec};
use mafgan::par::{self, Execution};
use mafgan::rng::{self, Stream};
use mafgan::trainer::{train, TrainConfig};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn bench_confmap(c: &mut Criterion) {
    let d = Discriminator::new(
        DiscriminatorConfig::default(),
        InitScheme::Uniform,
        &mut rng::stream(0, Stream::DiscriminatorInit),
    )
    .unwrap();
    let spec = ObjectiveSpec::new(ObjectiveKind::MafE, d.config.embed_dim).unwrap();
    let mut group = c.benchmark_group("confmap_100x100");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| confidence_map(&d, &spec, Bounds::square(3.0), 100, black_box(exec)).unwrap())
        });
    }
    group.finish();
}

fn bench_seeds(c: &mut Criterion) {
    let mut cfg = TrainConfig { epochs: 2, batch_size: 64, ..TrainConfig::default() };
    cfg.generator = GeneratorConfig { hidden: 32, ..GeneratorConfig::default() };
    cfg.discriminator.hidden = 32;
    cfg.schedule.confmap_epochs = vec![];
    cfg.schedule.eval_samples = 500;
    let data = SyntheticSpec { count: 1024, ..SyntheticSpec::default() };
    let seeds: Vec<u64> = (0..4).collect();
    let mut group = c.benchmark_group("train_4_seeds");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::map(exec, &seeds, |&seed| {
                    train(&TrainConfig { seed, ..cfg.clone() }, &data).unwrap().summary
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_confmap, bench_seeds);
criterion_main!(benches);
