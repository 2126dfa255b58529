use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tacgraph::pretrain::{evaluate, PreparedData, TrainConfig, Trainer};
use tacgraph::synth::{generate_dataset, GenerateSpec};
use tacgraph::{Exec, Hand};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn spec(episodes: usize) -> GenerateSpec {
    GenerateSpec {
        num_episodes: episodes,
        frames_per_episode: 16,
        ..GenerateSpec::default()
    }
}

fn bench_generate(c: &mut Criterion) {
    let hand = Hand::default_hand();
    let spec = spec(16);
    let mut group = c.benchmark_group("generate_dataset");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_dataset(&spec, &hand, 0, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_training(c: &mut Criterion) {
    let hand = Hand::default_hand();
    let config = TrainConfig {
        epochs: 1,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let ds = generate_dataset(&spec(8), &hand, 1, Exec::Sequential).unwrap();
    let data = PreparedData::new(&ds, &hand, &config, Exec::Sequential).unwrap();

    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut t = Trainer::new(config.clone()).unwrap();
                t.run_epoch(&data, exec, |_| {}).unwrap()
            })
        });
    }
    group.finish();

    let model = Trainer::new(config.clone()).unwrap().model;
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(&model, &data, config.mask_ratio, config.eval_seed, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_generate, bench_training);
criterion_main!(benches);
