use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use groupcast::evaluation::{evaluate, ZMode};
use groupcast::exec::Execution;
use groupcast::model::{Model, ModelConfig};
use groupcast::synthdata::{eval_tasks, generate_glancing_corpus, ContextMode, GlancingTrainStream};
use groupcast::training::{TrainConfig, Trainer};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn train_step(c: &mut Criterion) {
    let stream = GlancingTrainStream::new(generate_glancing_corpus(), ContextMode::Mixed, 1);
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            let mut cfg = TrainConfig::new(ModelConfig::glancing("SP-GRU-latent".parse().unwrap()), 1, u64::MAX);
            cfg.meta_batch = 8;
            cfg.execution = exec;
            let mut trainer = Trainer::new(cfg).unwrap();
            b.iter(|| black_box(trainer.train_step(&stream).unwrap()));
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let mut tasks = eval_tasks(&generate_glancing_corpus(), ContextMode::Mixed, 1);
    tasks.truncate(4);
    let model = Model::new(ModelConfig::glancing("SP-GRU-latent".parse().unwrap()), 1).unwrap();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(evaluate(&model, &tasks, ZMode::Mean, exec).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, train_step, evaluation);
criterion_main!(benches);
