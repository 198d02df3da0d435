use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use pada_core::metrics::auc;
use pada_core::models::{loss_and_grads, Batch, ModelSet, TransformBinding};
use pada_core::objectives::pada_terms;
use pada_core::trainers::{train_pada, DomainPair, TrainConfig};
use pada_core::{Class, DenseMatrix, LinearSoftmaxModel, LinearTransform, RngSeed, SeededRng};

fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> DenseMatrix {
    let values = (0..rows * cols).map(|_| rng.normal()).collect();
    DenseMatrix::new(rows, cols, values).unwrap()
}

const COMMON: usize = 4;
const SOURCE_SPECIFIC: usize = 6;
const TARGET_SPECIFIC: usize = 6;

fn bench_loss_and_grads(c: &mut Criterion) {
    let mut rng = RngSeed(1).rng();
    let positive = random_matrix(&mut rng, 128, COMMON + SOURCE_SPECIFIC);
    let unlabeled = random_matrix(&mut rng, 128, COMMON + TARGET_SPECIFIC);
    let classifier = LinearSoftmaxModel::init(COMMON + SOURCE_SPECIFIC, &mut rng);
    let discriminator = LinearSoftmaxModel::init(COMMON + SOURCE_SPECIFIC, &mut rng);
    let transform = LinearTransform::init(COMMON + TARGET_SPECIFIC, SOURCE_SPECIFIC, &mut rng);
    let models = ModelSet {
        classifier: Some(&classifier),
        discriminator: Some(&discriminator),
        domain_discriminator: None,
        transform: Some(TransformBinding {
            transform: &transform,
            common_dim: COMMON,
        }),
    };
    let batch = Batch {
        positive: &positive,
        unlabeled: &unlabeled,
    };
    let objective = pada_terms(&models, &batch, 0.5).unwrap();
    c.bench_function("pada loss_and_grads batch 128", |b| {
        b.iter(|| loss_and_grads(black_box(&models), &objective.terms, black_box(&batch)).unwrap())
    });
}

fn bench_training(c: &mut Criterion) {
    let mut rng = RngSeed(2).rng();
    let source = random_matrix(&mut rng, 1000, COMMON + SOURCE_SPECIFIC);
    let target = random_matrix(&mut rng, 2000, COMMON + TARGET_SPECIFIC);
    let data = DomainPair {
        source: &source,
        target: &target,
        common_dim: COMMON,
    };
    let config = TrainConfig {
        steps: 100,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(20);
    group.bench_function("pada 100 steps", |b| b.iter(|| train_pada(black_box(&data), &config).unwrap()));
    group.finish();
}

fn bench_auc(c: &mut Criterion) {
    let mut rng = RngSeed(3).rng();
    let scores: Vec<f64> = (0..10_000).map(|_| rng.uniform(0.0, 1.0)).collect();
    let labels: Vec<Class> = (0..10_000)
        .map(|i| if i % 3 == 0 { Class::Positive } else { Class::Negative })
        .collect();
    c.bench_function("auc 10k", |b| b.iter(|| auc(black_box(&scores), black_box(&labels)).unwrap()));
}

criterion_group!(benches, bench_loss_and_grads, bench_training, bench_auc);
criterion_main!(benches);
