use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use profs_core::evalmetrics::recall_at_k;
use profs_core::feasibility::all_tuples;
use profs_core::losses::{BatchObjective, LossKind, MarginParams, PairLoss};
use profs_core::numcore::{distance_matrix, gradient, Matrix, MlpSpec};
use profs_core::sampling::{hncm_select, RepCache};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn hncm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let anchors: Vec<usize> = (0..64).collect();
    let mut group = c.benchmark_group("hncm_select");
    for l in [256usize, 1024, 4096] {
        let mut cache = RepCache::new(l, 64);
        for slot in 0..l {
            let v: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            cache.set(slot, &v).unwrap();
        }
        group.throughput(Throughput::Elements(l as u64));
        group.bench_with_input(BenchmarkId::from_parameter(l), &cache, |b, cache| {
            b.iter(|| hncm_select(&anchors, cache, 64).unwrap())
        });
    }
    group.finish();
}

fn distances(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points = random_matrix(512, 128, &mut rng);
    c.bench_function("distance_matrix 512x128", |b| b.iter(|| distance_matrix(&points)));
}

fn batch_gradient(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = MlpSpec::new(64, vec![256], 128);
    let theta = spec.init(&[], &mut rng).unwrap();
    let inputs = random_matrix(128, 64, &mut rng);
    let labels: Vec<usize> = (0..128).map(|i| i / 2 + 1).collect();
    let tuples = all_tuples(&labels);
    let loss = LossKind::Pair(PairLoss::Margin(MarginParams {
        epsilon: 1.2,
        delta: 0.2,
        epsilon_trainable: false,
    }));
    let obj = BatchObjective {
        loss: &loss,
        tuples: &tuples,
        labels: &labels,
        rep_positions: &[],
        anchor: Some(&theta),
        lambda: 1e-3,
    };
    c.bench_function("margin gradient B=128", |b| {
        b.iter(|| gradient(&obj, &spec, &theta, &inputs).unwrap())
    });
}

fn recall(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let emb = random_matrix(2000, 64, &mut rng);
    let labels: Vec<usize> = (0..2000).map(|i| i % 100 + 1).collect();
    c.bench_function("recall_at_k N=2000", |b| {
        b.iter(|| recall_at_k(&emb, &labels, &[1, 2, 4, 8]).unwrap())
    });
}

criterion_group!(benches, hncm, distances, batch_gradient, recall);
criterion_main!(benches);
