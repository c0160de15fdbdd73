//! Throughput benchmarks for the hot paths. Run with the default features
//! and again with `--no-default-features` to compare the rayon fan-out
//! against the sequential fallback on identical work.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psgt::dataset::{Record, SubjectSeries, TargetKind, VOICE_FEATURES};
use psgt::forest::{Forest, ForestConfig};
use psgt::matrix::Matrix;
use psgt::shapley::{build_family, exact_shapley, simplified_shapley, FamilyPolicy, Game};
use psgt::transfer::{run_psgt, TransferConfig};

fn synth_matrix(rows: usize, cols: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Matrix::with_capacity(cols, rows);
    let mut y = Vec::with_capacity(rows);
    let mut row = vec![0.0; cols];
    for _ in 0..rows {
        for v in row.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        y.push(3.0 * row[0] - 2.0 * row[1] + rng.gen_range(-0.1..0.1));
        x.push_row(&row);
    }
    (x, y)
}

fn synth_subject(subject_id: u32, n: usize, seed: u64) -> SubjectSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut voice = [0.0; VOICE_FEATURES];
        for v in voice.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let motor = 12.0 + 6.0 * voice[0] + 3.0 * voice[1];
        records.push(Record {
            subject_id,
            age: 61,
            sex: (subject_id % 2) as u8,
            test_time: i as f64,
            motor_updrs: motor,
            total_updrs: motor + 8.0,
            voice,
        });
    }
    SubjectSeries { subject_id, records }
}

fn bench_forest(c: &mut Criterion) {
    let (x, y) = synth_matrix(600, 18, 42);
    let cfg = ForestConfig { n_trees: 30, max_depth: 50, min_samples_leaf: 2, mtry: 6, seed: 7 };

    c.bench_function("forest_fit_600x18_30trees", |b| {
        b.iter(|| Forest::fit(&x, &y, &cfg).unwrap())
    });

    let forest = Forest::fit(&x, &y, &cfg).unwrap();
    let (queries, _) = synth_matrix(2000, 18, 43);
    c.bench_function("forest_predict_2000_rows", |b| {
        b.iter(|| forest.predict_rows(&queries).unwrap())
    });
}

fn bench_shapley(c: &mut Criterion) {
    // Cheap payoff isolates the enumeration and bookkeeping cost.
    c.bench_function("exact_shapley_12_players", |b| {
        b.iter_batched(
            || Game::new(12, |coalition: &[usize]| coalition.iter().map(|&p| p as f64 + 1.0).sum()),
            |game| exact_shapley(&game).unwrap(),
            BatchSize::SmallInput,
        )
    });

    let family = build_family(120, FamilyPolicy::Sampled { count: 256, seed: 9 }).unwrap();
    c.bench_function("sampled_shapley_120_players", |b| {
        b.iter_batched(
            || Game::new(120, |coalition: &[usize]| coalition.len() as f64),
            |game| simplified_shapley(&game, &family).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_pipeline(c: &mut Criterion) {
    let target = synth_subject(1, 40, 100);
    let sources: Vec<SubjectSeries> =
        (2..=7).map(|id| synth_subject(id, 20, 100 + u64::from(id))).collect();
    let cfg = TransferConfig {
        k: 3,
        cap_divisor: 5,
        coalition_samples: 32,
        forest: ForestConfig { n_trees: 10, max_depth: 12, min_samples_leaf: 2, mtry: 6, seed: 0 },
        seed: 5,
        coalition_only_subject_payoff: false,
    };

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("psgt_single_target", |b| {
        b.iter(|| run_psgt(&target, &sources, TargetKind::Motor, &cfg, 11).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_forest, bench_shapley, bench_pipeline);
criterion_main!(benches);
