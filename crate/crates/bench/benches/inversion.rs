use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use flowforge::convkit::BatchMode;
use flowforge::flows::{Bijection, Direction};
use flowforge_bench::{
    dense_inverse, emerging_fixture, periodic_fixture, periodic_inverse_each, random_batch, substitution_inverse,
};

const SIZE: usize = 16;
const CHANNELS: usize = 4;
const BATCH: usize = 100;

fn emerging(c: &mut Criterion) {
    let (store, layer) = emerging_fixture(CHANNELS, 3, 0).unwrap();
    let x = random_batch(BATCH, CHANNELS, SIZE, 1);
    let y = layer.apply(&store, &x, Direction::Forward).unwrap().0;
    let mut g = c.benchmark_group("emerging_inverse");
    g.sample_size(10);
    g.bench_function("dense", |b| b.iter(|| dense_inverse(&store, &layer, &y).unwrap()));
    g.bench_function("sequential", |b| {
        b.iter(|| substitution_inverse(&store, &layer, &y, BatchMode::Sequential).unwrap())
    });
    g.bench_function("parallel", |b| b.iter(|| substitution_inverse(&store, &layer, &y, BatchMode::Parallel).unwrap()));
    g.finish();
}

fn periodic(c: &mut Criterion) {
    let (store, layer) = periodic_fixture(CHANNELS, 3, 2).unwrap();
    let x = random_batch(BATCH, CHANNELS, SIZE, 3);
    let y = layer.apply(&store, &x, Direction::Forward).unwrap().0;
    let mut g = c.benchmark_group("periodic_inverse");
    g.bench_function("cold", |b| {
        b.iter_batched(
            || y.slice_batch(0, 1),
            |y1| periodic_inverse_each(&store, &layer, &y1, true).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.bench_function("warm", |b| {
        b.iter_batched(
            || y.slice_batch(0, 1),
            |y1| periodic_inverse_each(&store, &layer, &y1, false).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

fn forward(c: &mut Criterion) {
    let (store, layer) = emerging_fixture(CHANNELS, 3, 4).unwrap();
    let x = random_batch(BATCH, CHANNELS, SIZE, 5);
    c.bench_function("emerging_forward", |b| b.iter(|| layer.apply(&store, &x, Direction::Forward).unwrap()));
}

criterion_group!(benches, emerging, periodic, forward);
criterion_main!(benches);
