use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use dualspace::eval::{auroc, fpr95};
use dualspace_bench::scores;

fn ood_metrics(c: &mut Criterion) {
    let known = scores(8000, 0.0, 5);
    let open = scores(2000, 1.0, 6);
    c.bench_function("auroc_10k", |b| b.iter(|| black_box(auroc(&known, &open))));
    c.bench_function("fpr95_10k", |b| b.iter(|| black_box(fpr95(&known, &open))));
}

criterion_group!(benches, ood_metrics);
criterion_main!(benches);
