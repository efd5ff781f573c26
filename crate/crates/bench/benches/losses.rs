use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;

use dualspace::losses::{bcl_loss, bcl_loss_grad};
use dualspace_bench::{labels, unit_rows};

fn bcl(c: &mut Criterion) {
    // two views of a 128-sample batch
    let z = unit_rows(256, 64, 3);
    let half = labels(128, 8, 4);
    let y: Vec<usize> = half.iter().chain(half.iter()).copied().collect();
    let w = vec![1.0; 256];
    c.bench_function("bcl_loss_256", |b| b.iter(|| black_box(bcl_loss(&z, &y, &w, 0.1))));
    c.bench_function("bcl_loss_grad_256", |b| {
        b.iter(|| {
            let mut dz = Array2::zeros(z.raw_dim());
            bcl_loss_grad(&z, &y, &w, 0.1, dz.view_mut(), 1.0);
            black_box(dz)
        })
    });
}

criterion_group!(benches, bcl);
criterion_main!(benches);
