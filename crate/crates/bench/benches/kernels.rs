use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use gpae_bench::{anchor, density, model, rows};
use gpae_core::cfsearch::{search, CfQuery, SearchConfig};
use gpae_core::dataio::Mask;

fn rff_batch(c: &mut Criterion) {
    let m = model(12, 4, 1000);
    let x = rows(512, 12);
    c.bench_function("encode_batch 512x12 S=1000", |b| b.iter(|| m.encode_batch(black_box(x.view())).unwrap()));
    let y: Vec<u8> = (0..512).map(|i| (i % 2) as u8).collect();
    c.bench_function("training gradients 512x12 S=1000", |b| {
        b.iter(|| m.gradients(black_box(x.view()), &y, 1.0).unwrap())
    });
}

fn encoder_vjp(c: &mut Criterion) {
    let m = model(12, 4, 1000);
    let x = anchor(12);
    let v = ndarray::Array1::from_elem(4, 0.5);
    c.bench_function("encoder vjp S=1000", |b| b.iter(|| m.encoder_vjp(black_box(x.view()), v.view()).unwrap()));
}

fn single_search(c: &mut Criterion) {
    let m = model(12, 4, 300);
    let dm = density(4, 256);
    let x = &anchor(12) + 0.3;
    let q = CfQuery::new(x, Mask::all_mutable(12), 0.4, 1, SearchConfig::default()).unwrap();
    c.bench_function("counterfactual search S=300", |b| b.iter(|| search(&m, &dm, black_box(&q)).unwrap()));
}

criterion_group!(benches, rff_batch, encoder_vjp, single_search);
criterion_main!(benches);
