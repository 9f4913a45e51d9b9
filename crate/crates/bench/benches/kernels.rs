use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use iafa_bench::pattern;
use iafa_core::geometry::{iou_3d, iou_bev, Box3D};
use iafa_core::iafa::{aggregate, relation_map};
use iafa_core::tensor::{conv3x3, gemm};

fn bench_gemm(c: &mut Criterion) {
    let mut group = c.benchmark_group("gemm");
    for n in [32, 96, 192] {
        let a = pattern(&[n, n], 1.0);
        let b = pattern(&[n, n], 1.0);
        let mut out = vec![0.0; n * n];
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, &n| {
            bench.iter(|| gemm(n, n, n, a.data(), false, b.data(), false, 0.0, black_box(&mut out)))
        });
    }
    group.finish();
}

fn bench_conv(c: &mut Criterion) {
    let x = pattern(&[48, 16, 16], 1.0);
    let w = pattern(&[9 * 16, 32], 0.1);
    let b = pattern(&[32], 0.1);
    c.bench_function("conv3x3 48x16x16 -> 32", |bench| bench.iter(|| conv3x3(black_box(&x), &w, &b, 1).unwrap()));
}

fn bench_relation(c: &mut Criterion) {
    // interior grid of the default detector
    let (h, w, e, ch) = (4, 12, 32, 32);
    let f1 = pattern(&[h, w, e], 1.0);
    let f2 = pattern(&[h, w, e], 0.5);
    let x = pattern(&[h, w, ch], 1.0);
    c.bench_function("relation map + aggregate 4x12", |bench| {
        bench.iter(|| {
            let g = relation_map(black_box(&f1), &f2).unwrap();
            aggregate(&g, &x).unwrap()
        })
    });
}

fn bench_iou(c: &mut Criterion) {
    let a = Box3D::new([0.3, 1.6, 12.0], [3.9, 1.6, 1.5], 0.4).unwrap();
    let b = Box3D::new([0.9, 1.5, 12.4], [4.2, 1.5, 1.7], -0.2).unwrap();
    c.bench_function("iou_bev", |bench| bench.iter(|| iou_bev(black_box(&a), &b)));
    c.bench_function("iou_3d", |bench| bench.iter(|| iou_3d(black_box(&a), &b)));
}

criterion_group!(benches, bench_gemm, bench_conv, bench_relation, bench_iou);
criterion_main!(benches);
