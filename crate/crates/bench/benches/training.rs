use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use iafa_core::data::{generate_scene, SceneConfig};
use iafa_core::detector::{loss_and_gradients, Detector, DetectorConfig, PreparedScene};
use iafa_core::targets::LossWeights;

fn bench_forward(c: &mut Criterion) {
    let cfg = DetectorConfig::default();
    let scene = generate_scene(0, &SceneConfig::default()).unwrap();
    let det = Detector::new(cfg, 0).unwrap();
    let mut group = c.benchmark_group("forward");
    for use_iafa in [false, true] {
        let name = if use_iafa { "with iafa" } else { "plain" };
        group.bench_function(name, |bench| bench.iter(|| det.forward(black_box(&scene.image), use_iafa).unwrap()));
    }
    group.finish();
}

fn bench_step(c: &mut Criterion) {
    let cfg = DetectorConfig::default();
    let scene = PreparedScene::new(&generate_scene(0, &SceneConfig::occlusion_heavy()).unwrap(), &cfg).unwrap();
    let mut det = Detector::new(cfg, 0).unwrap();
    let weights = LossWeights::new(1.0, 1.0, 1.0).unwrap();
    c.bench_function("loss and gradients", |bench| {
        bench.iter(|| loss_and_gradients(&mut det, black_box(&scene), &weights, true).unwrap())
    });
}

criterion_group!(benches, bench_forward, bench_step);
criterion_main!(benches);
