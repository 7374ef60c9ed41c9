//! Benchmarks of the pipeline's hot paths: the loss stack on CPU-sized
//! maps, mask rasterization, and the max ensemble.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cxseg_core::data::raster::rasterize_mask;
use cxseg_core::data::AnnotationBox;
use cxseg_core::ensembles::max_ensemble;
use cxseg_core::losses::rect::{rect_transform, Sharpness};
use cxseg_core::losses::{rect_focal_loss_grad, FocalParams};

fn random_map(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..1.0))
}

fn bench_rect_transform(c: &mut Criterion) {
    let mut group = c.benchmark_group("rect_transform");
    for &size in &[128usize, 512] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = random_map(&mut rng, size);
        group.bench_with_input(BenchmarkId::new("power8", size), &map, |b, m| {
            b.iter(|| rect_transform(m, Sharpness::Power(8.0)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("exact", size), &map, |b, m| {
            b.iter(|| rect_transform(m, Sharpness::Exact).unwrap())
        });
    }
    group.finish();
}

fn bench_loss_gradient(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pred = random_map(&mut rng, 128);
    let target = Array2::from_shape_fn((128, 128), |(i, j)| {
        u8::from((32..64).contains(&i) && (40..90).contains(&j))
    });
    let params = FocalParams::default();
    c.bench_function("rect_focal_loss_grad_128", |b| {
        b.iter(|| rect_focal_loss_grad(&target, &pred, &params, 8.0).unwrap())
    });
}

fn bench_rasterize(c: &mut Criterion) {
    let boxes: Vec<AnnotationBox> = (0..10)
        .map(|i| {
            let off = (i * 37) as f32;
            AnnotationBox::new(0, off, off, off + 200.0, off + 150.0, "R1").unwrap()
        })
        .collect();
    c.bench_function("rasterize_mask_10_boxes_512", |b| {
        b.iter(|| rasterize_mask(&boxes, (1024, 1024), 512).unwrap())
    });
}

fn bench_max_ensemble(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let maps: Vec<Array2<f32>> = (0..14)
        .map(|_| Array2::from_shape_fn((512, 512), |_| rng.gen_range(0.0..1.0f32)))
        .collect();
    c.bench_function("max_ensemble_14x512", |b| {
        b.iter(|| max_ensemble(&maps).unwrap())
    });
}

criterion_group!(
    benches,
    bench_rect_transform,
    bench_loss_gradient,
    bench_rasterize,
    bench_max_ensemble
);
criterion_main!(benches);
