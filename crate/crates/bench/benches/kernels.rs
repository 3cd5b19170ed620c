use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use cxr_core::head::{head_backward, one_hot};
use cxr_core::ops::{conv2d_forward, global_avg_pool, pool2d_forward, ConvParams, PoolKind, PoolParams};
use cxr_core::{Matrix, Tensor};

fn wave(shape: [usize; 4], phase: f32) -> Tensor {
    Tensor::from_fn(shape, |[n, c, h, w]| ((n * 131 + c * 31 + h * 7 + w) as f32 * 0.37 + phase).sin())
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3");
    for (channels, side) in [(8, 64), (16, 32), (64, 14)] {
        let input = wave([1, channels, side, side], 0.0);
        let params = ConvParams::new(wave([channels, channels, 3, 3], 1.0), vec![0.1; channels], (1, 1), (1, 1)).unwrap();
        group.throughput(Throughput::Elements((channels * channels * 9 * side * side) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(format!("{channels}x{side}x{side}")), &input, |b, x| {
            b.iter(|| conv2d_forward(black_box(x), &params).unwrap())
        });
    }
    group.finish();
}

fn pooling(c: &mut Criterion) {
    let input = wave([4, 32, 32, 32], 0.5);
    c.bench_function("max_pool 2x2/2", |b| {
        b.iter(|| pool2d_forward(black_box(&input), PoolParams::new(PoolKind::Max, (2, 2), (2, 2))).unwrap())
    });
    c.bench_function("avg_pool 3x3/1 pad 1", |b| {
        let p = PoolParams::new(PoolKind::Avg, (3, 3), (1, 1)).with_padding((1, 1));
        b.iter(|| pool2d_forward(black_box(&input), p).unwrap())
    });
    c.bench_function("global_avg_pool", |b| b.iter(|| global_avg_pool(black_box(&input)).unwrap()));
}

fn head(c: &mut Criterion) {
    let (n, f, k) = (32, 512, 2);
    let features = Matrix::new(n, f, (0..n * f).map(|i| (i as f32 * 0.013).cos()).collect()).unwrap();
    let weights = Matrix::new(f, k, (0..f * k).map(|i| (i as f32 * 0.07).sin() * 0.05).collect()).unwrap();
    let labels = one_hot(&(0..n).map(|i| i % k).collect::<Vec<_>>(), k).unwrap();
    c.bench_function("head_backward 32x512x2", |b| {
        b.iter(|| head_backward(black_box(&features), &labels, &weights, &[0.0, 0.0]).unwrap())
    });
}

criterion_group!(benches, conv, pooling, head);
criterion_main!(benches);
