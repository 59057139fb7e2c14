use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use volo_bench::{token_map, Mixer};
use volo::{fold, unfold, MixerKind, Tape, WindowGeometry};

const KINDS: [MixerKind; 4] = [MixerKind::Oa, MixerKind::Lsa, MixerKind::Sa, MixerKind::Conv];
const SHAPES: [(usize, usize, usize); 2] = [(14, 14, 192), (28, 28, 192)];

fn mixers_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for (h, w, ch) in SHAPES {
        let x = token_map(h, w, ch, 1);
        for kind in KINDS {
            let m = Mixer::new(kind, ch, 6, 3, 0).unwrap();
            group.bench_with_input(BenchmarkId::new(kind.name(), format!("{h}x{w}x{ch}")), &x, |b, x| {
                b.iter(|| {
                    let tape = Tape::new();
                    black_box(m.forward(tape.constant(x.clone())).unwrap().value());
                })
            });
        }
    }
    group.finish();
}

fn mixers_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(10);
    let (h, w, ch) = SHAPES[0];
    let x = token_map(h, w, ch, 1);
    for kind in KINDS {
        let m = Mixer::new(kind, ch, 6, 3, 0).unwrap();
        group.bench_with_input(BenchmarkId::new(kind.name(), format!("{h}x{w}x{ch}")), &x, |b, x| {
            b.iter(|| black_box(m.forward_backward(x).unwrap()))
        });
    }
    group.finish();
}

fn windows(c: &mut Criterion) {
    let mut group = c.benchmark_group("windows");
    for (h, w, ch) in SHAPES {
        let g = WindowGeometry::new(3, 1, 1, h, w).unwrap();
        let x = token_map(h, w, ch, 2);
        let y = unfold(&x, &g).unwrap();
        let id = format!("{h}x{w}x{ch}");
        group.bench_with_input(BenchmarkId::new("unfold", &id), &x, |b, x| b.iter(|| black_box(unfold(x, &g).unwrap())));
        group.bench_with_input(BenchmarkId::new("fold", &id), &y, |b, y| b.iter(|| black_box(fold(y, &g).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, mixers_forward, mixers_backward, windows);
criterion_main!(benches);
