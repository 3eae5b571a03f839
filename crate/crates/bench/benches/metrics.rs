use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pcal_core::metrics::{ece, gender_ece, macro_ce, metric_report};
use pcal_core::resample::subsample_study;
use pcal_core::synthetic::overconfident;
use pcal_core::BinningScheme;

fn metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("ece");
    for n in [771, 10_000, 100_000] {
        let data = overconfident(n, 0.3, 11);
        for scheme in [
            BinningScheme::equal_width(10),
            BinningScheme::equal_size(10),
        ] {
            group.bench_with_input(
                BenchmarkId::new(scheme.mode.to_string(), n),
                &data,
                |b, d| b.iter(|| ece(black_box(d), scheme).unwrap()),
            );
        }
    }
    group.finish();

    let data = overconfident(10_000, 0.3, 12);
    let scheme = BinningScheme::default();
    c.bench_function("gender_ece/10000", |b| {
        b.iter(|| gender_ece(black_box(&data), scheme).unwrap())
    });
    c.bench_function("macro_ce/10000", |b| {
        b.iter(|| macro_ce(black_box(&data)).unwrap())
    });
    c.bench_function("metric_report/10000", |b| {
        b.iter(|| metric_report(black_box(&data), scheme, "m", "d").unwrap())
    });

    let data = overconfident(771, 0.15, 13);
    c.bench_function("subsample_study/771x100", |b| {
        b.iter(|| {
            subsample_study(black_box(&data), &[50, 100, 150, 250, 500], 100, 1, scheme).unwrap()
        })
    });
}

criterion_group!(benches, metrics);
criterion_main!(benches);
