//! One-thread pool against the default pool on the hot paths. Build with
//! `--no-default-features` to time the plain sequential fallback instead.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;

use sfpca::data::{Biomarker, Outcome};
use sfpca::fpca::{fit_reml, FpcaSettings};
use sfpca::lmm::{build_design, loo_cv_design, LmmSpec};
use sfpca::simulate::{generate, generate_lmm, LmmTruth, SimTruth};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("sequential", ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn reml(c: &mut Criterion) {
    let (ds, _) = generate(&SimTruth::default()).unwrap();
    let settings = FpcaSettings {
        bandwidth: Some(0.15),
        ..FpcaSettings::default()
    };
    let mut group = c.benchmark_group("fpca_reml_fit");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &pool, |b, pool| {
            b.iter(|| pool.install(|| black_box(fit_reml(&ds, Outcome::Fvc, 2, 8, None, &settings).unwrap())))
        });
    }
    group.finish();
}

fn lmm_cv(c: &mut Criterion) {
    let sample = generate_lmm(&LmmTruth::default()).unwrap();
    let design = build_design(&sample.dataset, &LmmSpec::new(Outcome::Fvc, Some(Biomarker::Timp))).unwrap();
    let mut group = c.benchmark_group("lmm_loo_cv");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &pool, |b, pool| {
            b.iter(|| pool.install(|| black_box(loo_cv_design(&design).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, reml, lmm_cv);
criterion_main!(benches);
