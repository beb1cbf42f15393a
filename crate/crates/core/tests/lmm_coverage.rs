use sfpca::data::{Biomarker, Outcome};
use sfpca::lmm::{build_design, fit_ml, profile_interval, LmmSpec};
use sfpca::simulate::{generate_lmm, LmmTruth};
use sfpca::stats::chi2_sf;

#[test]
fn profile_intervals_cover_the_truth() {
    let truth = LmmTruth::default();
    let spec = LmmSpec::new(Outcome::Fvc, Some(Biomarker::Timp));
    let mut covered = [0usize; 3];
    for seed in 0..100 {
        let sample = generate_lmm(&LmmTruth {
            seed: 500 + seed,
            ..truth.clone()
        })
        .unwrap();
        let design = build_design(&sample.dataset, &spec).unwrap();
        let fit = fit_ml(&design, None).unwrap();
        for (k, hits) in covered.iter_mut().enumerate() {
            let (lo, hi) = profile_interval(&design, &fit, k, 0.95).unwrap();
            if lo <= truth.beta[k] && truth.beta[k] <= hi {
                *hits += 1;
            }
        }
    }
    assert!(covered.iter().all(|&c| c >= 90), "coverage {covered:?} of 100");
}

#[test]
fn chi_square_five_percent_point() {
    assert!((chi2_sf(3.84, 1.0) - 0.05).abs() < 1e-3);
}
