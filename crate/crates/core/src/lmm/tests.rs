use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::fit::{gls_beta, ols};
use super::*;
use crate::data::{Observation, SubjectRecord, Variable};
use crate::simulate::{generate_lmm, LmmTruth};

fn obs(t: f64, y: f64, x: f64) -> Observation {
    Observation::new(t)
        .with(Variable::Outcome(Outcome::Fvc), y)
        .with(Variable::Biomarker(Biomarker::Timp), x)
}

fn dataset(subjects: Vec<(&str, Vec<Observation>)>) -> Dataset {
    Dataset::new(
        subjects
            .into_iter()
            .map(|(id, o)| SubjectRecord::new(id, o).unwrap())
            .collect(),
    )
    .unwrap()
}

fn spec() -> LmmSpec {
    LmmSpec::new(Outcome::Fvc, Some(Biomarker::Timp))
}

#[test]
fn design_eligibility_and_transform() {
    let ds = dataset(vec![
        ("a", vec![obs(0.0, 100.0, 100.0), obs(6.0, 98.0, 120.0)]),
        ("b", vec![obs(0.0, 90.0, 150.0)]),
        ("c", vec![obs(0.4, 95.0, 150.0), obs(6.8, 94.0, 160.0), obs(9.0, 93.0, 170.0)]),
        ("d", vec![obs(0.0, 95.0, -1.0), obs(12.0, 94.0, 160.0)]),
    ]);
    let d = build_design(&ds, &spec()).unwrap();
    assert_eq!(d.blocks.iter().map(|b| b.id.as_str()).collect::<Vec<_>>(), vec!["a", "c"]);
    assert_eq!(d.blocks[0].y.len(), 2);
    assert!((d.blocks[0].x[(0, 2)] - 100f64.ln()).abs() < 1e-15);
    assert_eq!(d.blocks[1].times, vec![0.0, 6.0]);
    assert_eq!(d.dropped_rows, 1);
    assert_eq!(d.without_biomarker().n_fixed(), 2);
    assert_eq!(d.without_biomarker().rows(), d.rows());
    assert!(build_design(&dataset(vec![("b", vec![obs(0.0, 90.0, 150.0)])]), &spec()).is_err());
}

#[test]
fn closer_visit_wins_a_slot() {
    let ds = dataset(vec![("a", vec![obs(0.0, 1.0, 2.0), obs(5.5, 2.0, 2.0), obs(6.2, 3.0, 2.0)])]);
    let d = build_design(&ds, &spec()).unwrap();
    assert_eq!(d.blocks[0].y.as_slice(), &[1.0, 3.0]);
}

fn sample(truth: LmmTruth) -> Design {
    build_design(&generate_lmm(&truth).unwrap().dataset, &spec()).unwrap()
}

fn dense_log_likelihood(design: &Design, beta: &[f64], sigma: [[f64; 2]; 2], se2: f64) -> f64 {
    let n = design.n_obs();
    let mut v = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    let s = DMatrix::from_row_slice(2, 2, &[sigma[0][0], sigma[0][1], sigma[1][0], sigma[1][1]]);
    let mut off = 0;
    for b in &design.blocks {
        let k = b.y.len();
        let block = &b.z * &s * b.z.transpose() + DMatrix::identity(k, k) * se2;
        v.view_mut((off, off), (k, k)).copy_from(&block);
        r.rows_mut(off, k).copy_from(&(&b.y - &b.x * DVector::from_column_slice(beta)));
        off += k;
    }
    let det = v.clone().lu().determinant();
    let inv = v.try_inverse().unwrap();
    -0.5 * (det.ln() + (r.transpose() * inv * &r)[(0, 0)] + n as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[test]
fn likelihood_matches_dense_oracle() {
    let d = sample(LmmTruth {
        n_subjects: 3,
        seed: 2,
        ..LmmTruth::default()
    });
    let beta = [99.0, -0.4, -1.5];
    let sigma = [[50.0, -0.5], [-0.5, 0.2]];
    let a = marginal_log_likelihood(&d, &beta, sigma, 20.0).unwrap();
    let b = dense_log_likelihood(&d, &beta, sigma, 20.0);
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
}

#[test]
fn zero_random_effects_reduce_to_ols() {
    let d = sample(LmmTruth {
        n_subjects: 40,
        ..LmmTruth::default()
    });
    let (ols_beta, _) = ols(&d).unwrap();
    let gls = gls_beta(&d, [[0.0; 2]; 2], 7.0).unwrap();
    for (a, b) in gls.iter().zip(ols_beta.iter()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn pure_noise_fit() {
    let d = sample(LmmTruth {
        sigma: [[0.0; 2]; 2],
        n_subjects: 300,
        seed: 5,
        ..LmmTruth::default()
    });
    let fit = fit_ml(&d, None).unwrap();
    let (ols_beta, _) = ols(&d).unwrap();
    for k in 0..3 {
        assert!((fit.beta[k] - ols_beta[k]).abs() < 3.0 * fit.beta_se[k]);
    }
    for v in fit.sigma.iter().flatten() {
        assert!(v.abs() < 0.05 * fit.residual_variance, "{:?}", fit.sigma);
    }
}

#[test]
fn residual_variance_scales_with_outcome() {
    let d = sample(LmmTruth {
        n_subjects: 200,
        seed: 8,
        ..LmmTruth::default()
    });
    let mut doubled = d.clone();
    for b in &mut doubled.blocks {
        b.y *= 2.0;
    }
    let a = fit_ml(&d, None).unwrap();
    let b = fit_ml(&doubled, None).unwrap();
    assert!((b.residual_variance / a.residual_variance / 4.0 - 1.0).abs() < 0.02);
    let reml = fit_reml(&d, None).unwrap();
    assert!(reml.residual_variance >= a.residual_variance * 0.99);
}

#[test]
fn subject_order_does_not_matter() {
    let d = sample(LmmTruth {
        n_subjects: 100,
        seed: 9,
        ..LmmTruth::default()
    });
    let mut rev = d.clone();
    rev.blocks.reverse();
    let (a, b) = (fit_ml(&d, None).unwrap(), fit_ml(&rev, None).unwrap());
    for (x, y) in a.beta.iter().zip(&b.beta) {
        assert!((x - y).abs() < 1e-9 * x.abs().max(1.0), "{x} {y}");
    }
    for (x, y) in a.sigma.iter().flatten().zip(b.sigma.iter().flatten()) {
        assert!((x - y).abs() < 1e-9 * x.abs().max(1.0), "{x} {y}");
    }
    assert!((a.residual_variance - b.residual_variance).abs() < 1e-9 * a.residual_variance);
}

#[test]
fn prediction_is_affine() {
    let d = sample(LmmTruth {
        n_subjects: 50,
        ..LmmTruth::default()
    });
    let fit = fit_ml(&d, None).unwrap();
    assert_eq!(predict_population(&fit, 0.0, Some(0.0)).unwrap(), fit.beta[0]);
    let null = fit_ml(&d.without_biomarker(), None).unwrap();
    assert_eq!(predict_population(&null, 6.0, None).unwrap(), null.beta[0] + 6.0 * null.beta[1]);
    let row = [1.0, 12.0, 5.3];
    let dot: f64 = row.iter().zip(&fit.beta).map(|(a, b)| a * b).sum();
    assert!((predict_population(&fit, 12.0, Some(5.3)).unwrap() - dot).abs() < 1e-12);
}

#[test]
fn lrt_of_identical_fits() {
    let d = sample(LmmTruth {
        n_subjects: 50,
        ..LmmTruth::default()
    });
    let fit = fit_ml(&d, None).unwrap();
    let lrt = lrt_biomarker(&fit, &fit).unwrap();
    assert_eq!((lrt.statistic, lrt.p_value), (0.0, 1.0));
    let null = fit_ml(&d.without_biomarker(), None).unwrap();
    let lrt = lrt_biomarker(&fit, &null).unwrap();
    assert!(lrt.statistic >= 0.0 && (0.0..=1.0).contains(&lrt.p_value));
    let other = fit_ml(&d.without_subject(0), None).unwrap();
    assert!(lrt_biomarker(&fit, &other).is_err());
    let reml = fit_reml(&d, None).unwrap();
    assert!(lrt_biomarker(&reml, &null).is_err());
}

#[test]
fn profile_interval_brackets_estimate() {
    let d = sample(LmmTruth {
        n_subjects: 200,
        seed: 3,
        ..LmmTruth::default()
    });
    let fit = fit_ml(&d, None).unwrap();
    for k in 0..3 {
        let (lo, hi) = profile_interval(&d, &fit, k, 0.95).unwrap();
        assert!(lo < fit.beta[k] && fit.beta[k] < hi);
        // Close to the Wald interval for a regular problem.
        let wald = 1.96 * fit.beta_se[k];
        assert!(((hi - lo) / (2.0 * wald) - 1.0).abs() < 0.1, "k={k}: {lo} {hi} vs {wald}");
        assert!(profile_lr_statistic(&d, &fit, k, fit.beta[k]).unwrap() < 1e-6);
    }
}

#[test]
fn cross_validation_examples() {
    let ds = dataset(vec![
        ("a", vec![obs(0.0, 10.0, 1.0), obs(6.0, 10.0, 1.0)]),
        ("b", vec![obs(0.0, 20.0, 1.0), obs(6.0, 20.0, 1.0)]),
    ]);
    let null = LmmSpec::new(Outcome::Fvc, None);
    let cv = loo_cv_mse(&ds, &null).unwrap();
    assert!((cv.mse - 100.0).abs() < 1e-9, "{cv:?}");

    let flat = dataset(
        (0..4)
            .map(|i| (["a", "b", "c", "d"][i], vec![obs(0.0, 7.0, 1.0), obs(12.0, 7.0, 2.0)]))
            .collect(),
    );
    assert!(loo_cv_mse(&flat, &null).unwrap().mse < 1e-20);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let noisy = dataset(
        (0..5)
            .map(|i| {
                let id = ["a", "b", "c", "d", "e"][i];
                (id, vec![obs(0.0, 7.0 + noise.sample(&mut rng), 1.0), obs(6.0, 6.0 + noise.sample(&mut rng), 2.0)])
            })
            .collect(),
    );
    let cv = loo_cv_mse(&noisy, &null).unwrap();
    assert_eq!(cv.n_obs, 10);
    assert!(cv.mse > 0.0);
}
