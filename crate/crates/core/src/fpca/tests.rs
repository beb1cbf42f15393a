use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::init::Start;
use super::*;
use crate::quadrature;
use crate::simulate::{generate, OutcomeTruth, SimTruth};

fn random_orthonormal(m: usize, l: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(m, l, |_, _| rng.random::<f64>() - 0.5);
    linalg::orthonormal_factor(&a)
}

fn model(m: usize, lambda: &[f64], sigma2: f64, seed: u64) -> FpcaModel {
    FpcaModel::from_eigen(
        MeanEstimate::constant(10.0),
        SplineBasis::orthonormal(m).unwrap(),
        random_orthonormal(m, lambda.len(), seed),
        lambda,
        sigma2,
    )
    .unwrap()
}

/// Textbook multivariate normal log-density via LU determinant and inverse.
fn mvn_nll(sigma: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let n = r.len() as f64;
    let det = sigma.clone().lu().determinant();
    let inv = sigma.clone().try_inverse().unwrap();
    0.5 * det.ln() + 0.5 * (r.transpose() * inv * r)[(0, 0)] + 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

fn brute_covariance(model: &FpcaModel, times: &[f64]) -> DMatrix<f64> {
    let n = times.len();
    DMatrix::from_fn(n, n, |j, k| {
        let mut c: f64 = (0..model.rank())
            .map(|l| {
                model.eigenvalues()[l]
                    * model.eigenfunction_at(l, times[j]).unwrap()
                    * model.eigenfunction_at(l, times[k]).unwrap()
            })
            .sum();
        if j == k {
            c += model.noise_variance();
        }
        c
    })
}

fn small_curves(seed: u64) -> Vec<Curve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|i| {
            let n = 1 + i;
            let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            times.sort_by(f64::total_cmp);
            Curve {
                id: format!("c{i}"),
                values: (0..n).map(|_| 10.0 + 3.0 * (rng.random::<f64>() - 0.5)).collect(),
                times,
            }
        })
        .collect()
}

#[test]
fn eigenfunctions_are_orthonormal() {
    let m = model(11, &[3.0, 2.0, 1.0], 0.5, 1);
    let q = m.basis().quadrature();
    for a in 0..3 {
        for b in 0..3 {
            let ip: f64 = q
                .iter()
                .map(|(t, w)| w * m.eigenfunction_at(a, *t).unwrap() * m.eigenfunction_at(b, *t).unwrap())
                .sum();
            assert!((ip - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
        }
    }
    assert!(m.eigenfunction_at(3, 0.5).is_err());
}

#[test]
fn identity_coefficients_give_basis_functions() {
    let basis = SplineBasis::orthonormal(8).unwrap();
    let m = FpcaModel::from_eigen(
        MeanEstimate::constant(0.0),
        basis.clone(),
        DMatrix::identity(8, 2),
        &[2.0, 1.0],
        1.0,
    )
    .unwrap();
    for t in [0.0, 0.3, 0.77, 1.0] {
        let row = basis.evaluate_transformed(t).unwrap();
        for l in 0..2 {
            // Up to the sign convention.
            assert!((m.eigenfunction_at(l, t).unwrap().abs() - row[l].abs()).abs() < 1e-14);
        }
    }
}

#[test]
fn marginal_covariance_cases() {
    let m = model(8, &[3.0, 1.0], 0.5, 2);
    let c = m.marginal_covariance(&[0.4]).unwrap();
    let want = 3.0 * m.eigenfunction_at(0, 0.4).unwrap().powi(2) + m.eigenfunction_at(1, 0.4).unwrap().powi(2) + 0.5;
    assert!((c[(0, 0)] - want).abs() < 1e-12);

    let zero = model(8, &[0.0, 0.0], 0.7, 2);
    let c = zero.marginal_covariance(&[0.1, 0.5, 0.9]).unwrap();
    assert!((c - DMatrix::identity(3, 3) * 0.7).abs().max() < 1e-15);

    let times = [0.05, 0.2, 0.33, 0.5, 0.81, 0.97];
    let c = m.marginal_covariance(&times).unwrap();
    assert!((&c - brute_covariance(&m, &times)).abs().max() < 1e-12);
    let min_eig = c.symmetric_eigenvalues().min();
    assert!(min_eig >= 0.5 - 1e-10);
}

#[test]
fn likelihood_examples() {
    let unit = FpcaModel::from_eigen(
        MeanEstimate::constant(0.0),
        SplineBasis::orthonormal(5).unwrap(),
        DMatrix::identity(5, 1),
        &[0.0],
        1.0,
    )
    .unwrap();
    let one = vec![Curve {
        id: "a".into(),
        times: vec![0.5],
        values: vec![0.0],
    }];
    let v = nll_curves(&unit, &one).unwrap();
    assert!((v - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);

    let m = model(8, &[3.0, 1.0], 0.5, 3);
    let cs = small_curves(4);
    let mut doubled = cs.clone();
    doubled.extend(cs.iter().cloned());
    let single = nll_curves(&m, &cs).unwrap();
    assert!((nll_curves(&m, &doubled).unwrap() - 2.0 * single).abs() <= 1e-14 * single.abs());

    let oracle: f64 = cs
        .iter()
        .map(|c| {
            let r = DVector::from_iterator(c.len(), c.values.iter().map(|y| y - 10.0));
            mvn_nll(&brute_covariance(&m, &c.times), &r)
        })
        .sum();
    assert!((single - oracle).abs() < 1e-10, "{single} vs {oracle}");
}

#[test]
fn gradient_matches_finite_differences() {
    let cs = small_curves(8);
    let mean = MeanEstimate::constant(10.0);
    let start = Start {
        b: random_orthonormal(8, 2, 5),
        lambda: vec![2.0, 0.7],
        sigma2: 0.4,
    };
    let (f, g, x) = reml::gradient_at(&cs, &mean, &start, 8);
    let eps = 1e-6;
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp[k] += eps;
        let mut xm = x.clone();
        xm[k] -= eps;
        let fp = reml::objective_after_retraction(&cs, &mean, &xp, 8, 2);
        let fm = reml::objective_after_retraction(&cs, &mean, &xm, 8, 2);
        let fd = (fp - fm) / (2.0 * eps);
        assert!((fd - g[k]).abs() < 1e-6 * (1.0 + f.abs()), "k={k}: fd {fd} vs {}", g[k]);
    }
}

/// Zero-mean curves on a shared grid whose sample covariance equals the
/// model covariance exactly: `r = S^{1/2} (+-sqrt(N) e_k)`.
fn exact_sample(truth: &FpcaModel, n_times: usize) -> Vec<Curve> {
    let times: Vec<f64> = (0..n_times).map(|j| j as f64 / (n_times - 1) as f64).collect();
    let s = truth.marginal_covariance(&times).unwrap();
    let eig = s.symmetric_eigen();
    let root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
        * eig.eigenvectors.transpose();
    let mut out = Vec::new();
    for k in 0..n_times {
        for sign in [1.0, -1.0] {
            let r = root.column(k) * (sign * (n_times as f64).sqrt());
            out.push(Curve {
                id: format!("{k}{sign}"),
                times: times.clone(),
                values: r.iter().copied().collect(),
            });
        }
    }
    out
}

#[test]
fn truth_is_stationary_for_exact_sample() {
    let truth = FpcaModel::from_eigen(
        MeanEstimate::constant(0.0),
        SplineBasis::orthonormal(8).unwrap(),
        random_orthonormal(8, 2, 6),
        &[4.0, 1.0],
        0.25,
    )
    .unwrap();
    let cs = exact_sample(&truth, 15);
    let before = nll_curves(&truth, &cs).unwrap();
    let fit = fit_with_mean(&cs, MeanEstimate::constant(0.0), 2, 8, Some(&truth), &FpcaSettings::default()).unwrap();
    let after = fit.fit_log().negative_log_likelihood;
    assert!(before - after < 1e-6, "decrease {}", before - after);
    assert!(before - after > -1e-9);
}

fn scaled_truth(n: usize, seed: u64) -> SimTruth {
    SimTruth {
        outcomes: vec![OutcomeTruth {
            outcome: Outcome::Fvc,
            intercept: 5.0,
            slope: -1.0,
        }],
        eigenvalues: vec![4.0, 1.0],
        noise_variance: 0.25,
        biomarkers: vec![],
        n_subjects: n,
        seed,
        ..SimTruth::default()
    }
}

fn eigen_ise(model: &FpcaModel, truth: &SimTruth, l: usize) -> f64 {
    let q = quadrature::unit_interval(100);
    let ise = |sign: f64| -> f64 {
        q.iter()
            .map(|(t, w)| w * (model.eigenfunction_at(l, *t).unwrap() - sign * truth.eigenfunction(l, *t)).powi(2))
            .sum()
    };
    ise(1.0).min(ise(-1.0))
}

#[test]
fn recovers_rank_two_truth() {
    let truth = scaled_truth(200, 17);
    let (ds, _) = generate(&truth).unwrap();
    let fit = fit_reml(&ds, Outcome::Fvc, 2, 8, None, &FpcaSettings::default()).unwrap();
    let lam = fit.eigenvalues();
    eprintln!("lambda {lam:?} sigma2 {} log {:?}", fit.noise_variance(), fit.fit_log());
    assert!((lam[0] / 4.0 - 1.0).abs() < 0.2);
    assert!((lam[1] / 1.0 - 1.0).abs() < 0.2);
    assert!((fit.noise_variance() / 0.25 - 1.0).abs() < 0.15);
    for l in 0..2 {
        assert!(eigen_ise(&fit, &truth, l) < 0.1, "l={l}: {}", eigen_ise(&fit, &truth, l));
    }
    let gram = fit.coefficients().transpose() * fit.coefficients();
    assert!((gram - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-8);
}

#[test]
fn accepted_iterations_never_increase() {
    let (ds, _) = generate(&scaled_truth(80, 2)).unwrap();
    let cs = curves(&ds, Outcome::Fvc).unwrap();
    let settings = FpcaSettings::default();
    let h = mean_bandwidth(&cs, &settings).unwrap();
    let mean = fit_mean(&cs, h, &settings).unwrap();
    let history = reml::history(&cs, mean, 2, 8, None);
    assert!(history.len() > 2);
    assert!(history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn pace_examples() {
    let m = model(8, &[3.0, 1.0], 0.5, 7);
    let flat = Curve {
        id: "a".into(),
        times: vec![0.1, 0.5],
        values: vec![10.0, 10.0],
    };
    let s = pace_scores(&m, &flat).unwrap();
    assert_eq!(s.scores, vec![0.0, 0.0]);

    let tiny = model(8, &[1e-14, 1e-14], 0.5, 7);
    let far = Curve {
        id: "b".into(),
        times: vec![0.1, 0.5],
        values: vec![50.0, -40.0],
    };
    assert!(pace_scores(&tiny, &far).unwrap().scores.iter().all(|v| v.abs() < 1e-10));

    // Near noiseless: the scores solve the least-squares problem.
    let m = model(8, &[3.0, 1.0], 1e-8, 9);
    let times = vec![0.1, 0.35, 0.6, 0.9];
    let xi = [1.3, -0.8];
    let phi = m.phi(&times).unwrap();
    let values: Vec<f64> = (0..4).map(|j| 10.0 + phi[(j, 0)] * xi[0] + phi[(j, 1)] * xi[1]).collect();
    let s = pace_scores(
        &m,
        &Curve {
            id: "c".into(),
            times,
            values,
        },
    )
    .unwrap();
    for (got, want) in s.scores.iter().zip(xi) {
        assert!((got - want).abs() < 1e-3);
    }
}

#[test]
fn reconstruct_examples() {
    let m = model(8, &[3.0], 0.5, 11);
    let zero = SubjectScores {
        id: "a".into(),
        scores: vec![0.0],
        covariance: vec![vec![0.0]],
    };
    assert_eq!(m.reconstruct(&zero, 0.3).unwrap(), 10.0);
    let two = SubjectScores {
        scores: vec![2.0],
        ..zero
    };
    let direct = 10.0 + 2.0 * m.eigenfunction_at(0, 0.3).unwrap();
    assert!((m.reconstruct(&two, 0.3).unwrap() - direct).abs() < 1e-12);
    assert!(m.reconstruct(&two, 1.2).is_err());
}

#[test]
fn json_round_trip_is_byte_identical() {
    let (ds, _) = generate(&scaled_truth(40, 5)).unwrap();
    let fit = fit_reml(&ds, Outcome::Fvc, 2, 5, None, &FpcaSettings::default()).unwrap();
    let mut first = Vec::new();
    fit.write_json(&mut first).unwrap();
    let back = FpcaModel::read_json(first.as_slice()).unwrap();
    let mut second = Vec::new();
    back.write_json(&mut second).unwrap();
    if first != second {
        let (a, b) = (String::from_utf8(first).unwrap(), String::from_utf8(second).unwrap());
        for (x, y) in a.lines().zip(b.lines()) {
            if x != y {
                panic!("{x} != {y}");
            }
        }
    }
    assert_eq!(back, fit);
}

#[test]
fn singleton_grid_and_small_data() {
    let (ds, _) = generate(&scaled_truth(30, 6)).unwrap();
    let sel = select_model(&ds, Outcome::Fvc, &[1], &[5], Folds::KFold(5), &FpcaSettings::default()).unwrap();
    assert_eq!((sel.l, sel.m), (1, 5));
    assert_eq!(sel.table.len(), 1);
    assert!(select_model(&ds, Outcome::Fvc, &[3], &[2], Folds::LeaveOneOut, &FpcaSettings::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rotation_then_canonicalization_preserves_predictions(seed in 0u64..10_000) {
        let m = model(8, &[5.0, 2.0, 0.5], 0.3, seed);
        let q = random_orthonormal(3, 3, seed + 1);
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(m.eigenvalues()));
        let rotated = FpcaModel::new(
            m.mean().clone(),
            m.basis().clone(),
            m.coefficients() * &q,
            &(q.transpose() * lam * &q),
            m.noise_variance(),
        ).unwrap();
        prop_assert!((rotated.coefficients() - m.coefficients()).abs().max() < 1e-8);
        let curve = Curve { id: "x".into(), times: vec![0.1, 0.4, 0.8], values: vec![12.0, 9.0, 11.0] };
        let (a, b) = (pace_scores(&m, &curve).unwrap(), pace_scores(&rotated, &curve).unwrap());
        for t in [0.0, 0.25, 0.5, 1.0] {
            prop_assert!((m.reconstruct(&a, t).unwrap() - rotated.reconstruct(&b, t).unwrap()).abs() < 1e-8);
        }
        let w: Vec<f64> = rotated.eigenvalues().to_vec();
        prop_assert!(w.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn conditional_covariance_is_bounded(seed in 0u64..10_000, n in 1usize..6) {
        let m = model(8, &[5.0, 2.0], 0.3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let values = times.iter().map(|_| 10.0 + rng.random::<f64>()).collect();
        let s = pace_scores(&m, &Curve { id: "x".into(), times, values }).unwrap();
        let c = s.covariance_matrix();
        prop_assert!(c.symmetric_eigenvalues().min() >= -1e-10);
        for l in 0..2 {
            prop_assert!(c[(l, l)] <= m.eigenvalues()[l] + 1e-10);
        }
    }
}
