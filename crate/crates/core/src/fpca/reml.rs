//! Likelihood fit of the eigenfunctions, eigenvalues and noise variance.

use nalgebra::DMatrix;

use super::init::{self, Start};
use super::likelihood::{self, Prepared};
use super::{curves, fit_mean, mean_bandwidth, Curve, FitLog, FpcaModel, FpcaSettings};
use crate::basis::SplineBasis;
use crate::data::{Dataset, Outcome};
use crate::optim::{self, Problem, Settings};
use crate::smoothing::MeanEstimate;
use crate::{linalg, Error, Result};

/// Parameters packed as `[vec(B) column-major, log lambda, log sigma^2]`.
struct Reml<'a> {
    prepared: &'a [Prepared],
    m: usize,
    l: usize,
}

impl Reml<'_> {
    fn unpack(&self, x: &[f64]) -> (DMatrix<f64>, Vec<f64>, f64) {
        let ml = self.m * self.l;
        let b = DMatrix::from_column_slice(self.m, self.l, &x[..ml]);
        let lambda = x[ml..ml + self.l].iter().map(|v| v.exp()).collect();
        (b, lambda, x[ml + self.l].exp())
    }

    fn pack(start: &Start) -> Vec<f64> {
        let mut x: Vec<f64> = start.b.iter().copied().collect();
        x.extend(start.lambda.iter().map(|v| v.ln()));
        x.push(start.sigma2.ln());
        x
    }
}

impl Problem for Reml<'_> {
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (b, lambda, sigma2) = self.unpack(x);
        if lambda.iter().any(|v| !v.is_finite() || *v == 0.0) || !sigma2.is_finite() || sigma2 == 0.0 {
            return Err(Error::Numerical("variance parameter out of range".into()));
        }
        let (value, grad) = likelihood::total(self.prepared, &b, &lambda, sigma2, true)?;
        let grad = grad.expect("gradient requested");

        // Gradient of B -> qf(B) at an orthonormal point, pulled back to the
        // free matrix: (I - B B^T) G + B strict_lower(B^T G - G^T B).
        let btg = b.tr_mul(&grad.b);
        let mut low = &btg - btg.transpose();
        for i in 0..self.l {
            for j in i..self.l {
                low[(i, j)] = 0.0;
            }
        }
        let free = &grad.b - &b * &btg + &b * low;

        let mut out: Vec<f64> = free.iter().copied().collect();
        out.extend(grad.lambda.iter().zip(&lambda).map(|(g, v)| g * v));
        out.push(grad.sigma2 * sigma2);
        Ok((value, out))
    }

    fn retract(&self, x: &mut [f64]) {
        let ml = self.m * self.l;
        let a = DMatrix::from_column_slice(self.m, self.l, &x[..ml]);
        let q = linalg::orthonormal_factor(&a);
        x[..ml].copy_from_slice(q.as_slice());
    }
}

fn check_shape(curves: &[Curve], l: usize, m: usize) -> Result<()> {
    if l == 0 || l > m {
        return Err(Error::InvalidArgument(format!("rank {l} must be between 1 and the basis size {m}")));
    }
    if curves.len() < l + 1 {
        return Err(Error::InsufficientData(format!(
            "rank {l} needs at least {} subjects, have {}",
            l + 1,
            curves.len()
        )));
    }
    Ok(())
}

/// Fits a rank-`l` model on an `m`-function basis to curves already paired
/// with a mean estimate.
pub(crate) fn fit_with_mean(
    curves: &[Curve],
    mean: MeanEstimate,
    l: usize,
    m: usize,
    init: Option<&FpcaModel>,
    settings: &FpcaSettings,
) -> Result<FpcaModel> {
    check_shape(curves, l, m)?;
    let basis = SplineBasis::orthonormal(m)?;
    let prepared = likelihood::prepare(curves, &basis, &mean)?;
    let problem = Reml {
        prepared: &prepared,
        m,
        l,
    };

    let start = match init {
        Some(model) => {
            if model.rank() != l || model.n_basis() != m {
                return Err(Error::InvalidArgument(format!(
                    "initial model has (L, M) = ({}, {}), expected ({l}, {m})",
                    model.rank(),
                    model.n_basis()
                )));
            }
            let floor = 1e-8 * model.eigenvalues()[0].max(model.noise_variance());
            Start {
                b: model.coefficients().clone(),
                lambda: model.eigenvalues().iter().map(|v| v.max(floor)).collect(),
                sigma2: model.noise_variance(),
            }
        }
        None => init::smoother_start(curves, &mean, &basis, l).unwrap_or_else(|e| {
            log::warn!("covariance-smoother start failed ({e}); using identity start");
            init::fallback(curves, &basis, l)
        }),
    };

    let outcome = optim::minimize(
        &problem,
        Reml::pack(&start),
        Settings {
            max_iter: settings.max_iter,
            rel_tol: settings.rel_tol,
            ..Settings::default()
        },
    )?;
    let (b, lambda, sigma2) = problem.unpack(&outcome.x);

    let mut warnings = Vec::new();
    if !outcome.converged {
        warnings.push(format!("no convergence in {} iterations", outcome.iterations));
    }
    let largest = lambda.iter().copied().fold(0.0, f64::max);
    let effective = lambda.iter().filter(|v| **v >= 1e-10 * largest).count();
    if effective < l {
        warnings.push(format!("rank collapse: effective rank {effective} of {l}"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambda));
    let model = FpcaModel::new(mean, basis, b, &cov, sigma2)?;
    Ok(model.with_log(
        None,
        FitLog {
            iterations: outcome.iterations,
            negative_log_likelihood: outcome.value,
            converged: outcome.converged,
            warnings,
        },
    ))
}

/// Selects the mean bandwidth, fits the mean and maximises the likelihood
/// over orthonormal `B`, positive `lambda` and `sigma^2`.
pub fn fit_reml(
    ds: &Dataset,
    outcome: Outcome,
    l: usize,
    m: usize,
    init: Option<&FpcaModel>,
    settings: &FpcaSettings,
) -> Result<FpcaModel> {
    settings.validate()?;
    let curves = curves(ds, outcome)?;
    check_shape(&curves, l, m)?;
    let h = mean_bandwidth(&curves, settings)?;
    let mean = fit_mean(&curves, h, settings)?;
    let model = fit_with_mean(&curves, mean, l, m, init, settings)?;
    let log = model.fit_log().clone();
    Ok(model.with_log(Some(outcome), log))
}

/// Objective history of a fit, for monotonicity checks.
#[cfg(test)]
pub(crate) fn history(curves: &[Curve], mean: MeanEstimate, l: usize, m: usize, start: Option<Start>) -> Vec<f64> {
    let basis = SplineBasis::orthonormal(m).unwrap();
    let prepared = likelihood::prepare(curves, &basis, &mean).unwrap();
    let problem = Reml {
        prepared: &prepared,
        m,
        l,
    };
    let start = start.unwrap_or_else(|| init::smoother_start(curves, &mean, &basis, l).unwrap());
    optim::minimize(&problem, Reml::pack(&start), Settings::default())
        .unwrap()
        .history
}

#[cfg(test)]
pub(crate) fn gradient_at(curves: &[Curve], mean: &MeanEstimate, start: &Start, m: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let basis = SplineBasis::orthonormal(m).unwrap();
    let prepared = likelihood::prepare(curves, &basis, mean).unwrap();
    let problem = Reml {
        prepared: &prepared,
        m,
        l: start.lambda.len(),
    };
    let x = Reml::pack(start);
    let (f, g) = problem.eval(&x).unwrap();
    (f, g, x)
}

#[cfg(test)]
pub(crate) fn objective_after_retraction(curves: &[Curve], mean: &MeanEstimate, x: &[f64], m: usize, l: usize) -> f64 {
    let basis = SplineBasis::orthonormal(m).unwrap();
    let prepared = likelihood::prepare(curves, &basis, mean).unwrap();
    let problem = Reml {
        prepared: &prepared,
        m,
        l,
    };
    let mut x = x.to_vec();
    problem.retract(&mut x);
    problem.eval(&x).unwrap().0
}
