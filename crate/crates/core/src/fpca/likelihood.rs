//! Gaussian marginal likelihood of the centred curves and its gradient.

use nalgebra::{DMatrix, DVector};

use super::{curves, Curve, FpcaModel};
use crate::basis::SplineBasis;
use crate::data::{Dataset, Outcome};
use crate::smoothing::MeanEstimate;
use crate::{linalg, par, Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A curve reduced to its basis design rows and mean-centred residuals.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub id: String,
    pub design: DMatrix<f64>,
    pub resid: DVector<f64>,
}

pub(crate) fn prepare(curves: &[Curve], basis: &SplineBasis, mean: &MeanEstimate) -> Result<Vec<Prepared>> {
    curves
        .iter()
        .map(|c| {
            Ok(Prepared {
                id: c.id.clone(),
                design: basis.design(&c.times)?,
                resid: DVector::from_iterator(
                    c.len(),
                    c.times.iter().zip(&c.values).map(|(&t, &y)| y - mean.value_at(t)),
                ),
            })
        })
        .collect()
}

pub(crate) struct Gradient {
    pub b: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub sigma2: f64,
}

/// Negative log-likelihood of one subject (including its `log 2 pi` term)
/// and, on request, the gradient with respect to `B`, `lambda`, `sigma^2`.
pub(crate) fn subject_term(
    p: &Prepared,
    b: &DMatrix<f64>,
    lambda: &[f64],
    sigma2: f64,
    with_gradient: bool,
) -> Result<(f64, Option<Gradient>)> {
    let n = p.resid.len();
    let phi = &p.design * b;
    let mut scaled = phi.clone();
    for (j, lam) in lambda.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*lam);
    }
    let mut sigma = &scaled * phi.transpose();
    linalg::symmetrize(&mut sigma);
    for i in 0..n {
        sigma[(i, i)] += sigma2;
    }
    let chol = linalg::cholesky_with_jitter(sigma).ok_or_else(|| Error::NotPositiveDefinite { subject: p.id.clone() })?;
    let alpha = chol.solve(&p.resid);
    let value = 0.5 * linalg::log_det(&chol) + 0.5 * p.resid.dot(&alpha) + n as f64 * HALF_LN_2PI;
    if !with_gradient {
        return Ok((value, None));
    }
    let mut g = chol.inverse();
    g.ger(-1.0, &alpha, &alpha, 1.0);
    g.scale_mut(0.5);
    let g_phi = &g * &phi;
    let mut grad_b = p.design.tr_mul(&g_phi);
    for (j, lam) in lambda.iter().enumerate() {
        grad_b.column_mut(j).scale_mut(2.0 * lam);
    }
    let grad_lambda = (0..lambda.len()).map(|j| phi.column(j).dot(&g_phi.column(j))).collect();
    Ok((
        value,
        Some(Gradient {
            b: grad_b,
            lambda: grad_lambda,
            sigma2: g.trace(),
        }),
    ))
}

/// Sum over subjects in their given order.
pub(crate) fn total(
    prepared: &[Prepared],
    b: &DMatrix<f64>,
    lambda: &[f64],
    sigma2: f64,
    with_gradient: bool,
) -> Result<(f64, Option<Gradient>)> {
    let terms = par::map(prepared, |p| subject_term(p, b, lambda, sigma2, with_gradient));
    let mut value = 0.0;
    let mut grad = with_gradient.then(|| Gradient {
        b: DMatrix::zeros(b.nrows(), b.ncols()),
        lambda: vec![0.0; lambda.len()],
        sigma2: 0.0,
    });
    for term in terms {
        let (v, g) = term?;
        value += v;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.b += g.b;
            for (a, x) in acc.lambda.iter_mut().zip(g.lambda) {
                *a += x;
            }
            acc.sigma2 += g.sigma2;
        }
    }
    Ok((value, grad))
}

/// Negative log-likelihood of the given curves under `model`, centred by
/// the model's own mean.
pub(crate) fn nll_curves(model: &FpcaModel, curves: &[Curve]) -> Result<f64> {
    let prepared = prepare(curves, model.basis(), model.mean())?;
    Ok(total(
        &prepared,
        model.coefficients(),
        model.eigenvalues(),
        model.noise_variance(),
        false,
    )?
    .0)
}

/// `sum_i [ log det Sigma_i / 2 + r_i^T Sigma_i^{-1} r_i / 2 ] + (sum_i N_i) log(2 pi) / 2`.
pub fn negative_log_likelihood(model: &FpcaModel, ds: &Dataset, outcome: Outcome) -> Result<f64> {
    nll_curves(model, &curves(ds, outcome)?)
}
