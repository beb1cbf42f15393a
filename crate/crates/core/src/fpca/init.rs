//! Starting values from a smoothed raw covariance surface.

use nalgebra::DMatrix;

use super::Curve;
use crate::basis::SplineBasis;
use crate::smoothing::{uniform_grid, Kernel, MeanEstimate};
use crate::{linalg, Error, Result};

const GRID: usize = 31;

#[derive(Debug, Clone)]
pub(crate) struct Start {
    pub b: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub sigma2: f64,
}

fn pooled_variance(curves: &[Curve]) -> f64 {
    let values: Vec<f64> = curves.iter().flat_map(|c| c.values.iter().copied()).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        var
    } else {
        1.0
    }
}

/// Identity columns with geometrically decreasing variances.
pub(crate) fn fallback(curves: &[Curve], basis: &SplineBasis, l: usize) -> Start {
    let var = pooled_variance(curves);
    Start {
        b: DMatrix::identity(basis.n_basis(), l),
        lambda: (0..l).map(|k| 0.5 * var * 0.5f64.powi(k as i32)).collect(),
        sigma2: 0.25 * var,
    }
}

/// Smooths the off-diagonal residual cross-products onto a grid with a
/// product kernel, takes the leading eigenvectors and projects them onto
/// the basis. The noise variance starts at the mean squared residual minus
/// the fitted curve variance.
pub(crate) fn smoother_start(curves: &[Curve], mean: &MeanEstimate, basis: &SplineBasis, l: usize) -> Result<Start> {
    let mut pairs = Vec::new();
    let mut diag_sum = 0.0;
    let mut n_obs = 0usize;
    for c in curves {
        let r: Vec<f64> = c.times.iter().zip(&c.values).map(|(&t, &y)| y - mean.value_at(t)).collect();
        for j in 0..c.len() {
            diag_sum += r[j] * r[j];
            n_obs += 1;
            for k in 0..c.len() {
                if j != k {
                    pairs.push((c.times[j], c.times[k], r[j] * r[k]));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no subject has two observations".into()));
    }

    let grid = uniform_grid(GRID);
    let h0 = (2.0 * mean.bandwidth).clamp(0.1, 0.3);
    let kernel = Kernel::Epanechnikov;
    let mut surface = DMatrix::zeros(GRID, GRID);
    for a in 0..GRID {
        for b in a..GRID {
            let mut h = h0;
            let value = loop {
                let (mut num, mut den) = (0.0, 0.0);
                for &(s, t, v) in &pairs {
                    let w = kernel.weight((s - grid[a]) / h) * kernel.weight((t - grid[b]) / h);
                    num += w * v;
                    den += w;
                }
                if den > 0.0 {
                    break num / den;
                }
                h *= 2.0;
                if h > 8.0 * h0 {
                    return Err(Error::Numerical("covariance surface has empty cells".into()));
                }
            };
            surface[(a, b)] = value;
            surface[(b, a)] = value;
        }
    }

    let delta = 1.0 / (GRID - 1) as f64;
    let (values, vectors) = linalg::sorted_eigen(surface * delta);
    if !(values[0] > 0.0) {
        return Err(Error::Numerical("smoothed covariance has no positive eigenvalue".into()));
    }
    let floor = 1e-3 * values[0];
    let lambda: Vec<f64> = (0..l).map(|k| values[k].max(floor)).collect();
    let target = vectors.columns(0, l) / delta.sqrt();

    let design = basis.design(&grid)?;
    let coef = design
        .svd(true, true)
        .solve(&target, 1e-12)
        .map_err(|e| Error::Numerical(format!("eigenfunction projection failed: {e}")))?;
    let qr = coef.clone().qr();
    if qr.r().diagonal().iter().any(|d| d.abs() < 1e-8) {
        return Err(Error::Numerical("projected eigenfunctions are linearly dependent".into()));
    }
    let b = linalg::orthonormal_factor(&coef);

    let mut fitted_diag = 0.0;
    for c in curves {
        let phi = basis.design(&c.times)? * &b;
        for j in 0..c.len() {
            fitted_diag += (0..l).map(|k| lambda[k] * phi[(j, k)].powi(2)).sum::<f64>();
        }
    }
    let sigma2 = ((diag_sum - fitted_diag) / n_obs as f64).max(1e-4 * pooled_variance(curves));
    Ok(Start { b, lambda, sigma2 })
}
