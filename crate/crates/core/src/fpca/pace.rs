//! Conditional-expectation principal component scores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Curve, FpcaModel};
use crate::{linalg, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScores {
    pub id: String,
    pub scores: Vec<f64>,
    /// Row-major conditional covariance of the scores.
    pub covariance: Vec<Vec<f64>>,
}

impl SubjectScores {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let l = self.scores.len();
        DMatrix::from_fn(l, l, |i, j| self.covariance[i][j])
    }
}

/// `xi = Lambda Phi^T Sigma^{-1} r` and
/// `Lambda - Lambda Phi^T Sigma^{-1} Phi Lambda`.
pub fn pace_scores(model: &FpcaModel, curve: &Curve) -> Result<SubjectScores> {
    if curve.is_empty() {
        return Err(Error::InsufficientData(format!("subject `{}` has no observations", curve.id)));
    }
    let l = model.rank();
    let phi = model.phi(&curve.times)?;
    let sigma = model.marginal_covariance(&curve.times)?;
    let chol = linalg::cholesky_with_jitter(sigma).ok_or_else(|| Error::NotPositiveDefinite {
        subject: curve.id.clone(),
    })?;
    let mean = model.mean();
    let r = DVector::from_iterator(
        curve.len(),
        curve.times.iter().zip(&curve.values).map(|(&t, &y)| y - mean.value_at(t)),
    );
    let lam = DVector::from_column_slice(model.eigenvalues());

    let mut lambda_phi_t = phi.transpose();
    for (j, mut row) in lambda_phi_t.row_iter_mut().enumerate() {
        row.scale_mut(lam[j]);
    }
    let xi = &lambda_phi_t * chol.solve(&r);
    let mut cov = DMatrix::from_diagonal(&lam) - &lambda_phi_t * chol.solve(&lambda_phi_t.transpose());
    linalg::symmetrize(&mut cov);

    Ok(SubjectScores {
        id: curve.id.clone(),
        scores: xi.iter().copied().collect(),
        covariance: (0..l).map(|i| (0..l).map(|j| cov[(i, j)]).collect()).collect(),
    })
}
