//! Reduced-rank functional principal component analysis for sparse curves.
//!
//! The covariance is modelled as `C(s, t) = sum_l lambda_l phi_l(s) phi_l(t)`
//! with `phi_l` spanned by an orthonormalized cubic B-spline basis, so the
//! eigenfunction coefficient matrix `B` has orthonormal columns exactly when
//! the eigenfunctions are L2-orthonormal. All times are on the unit scale.

mod forecast;
mod init;
mod likelihood;
mod pace;
mod reml;
mod select;

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use forecast::{forecast_last, ForecastConfig, ForecastFailure, ForecastRun, RankChoice};
pub use likelihood::negative_log_likelihood;
pub use pace::{pace_scores, SubjectScores};
pub use reml::fit_reml;
pub use select::{select_model, CvEntry, FoldDiagnostic, Folds, ModelSelectionResult};

pub(crate) use likelihood::nll_curves;
pub(crate) use reml::fit_with_mean;
pub(crate) use select::select_curves;

use crate::basis::SplineBasis;
use crate::data::{Dataset, Outcome};
use crate::linalg;
use crate::smoothing::{self, Kernel, MeanEstimate};
use crate::{Error, Result};

/// Ranks tried by model selection unless configured otherwise.
pub const DEFAULT_L_GRID: [usize; 3] = [1, 2, 3];

/// One subject's observed outcome values on the unit time scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Extracts the outcome curves on the unit scale; subjects without any
/// value of the outcome are skipped.
pub fn curves(ds: &Dataset, outcome: Outcome) -> Result<Vec<Curve>> {
    let unit = ds.rescale_time(ds.horizon)?;
    Ok(unit
        .subjects
        .iter()
        .filter_map(|s| {
            let (times, values): (Vec<f64>, Vec<f64>) = s.series(outcome).unzip();
            (!times.is_empty()).then(|| Curve {
                id: s.id.clone(),
                times,
                values,
            })
        })
        .collect())
}

/// Settings shared by mean estimation and likelihood fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpcaSettings {
    pub bandwidth_candidates: Vec<f64>,
    /// Skips bandwidth selection when set.
    pub bandwidth: Option<f64>,
    pub kernel: Kernel,
    pub mean_grid_size: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for FpcaSettings {
    fn default() -> Self {
        FpcaSettings {
            bandwidth_candidates: smoothing::default_bandwidth_candidates(),
            bandwidth: None,
            kernel: Kernel::Epanechnikov,
            mean_grid_size: smoothing::DEFAULT_GRID_SIZE,
            max_iter: 500,
            rel_tol: 1e-8,
        }
    }
}

impl FpcaSettings {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth.is_none() && self.bandwidth_candidates.is_empty() {
            return Err(Error::InvalidArgument("no bandwidth candidates".into()));
        }
        if self.mean_grid_size < 2 {
            return Err(Error::InvalidArgument("mean grid needs at least two points".into()));
        }
        if !(self.rel_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument("optimizer tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

fn groups(curves: &[Curve]) -> Vec<Vec<(f64, f64)>> {
    curves
        .iter()
        .map(|c| c.times.iter().copied().zip(c.values.iter().copied()).collect())
        .collect()
}

/// Leave-one-subject-out bandwidth for the pooled mean.
pub fn mean_bandwidth(curves: &[Curve], settings: &FpcaSettings) -> Result<f64> {
    match settings.bandwidth {
        Some(h) => Ok(h),
        None => smoothing::select_bandwidth_with(&groups(curves), &settings.bandwidth_candidates, settings.kernel),
    }
}

/// Pooled local linear mean at a given bandwidth.
pub fn fit_mean(curves: &[Curve], bandwidth: f64, settings: &FpcaSettings) -> Result<MeanEstimate> {
    let points: Vec<(f64, f64)> = groups(curves).into_iter().flatten().collect();
    smoothing::fit_local_linear_with(
        &points,
        bandwidth,
        &smoothing::uniform_grid(settings.mean_grid_size),
        settings.kernel,
    )
}

/// Optimizer record attached to a fitted model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitLog {
    pub iterations: usize,
    pub negative_log_likelihood: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    outcome: Option<Outcome>,
    rank: usize,
    basis: SplineBasis,
    /// One inner vector of basis coefficients per eigenfunction.
    coefficients: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    noise_variance: f64,
    mean: MeanEstimate,
    fit_log: FitLog,
}

/// A fitted (or hand-built) reduced-rank covariance model plus mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct FpcaModel {
    outcome: Option<Outcome>,
    mean: MeanEstimate,
    basis: SplineBasis,
    coefficients: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    noise_variance: f64,
    fit_log: FitLog,
}

impl TryFrom<ModelRepr> for FpcaModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        let m = r.basis.n_basis();
        if r.coefficients.len() != r.rank || r.eigenvalues.len() != r.rank {
            return Err(Error::InvalidArgument("model rank does not match its arrays".into()));
        }
        if r.coefficients.iter().any(|c| c.len() != m) {
            return Err(Error::InvalidArgument("coefficient column length differs from basis size".into()));
        }
        let coefficients = DMatrix::from_fn(m, r.rank, |i, j| r.coefficients[j][i]);
        let model = FpcaModel {
            outcome: r.outcome,
            mean: r.mean,
            basis: r.basis,
            coefficients,
            eigenvalues: r.eigenvalues,
            noise_variance: r.noise_variance,
            fit_log: r.fit_log,
        };
        model.validate()?;
        Ok(model)
    }
}

impl From<FpcaModel> for ModelRepr {
    fn from(m: FpcaModel) -> Self {
        ModelRepr {
            outcome: m.outcome,
            rank: m.coefficients.ncols(),
            coefficients: m.coefficients.column_iter().map(|c| c.iter().copied().collect()).collect(),
            basis: m.basis,
            eigenvalues: m.eigenvalues,
            noise_variance: m.noise_variance,
            mean: m.mean,
            fit_log: m.fit_log,
        }
    }
}

impl FpcaModel {
    /// Builds a canonical model from an orthonormal `M x L` coefficient
    /// matrix and an arbitrary symmetric PSD `L x L` score covariance: the
    /// covariance is diagonalised, eigenpairs sorted by descending variance
    /// and each eigenfunction signed so its integral is non-negative (ties:
    /// non-negative at 0).
    pub fn new(
        mean: MeanEstimate,
        basis: SplineBasis,
        coefficients: DMatrix<f64>,
        score_covariance: &DMatrix<f64>,
        noise_variance: f64,
    ) -> Result<Self> {
        let l = coefficients.ncols();
        if !basis.is_orthonormal() {
            return Err(Error::InvalidArgument("eigenfunctions need an orthonormalized basis".into()));
        }
        if coefficients.nrows() != basis.n_basis() || l == 0 || l > basis.n_basis() {
            return Err(Error::InvalidArgument(format!(
                "coefficient matrix is {}x{} for a basis of size {}",
                coefficients.nrows(),
                l,
                basis.n_basis()
            )));
        }
        if score_covariance.shape() != (l, l) {
            return Err(Error::InvalidArgument("score covariance must be L x L".into()));
        }
        let mut cov = score_covariance.clone();
        linalg::symmetrize(&mut cov);
        let (values, vectors) = linalg::sorted_eigen(cov);
        let mut b = &coefficients * vectors;
        let integrals = basis.integrals();
        let at_zero = basis.evaluate_transformed(0.0)?;
        for j in 0..l {
            let col = b.column(j);
            let integral = integrals.dot(&col);
            let scale = col.norm().max(1.0);
            let flip = if integral.abs() > 1e-12 * scale {
                integral < 0.0
            } else {
                at_zero.dot(&col) < 0.0
            };
            if flip {
                b.column_mut(j).neg_mut();
            }
        }
        // Eigenvalues that are negative only through rounding are clamped.
        let eigenvalues = values.iter().map(|&v| if v < 0.0 && v > -1e-12 { 0.0 } else { v }).collect();
        let model = FpcaModel {
            outcome: None,
            mean,
            basis,
            coefficients: b,
            eigenvalues,
            noise_variance,
            fit_log: FitLog::default(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Convenience constructor with a diagonal score covariance.
    pub fn from_eigen(
        mean: MeanEstimate,
        basis: SplineBasis,
        coefficients: DMatrix<f64>,
        eigenvalues: &[f64],
        noise_variance: f64,
    ) -> Result<Self> {
        let cov = DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues));
        FpcaModel::new(mean, basis, coefficients, &cov, noise_variance)
    }

    fn validate(&self) -> Result<()> {
        let l = self.coefficients.ncols();
        let gram = self.coefficients.transpose() * &self.coefficients;
        let dev = (gram - DMatrix::<f64>::identity(l, l)).abs().max();
        if !(dev <= 1e-8) {
            return Err(Error::InvalidArgument(format!("coefficient columns are not orthonormal (deviation {dev:e})")));
        }
        if self.eigenvalues.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("eigenvalues must be finite and non-negative".into()));
        }
        if !(self.noise_variance > 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::InvalidArgument("noise variance must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn with_log(mut self, outcome: Option<Outcome>, log: FitLog) -> Self {
        self.outcome = outcome;
        self.fit_log = log;
        self
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn rank(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn n_basis(&self) -> usize {
        self.basis.n_basis()
    }

    pub fn mean(&self) -> &MeanEstimate {
        &self.mean
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn fit_log(&self) -> &FitLog {
        &self.fit_log
    }

    /// `phi_l(t)` for zero-based `l`.
    pub fn eigenfunction_at(&self, l: usize, t: f64) -> Result<f64> {
        if l >= self.rank() {
            return Err(Error::InvalidArgument(format!("eigenfunction index {l} out of range for rank {}", self.rank())));
        }
        Ok(self.basis.evaluate_transformed(t)?.dot(&self.coefficients.column(l)))
    }

    /// All eigenfunctions at `t`.
    pub fn eigenfunctions_at(&self, t: f64) -> Result<DVector<f64>> {
        Ok(self.coefficients.tr_mul(&self.basis.evaluate_transformed(t)?))
    }

    /// `N x L` matrix of eigenfunction values at `times`.
    pub fn phi(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.basis.design(times)? * &self.coefficients)
    }

    /// `Phi Lambda Phi^T + sigma^2 I` at `times`.
    pub fn marginal_covariance(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let phi = self.phi(times)?;
        let mut scaled = phi.clone();
        for (j, lam) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*lam);
        }
        let mut sigma = scaled * phi.transpose();
        linalg::symmetrize(&mut sigma);
        for i in 0..times.len() {
            sigma[(i, i)] += self.noise_variance;
        }
        Ok(sigma)
    }

    /// Karhunen-Loeve reconstruction `mu(t) + sum_l xi_l phi_l(t)`.
    pub fn reconstruct(&self, scores: &SubjectScores, t: f64) -> Result<f64> {
        if scores.scores.len() != self.rank() {
            return Err(Error::InvalidArgument("score vector length differs from model rank".into()));
        }
        let phi = self.eigenfunctions_at(t)?;
        Ok(self.mean.value_at(t) + phi.iter().zip(&scores.scores).map(|(p, s)| p * s).sum::<f64>())
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<model writer>", e))?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }
}

#[cfg(test)]
pub(crate) mod tests;
