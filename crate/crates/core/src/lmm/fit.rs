//! Maximum likelihood and REML fits with `beta` profiled out by GLS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Design;
use crate::optim::{self, Problem, Settings};
use crate::{linalg, par, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Ml,
    Reml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub method: Method,
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub beta_se: Vec<f64>,
    /// Row-major random-effects covariance.
    pub sigma: [[f64; 2]; 2],
    pub residual_variance: f64,
    /// Maximised ML log-likelihood (for ML fits) or ML log-likelihood at
    /// the REML estimates.
    pub log_likelihood: f64,
    /// REML log-likelihood at the fitted variance components.
    pub reml_log_likelihood: f64,
    pub n_subjects: usize,
    pub n_obs: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Random-effects covariance numerically singular.
    pub boundary: bool,
    #[serde(skip)]
    pub(crate) rows: Vec<(String, f64)>,
    #[serde(skip)]
    pub(crate) theta: Vec<f64>,
}

/// `(Sigma, sigma_e^2)` from `[a, b, c, s]` with
/// `L = [[e^a, 0], [b, e^c]]`, `Sigma = L L^T`, `sigma_e^2 = e^s`.
fn unpack(theta: &[f64]) -> (DMatrix<f64>, f64, [f64; 3]) {
    let (l00, l10, l11) = (theta[0].exp(), theta[1], theta[2].exp());
    let sigma = DMatrix::from_row_slice(2, 2, &[l00 * l00, l00 * l10, l00 * l10, l10 * l10 + l11 * l11]);
    (sigma, theta[3].exp(), [l00, l10, l11])
}

struct Profiled {
    beta: DVector<f64>,
    /// `(X^T V^{-1} X)^{-1}`.
    cov_beta: DMatrix<f64>,
    ml: f64,
    reml: f64,
}

struct SubjectParts {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    vinv_x: DMatrix<f64>,
    vinv_y: DVector<f64>,
    log_det: f64,
}

fn subject_parts(design: &Design, sigma: &DMatrix<f64>, se2: f64) -> Result<Vec<SubjectParts>> {
    par::map(&design.blocks, |b| {
        let mut v = &b.z * sigma * b.z.transpose();
        linalg::symmetrize(&mut v);
        for i in 0..v.nrows() {
            v[(i, i)] += se2;
        }
        let chol = linalg::cholesky_with_jitter(v).ok_or_else(|| Error::NotPositiveDefinite { subject: b.id.clone() })?;
        Ok(SubjectParts {
            vinv_x: chol.solve(&b.x),
            vinv_y: chol.solve(&b.y),
            log_det: linalg::log_det(&chol),
            chol,
        })
    })
    .into_iter()
    .collect()
}

fn profile(design: &Design, parts: &[SubjectParts]) -> Result<Profiled> {
    let p = design.n_fixed();
    let mut a = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let mut log_det = 0.0;
    for (b, s) in design.blocks.iter().zip(parts) {
        a += b.x.tr_mul(&s.vinv_x);
        rhs += b.x.tr_mul(&s.vinv_y);
        log_det += s.log_det;
    }
    linalg::symmetrize(&mut a);
    let chol_a = a.clone().cholesky().ok_or_else(|| Error::Numerical("fixed-effect design is rank deficient".into()))?;
    let beta = chol_a.solve(&rhs);
    let mut quad = 0.0;
    for (b, s) in design.blocks.iter().zip(parts) {
        let r = &b.y - &b.x * &beta;
        quad += r.dot(&s.chol.solve(&r));
    }
    let n = design.n_obs() as f64;
    let ml = -0.5 * (log_det + quad + n * LN_2PI);
    let reml = ml - 0.5 * linalg::log_det(&chol_a) + 0.5 * p as f64 * LN_2PI;
    Ok(Profiled {
        beta,
        cov_beta: chol_a.inverse(),
        ml,
        reml,
    })
}

struct Objective<'a> {
    design: &'a Design,
    method: Method,
}

impl Problem for Objective<'_> {
    fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (sigma, se2, [l00, l10, l11]) = unpack(theta);
        if !se2.is_finite() || se2 == 0.0 || !sigma.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("variance components out of range".into()));
        }
        let parts = subject_parts(self.design, &sigma, se2)?;
        let prof = profile(self.design, &parts)?;
        let value = match self.method {
            Method::Ml => -prof.ml,
            Method::Reml => -prof.reml,
        };

        // d(-loglik)/dV_i = G_i = (V^{-1} - a a^T) / 2 [- V^{-1} X A^{-1} X^T V^{-1} / 2].
        let mut h = DMatrix::zeros(2, 2);
        let mut d_se2 = 0.0;
        for (b, s) in self.design.blocks.iter().zip(&parts) {
            let r = &b.y - &b.x * &prof.beta;
            let alpha = s.chol.solve(&r);
            let mut g = s.chol.inverse();
            g.ger(-1.0, &alpha, &alpha, 1.0);
            if self.method == Method::Reml {
                g -= &s.vinv_x * &prof.cov_beta * s.vinv_x.transpose();
            }
            g.scale_mut(0.5);
            h += b.z.tr_mul(&(&g * &b.z));
            d_se2 += g.trace();
        }
        // d/dL of tr(H L L^T) = 2 H L.
        let l = DMatrix::from_row_slice(2, 2, &[l00, 0.0, l10, l11]);
        let dl = (&h + h.transpose()) * &l;
        let grad = vec![dl[(0, 0)] * l00, dl[(1, 0)], dl[(1, 1)] * l11, d_se2 * se2];
        Ok((value, grad))
    }
}

/// Full ML and REML log-likelihood of given parameters, summed per subject.
pub fn marginal_log_likelihood(design: &Design, beta: &[f64], sigma: [[f64; 2]; 2], residual_variance: f64) -> Result<f64> {
    let s = DMatrix::from_row_slice(2, 2, &[sigma[0][0], sigma[0][1], sigma[1][0], sigma[1][1]]);
    let beta = DVector::from_column_slice(beta);
    let parts = subject_parts(design, &s, residual_variance)?;
    let mut total = 0.0;
    for (b, p) in design.blocks.iter().zip(&parts) {
        let r = &b.y - &b.x * &beta;
        total += -0.5 * (p.log_det + r.dot(&p.chol.solve(&r)) + r.len() as f64 * LN_2PI);
    }
    Ok(total)
}

/// GLS estimate of `beta` for fixed variance components.
#[cfg(test)]
pub(crate) fn gls_beta(design: &Design, sigma: [[f64; 2]; 2], residual_variance: f64) -> Result<Vec<f64>> {
    let s = DMatrix::from_row_slice(2, 2, &[sigma[0][0], sigma[0][1], sigma[1][0], sigma[1][1]]);
    let parts = subject_parts(design, &s, residual_variance)?;
    Ok(profile(design, &parts)?.beta.iter().copied().collect())
}

pub(crate) fn ols(design: &Design) -> Result<(DVector<f64>, f64)> {
    let p = design.n_fixed();
    let mut a = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for b in &design.blocks {
        a += b.x.tr_mul(&b.x);
        rhs += b.x.tr_mul(&b.y);
    }
    let beta = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("fixed-effect design is rank deficient".into()))?
        .solve(&rhs);
    let sse: f64 = design.blocks.iter().map(|b| (&b.y - &b.x * &beta).norm_squared()).sum();
    Ok((beta, sse))
}

fn finish(design: &Design, method: Method, theta: Vec<f64>, iterations: usize, converged: bool) -> Result<LmmFit> {
    let (sigma, se2, _) = unpack(&theta);
    let parts = subject_parts(design, &sigma, se2)?;
    let prof = profile(design, &parts)?;
    let eig_min = sigma.symmetric_eigenvalues().min();
    Ok(LmmFit {
        method,
        names: design.names.clone(),
        beta: prof.beta.iter().copied().collect(),
        beta_se: prof.cov_beta.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect(),
        sigma: [[sigma[(0, 0)], sigma[(0, 1)]], [sigma[(1, 0)], sigma[(1, 1)]]],
        residual_variance: se2,
        log_likelihood: prof.ml,
        reml_log_likelihood: prof.reml,
        n_subjects: design.n_subjects(),
        n_obs: design.n_obs(),
        iterations,
        converged,
        boundary: eig_min < 1e-6 * se2,
        rows: design.rows(),
        theta,
    })
}

/// Fits by ML or REML. A `start` fit of the same shape warm-starts the
/// variance components.
pub fn fit(design: &Design, method: Method, start: Option<&LmmFit>) -> Result<LmmFit> {
    let p = design.n_fixed();
    if design.n_subjects() == 0 || design.n_obs() < p {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot identify {p} fixed effects and variance components",
            design.n_obs()
        )));
    }
    let (beta, sse) = ols(design)?;
    let scale: f64 = design.blocks.iter().map(|b| b.y.norm_squared()).sum::<f64>().max(f64::MIN_POSITIVE);
    if sse <= 1e-24 * scale {
        // The fixed effects fit every row exactly: no variance to estimate.
        return Ok(LmmFit {
            method,
            names: design.names.clone(),
            beta: beta.iter().copied().collect(),
            beta_se: vec![0.0; p],
            sigma: [[0.0; 2]; 2],
            residual_variance: 0.0,
            log_likelihood: f64::INFINITY,
            reml_log_likelihood: f64::INFINITY,
            n_subjects: design.n_subjects(),
            n_obs: design.n_obs(),
            iterations: 0,
            converged: true,
            boundary: true,
            rows: design.rows(),
            theta: Vec::new(),
        });
    }
    if design.n_obs() == p {
        return Err(Error::InsufficientData(format!(
            "{p} rows leave nothing for the variance components"
        )));
    }

    let theta0 = match start {
        Some(f) if f.theta.len() == 4 => f.theta.clone(),
        _ => {
            let s2 = sse / (design.n_obs() - p).max(1) as f64;
            let half = (0.5 * s2).sqrt();
            let t_spread = design
                .blocks
                .iter()
                .flat_map(|b| b.times.iter().copied())
                .fold(0.0_f64, |m, t| m.max(t.abs()))
                .max(1.0);
            vec![half.ln(), 0.0, (half / t_spread).ln(), (0.5 * s2).ln()]
        }
    };
    let problem = Objective { design, method };
    let out = optim::minimize(&problem, theta0, Settings::default())?;
    if !out.converged {
        log::warn!("mixed model fit did not converge in {} iterations", out.iterations);
    }
    finish(design, method, out.x, out.iterations, out.converged)
}

pub fn fit_ml(design: &Design, start: Option<&LmmFit>) -> Result<LmmFit> {
    fit(design, Method::Ml, start)
}

pub fn fit_reml(design: &Design, start: Option<&LmmFit>) -> Result<LmmFit> {
    fit(design, Method::Reml, start)
}
