//! Likelihood-ratio tests, profile likelihood and leave-one-subject-out
//! prediction error.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{build_design, fit_ml, predict_population, Design, LmmFit, LmmSpec, Method, SubjectBlock};
use crate::data::Dataset;
use crate::{par, stats, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lrt {
    pub statistic: f64,
    pub p_value: f64,
}

/// `2 (l_full - l_null)` referred to chi-square with one degree of freedom.
/// Both fits must be ML fits on the same rows.
pub fn lrt_biomarker(full: &LmmFit, null: &LmmFit) -> Result<Lrt> {
    if full.method != Method::Ml || null.method != Method::Ml {
        return Err(Error::InvalidArgument("likelihood-ratio tests need ML fits".into()));
    }
    if full.rows != null.rows {
        return Err(Error::InvalidArgument("full and null fits use different rows".into()));
    }
    let raw = 2.0 * (full.log_likelihood - null.log_likelihood);
    if raw.is_nan() {
        return Err(Error::Numerical("likelihood-ratio statistic is undefined".into()));
    }
    if raw < -1e-6 {
        return Err(Error::Numerical(format!("negative likelihood-ratio statistic {raw:e}: a fit failed")));
    }
    let statistic = raw.max(0.0);
    let df = full.beta.len().saturating_sub(null.beta.len()).max(1) as f64;
    Ok(Lrt {
        statistic,
        p_value: stats::chi2_sf(statistic, df),
    })
}

/// Design with coefficient `k` fixed at `value`: its column moves into an
/// offset subtracted from `y`.
fn offset_design(design: &Design, k: usize, value: f64) -> Design {
    let mut out = design.clone();
    out.names.remove(k);
    out.blocks = design
        .blocks
        .iter()
        .map(|b| SubjectBlock {
            y: &b.y - b.x.column(k) * value,
            x: b.x.clone().remove_column(k),
            ..b.clone()
        })
        .collect();
    out
}

/// Profile likelihood-ratio statistic `2 (l_hat - l_p(value))` for
/// coefficient `k`; `full` must be the ML fit of `design`.
pub fn profile_lr_statistic(design: &Design, full: &LmmFit, k: usize, value: f64) -> Result<f64> {
    if k >= design.n_fixed() {
        return Err(Error::InvalidArgument(format!("no fixed effect with index {k}")));
    }
    let restricted = fit_ml(&offset_design(design, k, value), Some(full))?;
    Ok((2.0 * (full.log_likelihood - restricted.log_likelihood)).max(0.0))
}

/// Profile-likelihood confidence interval for coefficient `k`.
pub fn profile_interval(design: &Design, full: &LmmFit, k: usize, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument("confidence level must lie in (0, 1)".into()));
    }
    let q = ChiSquared::new(1.0).unwrap().inverse_cdf(level);
    let centre = full.beta[k];
    let step = if full.beta_se[k] > 0.0 { full.beta_se[k] } else { centre.abs().max(1.0) * 1e-3 };
    let stat = |b: f64| profile_lr_statistic(design, full, k, b);
    let mut ends = [0.0; 2];
    for (slot, dir) in [-1.0, 1.0].into_iter().enumerate() {
        let (mut inside, mut outside) = (centre, centre + dir * 2.0 * step);
        let mut widened = 0;
        while stat(outside)? < q {
            inside = outside;
            outside = centre + dir * (outside - centre).abs() * 2.0;
            widened += 1;
            if widened > 30 {
                return Err(Error::Numerical("profile likelihood does not reach the cutoff".into()));
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (inside + outside);
            if stat(mid)? < q {
                inside = mid;
            } else {
                outside = mid;
            }
            if (outside - inside).abs() < 1e-8 * step {
                break;
            }
        }
        ends[slot] = 0.5 * (inside + outside);
    }
    Ok((ends[0], ends[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooCv {
    pub mse: f64,
    pub n_subjects: usize,
    pub n_obs: usize,
    /// Subjects whose fold failed and were left out of the average.
    pub skipped: Vec<String>,
}

/// Refits without each subject in turn and predicts its rows at the
/// population level; the squared errors are averaged over all predicted rows.
pub fn loo_cv_design(design: &Design) -> Result<LooCv> {
    if design.n_subjects() < 2 {
        return Err(Error::InsufficientData("cross-validation needs at least two subjects".into()));
    }
    let warm = fit_ml(design, None).ok();
    let folds = par::map_range(design.n_subjects(), |i| -> Result<(f64, usize)> {
        let train = design.without_subject(i);
        let fit = fit_ml(&train, warm.as_ref())?;
        if !fit.converged {
            return Err(Error::Numerical("fold did not converge".into()));
        }
        let b = &design.blocks[i];
        let mut sse = 0.0;
        for j in 0..b.y.len() {
            let x = (b.x.ncols() == 3).then(|| b.x[(j, 2)]);
            sse += (b.y[j] - predict_population(&fit, b.times[j], x)?).powi(2);
        }
        Ok((sse, b.y.len()))
    });
    let mut total = 0.0;
    let mut rows = 0;
    let mut skipped = Vec::new();
    for (b, fold) in design.blocks.iter().zip(folds) {
        match fold {
            Ok((sse, n)) => {
                total += sse;
                rows += n;
            }
            Err(e) => {
                log::warn!("cross-validation fold without `{}` skipped: {e}", b.id);
                skipped.push(b.id.clone());
            }
        }
    }
    if rows == 0 {
        return Err(Error::Numerical("every cross-validation fold failed".into()));
    }
    Ok(LooCv {
        mse: total / rows as f64,
        n_subjects: design.n_subjects() - skipped.len(),
        n_obs: rows,
        skipped,
    })
}

pub fn loo_cv_mse(ds: &Dataset, spec: &LmmSpec) -> Result<LooCv> {
    loo_cv_design(&build_design(ds, spec)?)
}
