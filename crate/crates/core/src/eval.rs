//! Forecast accuracy: MSE, R^2 against a cohort-mean null, subgroup splits
//! and the residual-on-biomarker update.

use serde::{Deserialize, Serialize};

use crate::data::Biomarker;
use crate::stats::{Ols, Transform};
use crate::{Error, Result};

/// Months; a last visit at most this long after the previous one is "near".
pub const NEAR_GAP_MONTHS: f64 = 6.0;
/// Months; a last visit at or before this time is "early".
pub const EARLY_MONTHS: f64 = 24.0;
const BOUNDARY_TOL: f64 = 1e-9;

/// Leave-last-out forecast of one subject. Times are in months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub id: String,
    pub t_last: f64,
    pub truth: f64,
    pub prediction: f64,
    pub gap: f64,
    pub near: bool,
    pub early: bool,
}

impl ForecastResult {
    pub fn new(id: impl Into<String>, t_last: f64, truth: f64, prediction: f64, gap: f64) -> Result<Self> {
        if !(gap > 0.0) {
            return Err(Error::InvalidArgument(format!("gap to the previous visit must be positive, got {gap}")));
        }
        Ok(ForecastResult {
            id: id.into(),
            t_last,
            truth,
            prediction,
            gap,
            near: gap <= NEAR_GAP_MONTHS + BOUNDARY_TOL,
            early: t_last <= EARLY_MONTHS + BOUNDARY_TOL,
        })
    }

    pub fn error(&self) -> f64 {
        self.truth - self.prediction
    }
}

/// Mean squared difference of `(truth, prediction)` pairs.
pub fn mse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("MSE of an empty set".into()));
    }
    Ok(pairs.iter().map(|(x, p)| (x - p).powi(2)).sum::<f64>() / pairs.len() as f64)
}

/// `1 - mse_model / mse_null`; negative when the model is worse.
pub fn r_squared(mse_model: f64, mse_null: f64) -> Result<f64> {
    if !(mse_null > 0.0) {
        return Err(Error::InvalidArgument("null MSE must be positive".into()));
    }
    if !(mse_model >= 0.0) {
        return Err(Error::InvalidArgument("model MSE must be non-negative".into()));
    }
    Ok(1.0 - mse_model / mse_null)
}

/// How the null model predicts a held-out last value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullForecast {
    /// Average of every cohort member's last value.
    #[default]
    IncludeSelf,
    /// Average of the other members' last values.
    LeaveOneOut,
}

pub fn null_predictions(results: &[ForecastResult], null: NullForecast) -> Vec<f64> {
    let n = results.len() as f64;
    let total: f64 = results.iter().map(|r| r.truth).sum();
    results
        .iter()
        .map(|r| match null {
            NullForecast::IncludeSelf => total / n,
            NullForecast::LeaveOneOut if results.len() > 1 => (total - r.truth) / (n - 1.0),
            NullForecast::LeaveOneOut => f64::NAN,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupStat {
    pub count: usize,
    pub mse: Option<f64>,
}

impl SubgroupStat {
    fn of<'a>(results: impl Iterator<Item = &'a ForecastResult>) -> Self {
        let pairs: Vec<(f64, f64)> = results.map(|r| (r.truth, r.prediction)).collect();
        SubgroupStat {
            count: pairs.len(),
            mse: mse(&pairs).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResidual {
    pub id: String,
    pub residual: f64,
    pub null_prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub null_forecast: NullForecast,
    pub mse_null: f64,
    pub mse_model: f64,
    /// Absent when the null MSE is zero.
    pub r_squared: Option<f64>,
    pub near: SubgroupStat,
    pub far: SubgroupStat,
    pub early: SubgroupStat,
    pub late: SubgroupStat,
    pub near_gap_months: f64,
    pub early_months: f64,
    pub residuals: Vec<SubjectResidual>,
}

/// Model and null MSE with near/far and early/late splits.
pub fn subgroup_report(results: &[ForecastResult], null: NullForecast) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::InsufficientData("no forecasts to evaluate".into()));
    }
    let nulls = null_predictions(results, null);
    let null_pairs: Vec<(f64, f64)> = results.iter().zip(&nulls).map(|(r, p)| (r.truth, *p)).collect();
    let model_pairs: Vec<(f64, f64)> = results.iter().map(|r| (r.truth, r.prediction)).collect();
    let mse_null = mse(&null_pairs)?;
    let mse_model = mse(&model_pairs)?;
    Ok(EvalReport {
        n: results.len(),
        null_forecast: null,
        mse_null,
        mse_model,
        r_squared: r_squared(mse_model, mse_null).ok(),
        near: SubgroupStat::of(results.iter().filter(|r| r.near)),
        far: SubgroupStat::of(results.iter().filter(|r| !r.near)),
        early: SubgroupStat::of(results.iter().filter(|r| r.early)),
        late: SubgroupStat::of(results.iter().filter(|r| !r.early)),
        near_gap_months: NEAR_GAP_MONTHS,
        early_months: EARLY_MONTHS,
        residuals: results
            .iter()
            .zip(&nulls)
            .map(|(r, p)| SubjectResidual {
                id: r.id.clone(),
                residual: r.error(),
                null_prediction: *p,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdatedPrediction {
    pub id: String,
    pub z: f64,
    pub original: f64,
    pub updated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualUpdate {
    pub biomarker: Option<Biomarker>,
    pub transform: Transform,
    pub n: usize,
    /// Cohort members without a usable covariate value.
    pub excluded: usize,
    pub alpha: f64,
    pub beta: f64,
    pub beta_se: f64,
    pub p_value: f64,
    pub mse_original: f64,
    pub mse_updated: f64,
    pub mse_cv: f64,
    pub r_squared: Option<f64>,
    pub predictions: Vec<UpdatedPrediction>,
}

/// Regresses forecast residuals on the (transformed) covariate observed at
/// the forecast time and adds the fitted residual back to each prediction.
/// `z[i]` belongs to `results[i]`; missing or untransformable values are
/// excluded and counted.
pub fn residual_update(
    results: &[ForecastResult],
    z: &[Option<f64>],
    transform: Transform,
    biomarker: Option<Biomarker>,
) -> Result<ResidualUpdate> {
    if z.len() != results.len() {
        return Err(Error::InvalidArgument("one covariate value is needed per forecast".into()));
    }
    let mut used: Vec<(&ForecastResult, f64)> = Vec::new();
    for (r, zi) in results.iter().zip(z) {
        match zi.map(|v| transform.apply(v)) {
            Some(Ok(v)) if v.is_finite() => used.push((r, v)),
            Some(Err(e)) => log::warn!("subject `{}` excluded from the residual update: {e}", r.id),
            _ => {}
        }
    }
    let excluded = results.len() - used.len();
    let n = used.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("residual update needs at least 3 subjects, have {n}")));
    }
    let x: Vec<f64> = used.iter().map(|(_, v)| *v).collect();
    let y: Vec<f64> = used.iter().map(|(r, _)| r.error()).collect();
    let fit = Ols::fit(&x, &y)?;

    let predictions: Vec<UpdatedPrediction> = used
        .iter()
        .map(|(r, v)| UpdatedPrediction {
            id: r.id.clone(),
            z: *v,
            original: r.prediction,
            updated: r.prediction + fit.predict(*v),
        })
        .collect();

    let mut cv_pairs = Vec::with_capacity(n);
    for i in 0..n {
        let xs: Vec<f64> = x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
        let ys: Vec<f64> = y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
        let fold = Ols::fit(&xs, &ys)?;
        let (r, v) = used[i];
        cv_pairs.push((r.truth, r.prediction + fold.predict(v)));
    }

    let mse_original = mse(&used.iter().map(|(r, _)| (r.truth, r.prediction)).collect::<Vec<_>>())?;
    let mse_updated = mse(&used
        .iter()
        .zip(&predictions)
        .map(|((r, _), p)| (r.truth, p.updated))
        .collect::<Vec<_>>())?;
    Ok(ResidualUpdate {
        biomarker,
        transform,
        n,
        excluded,
        alpha: fit.alpha,
        beta: fit.beta,
        beta_se: fit.slope_se(),
        p_value: fit.slope_p_value(),
        mse_original,
        mse_updated,
        mse_cv: mse(&cv_pairs)?,
        r_squared: r_squared(mse_updated, mse_original).ok(),
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn result(id: &str, t_last: f64, truth: f64, prediction: f64, gap: f64) -> ForecastResult {
        ForecastResult::new(id, t_last, truth, prediction, gap).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[(1.0, 1.0), (2.0, 2.0)]).unwrap(), 0.0);
        assert_eq!(mse(&[(0.0, 1.0), (0.0, -1.0)]).unwrap(), 1.0);
        assert!(mse(&[]).is_err());
    }

    #[test]
    fn r_squared_examples() {
        assert_eq!(r_squared(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(r_squared(0.0, 5.0).unwrap(), 1.0);
        let r = r_squared(39.0, 538.0).unwrap();
        assert!((r - 0.927_509_293_680_297_4).abs() < 1e-12);
        assert_eq!(format!("{r:.2}"), "0.93");
        assert!(r_squared(1.0, 0.0).is_err());
        assert!(r_squared(10.0, 5.0).unwrap() < 0.0);
    }

    #[test]
    fn flags_at_boundaries() {
        assert!(result("a", 30.0, 0.0, 0.0, 6.0).near);
        assert!(!result("a", 30.0, 0.0, 0.0, 6.1).near);
        assert!(result("a", 24.0, 0.0, 0.0, 6.0).early);
        assert!(!result("a", 24.1, 0.0, 0.0, 6.0).early);
        assert!(ForecastResult::new("a", 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn empty_subgroup_has_no_mse() {
        let rs = vec![result("a", 12.0, 1.0, 2.0, 3.0), result("b", 18.0, 3.0, 3.0, 3.0)];
        let rep = subgroup_report(&rs, NullForecast::IncludeSelf).unwrap();
        assert_eq!(rep.far.count, 0);
        assert_eq!(rep.far.mse, None);
        assert_eq!(rep.near.count, 2);
        assert_eq!(rep.mse_null, 1.0);
        assert_eq!(rep.mse_model, 0.5);
        assert_eq!(rep.r_squared, Some(0.5));
    }

    #[test]
    fn leave_one_out_null() {
        let rs = vec![
            result("a", 12.0, 10.0, 0.0, 3.0),
            result("b", 12.0, 20.0, 0.0, 3.0),
            result("c", 12.0, 30.0, 0.0, 3.0),
        ];
        assert_eq!(null_predictions(&rs, NullForecast::LeaveOneOut), vec![25.0, 20.0, 15.0]);
        assert_eq!(null_predictions(&rs, NullForecast::IncludeSelf), vec![20.0; 3]);
    }

    #[test]
    fn perfect_forecasts_need_no_update() {
        let rs: Vec<_> = (0..5).map(|i| result(&i.to_string(), 12.0, i as f64, i as f64, 6.0)).collect();
        let z: Vec<_> = (0..5).map(|i| Some(1.0 + i as f64 * i as f64)).collect();
        let up = residual_update(&rs, &z, Transform::Identity, None).unwrap();
        assert_eq!((up.alpha, up.beta), (0.0, 0.0));
        assert_eq!(up.p_value, 1.0);
        for (p, r) in up.predictions.iter().zip(&rs) {
            assert_eq!(p.updated, r.prediction);
        }
    }

    #[test]
    fn update_uses_log_and_counts_exclusions() {
        let rs: Vec<_> = (0..6)
            .map(|i| result(&i.to_string(), 12.0, 2.0 * (i as f64 + 1.0).ln(), 0.0, 6.0))
            .collect();
        let mut z: Vec<_> = (0..6).map(|i| Some(i as f64 + 1.0)).collect();
        z[5] = None;
        let up = residual_update(&rs, &z, Transform::Log, Some(Biomarker::Nt)).unwrap();
        assert_eq!((up.n, up.excluded), (5, 1));
        assert!((up.beta - 2.0).abs() < 1e-12 && up.alpha.abs() < 1e-12);
        assert!(up.mse_updated < 1e-20);
        let constant = vec![Some(3.0); 6];
        assert!(residual_update(&rs, &constant, Transform::Identity, None).is_err());
    }

    proptest! {
        #[test]
        fn report_is_consistent(
            rows in prop::collection::vec((1.0f64..60.0, -50.0f64..50.0, -50.0f64..50.0, 0.5f64..20.0), 1..40)
        ) {
            let rs: Vec<_> = rows.iter().enumerate()
                .map(|(i, (t, x, p, g))| result(&i.to_string(), *t, *x, *p, *g)).collect();
            let rep = subgroup_report(&rs, NullForecast::IncludeSelf).unwrap();
            prop_assert_eq!(rep.near.count + rep.far.count, rs.len());
            prop_assert_eq!(rep.early.count + rep.late.count, rs.len());
            if let Some(r2) = rep.r_squared {
                prop_assert!((r2 - (1.0 - rep.mse_model / rep.mse_null)).abs() < 1e-12);
            }
        }

        #[test]
        fn mse_scales_quadratically(errs in prop::collection::vec(-10.0f64..10.0, 1..50), c in 0.1f64..10.0) {
            let a: Vec<_> = errs.iter().map(|e| (0.0, *e)).collect();
            let b: Vec<_> = errs.iter().map(|e| (0.0, c * e)).collect();
            let (ma, mb) = (mse(&a).unwrap(), mse(&b).unwrap());
            prop_assert!((mb - c * c * ma).abs() <= 1e-10 * mb.max(1.0));
            let mut rev = a.clone();
            rev.reverse();
            prop_assert!((mse(&rev).unwrap() - ma).abs() <= 1e-12 * ma.max(1.0));
        }

        #[test]
        fn update_never_increases_in_sample_mse(
            rows in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, 1.0f64..100.0), 3..40)
        ) {
            let rs: Vec<_> = rows.iter().enumerate()
                .map(|(i, (x, p, _))| result(&i.to_string(), 12.0, *x, *p, 6.0)).collect();
            let z: Vec<_> = rows.iter().map(|r| Some(r.2)).collect();
            if let Ok(up) = residual_update(&rs, &z, Transform::Identity, None) {
                prop_assert!(up.mse_updated <= up.mse_original * (1.0 + 1e-12) + 1e-12);
                prop_assert!((0.0..=1.0).contains(&up.p_value));
            }
        }
    }
}
