//! Leave-last-out forecasting of each subject's final observation.

use serde::{Deserialize, Serialize};

use super::{curves, fit_mean, fit_with_mean, mean_bandwidth, pace_scores, select_curves, Curve, Folds, FpcaSettings};
use crate::data::{Dataset, Outcome};
use crate::eval::ForecastResult;
use crate::{par, Error, Result};

/// Where each fold's `(L, M)` comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum RankChoice {
    /// Use the same pair in every fold.
    Fixed { l: usize, m: usize },
    /// Rerun model selection on every reduced dataset.
    Reselect {
        l_grid: Vec<usize>,
        m_grid: Vec<usize>,
        folds: Folds,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub rank: RankChoice,
    pub settings: FpcaSettings,
    /// Subjects need this many observations of the outcome to be forecast.
    pub min_observations: usize,
}

impl ForecastConfig {
    pub fn fixed(l: usize, m: usize) -> Self {
        ForecastConfig {
            rank: RankChoice::Fixed { l, m },
            settings: FpcaSettings::default(),
            min_observations: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastFailure {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRun {
    pub outcome: Outcome,
    pub cohort_size: usize,
    pub results: Vec<ForecastResult>,
    pub failures: Vec<ForecastFailure>,
}

fn forecast_one(
    all: &[Curve],
    idx: usize,
    months: (f64, f64),
    truth: f64,
    config: &ForecastConfig,
) -> Result<ForecastResult> {
    // The held-out value is dropped before anything is fitted.
    let mut reduced = all.to_vec();
    let held_t = reduced[idx].times.pop().expect("cohort curves are non-empty");
    reduced[idx].values.pop();

    let settings = &config.settings;
    let h = mean_bandwidth(&reduced, settings)?;
    let mean = fit_mean(&reduced, h, settings)?;
    let (l, m) = match &config.rank {
        RankChoice::Fixed { l, m } => (*l, *m),
        RankChoice::Reselect { l_grid, m_grid, folds } => {
            let sel = select_curves(&reduced, l_grid, m_grid, *folds, settings)?;
            (sel.l, sel.m)
        }
    };
    let model = fit_with_mean(&reduced, mean, l, m, None, settings)?;
    let scores = pace_scores(&model, &reduced[idx])?;
    let prediction = model.reconstruct(&scores, held_t)?;
    let (t_prev, t_last) = months;
    ForecastResult::new(all[idx].id.clone(), t_last, truth, prediction, t_last - t_prev)
}

/// For every subject with at least `min_observations` values, removes its
/// last value, refits the mean and covariance on the remaining data of all
/// subjects and predicts the removed value from the subject's own history.
pub fn forecast_last(ds: &Dataset, outcome: Outcome, config: &ForecastConfig) -> Result<ForecastRun> {
    config.settings.validate()?;
    if config.min_observations < 2 {
        return Err(Error::InvalidArgument("forecasting needs at least two observations per subject".into()));
    }
    let all = curves(ds, outcome)?;
    let months = ds.to_month_scale();
    let cohort: Vec<(usize, (f64, f64))> = all
        .iter()
        .enumerate()
        .filter(|(_, c)| c.len() >= config.min_observations)
        .map(|(i, c)| {
            let record = months.subject(&c.id).expect("curve ids come from the dataset");
            let t: Vec<f64> = record.series(outcome).map(|(t, _)| t).collect();
            (i, (t[t.len() - 2], t[t.len() - 1]))
        })
        .collect();
    if cohort.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no subject has {} or more {outcome} observations",
            config.min_observations
        )));
    }

    let outcomes = par::map(&cohort, |&(i, span)| {
        let truth = *all[i].values.last().unwrap();
        forecast_one(&all, i, span, truth, config)
    });
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for ((i, _), out) in cohort.iter().zip(outcomes) {
        match out {
            Ok(r) => results.push(r),
            Err(e) => {
                log::warn!("forecast for subject `{}` failed: {e}", all[*i].id);
                failures.push(ForecastFailure {
                    id: all[*i].id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(ForecastRun {
        outcome,
        cohort_size: cohort.len(),
        results,
        failures,
    })
}
