//! Linear mixed model with a random intercept and slope in time:
//! `y_ij = b0 + b1 t_ij + b2 x_ij + g0_i + g1_i t_ij + e_ij`, with time in
//! months and `x` the (transformed) biomarker.

mod cv;
mod fit;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use cv::{loo_cv_design, loo_cv_mse, lrt_biomarker, profile_interval, profile_lr_statistic, LooCv, Lrt};
pub use fit::{fit, fit_ml, fit_reml, marginal_log_likelihood, LmmFit, Method};

use crate::data::{Biomarker, Dataset, Outcome};
use crate::stats::Transform;
use crate::{Error, Result};

/// Which model to fit and how visits map onto the design grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmSpec {
    pub outcome: Outcome,
    /// `None` gives the time-only null model.
    pub biomarker: Option<Biomarker>,
    pub transform: Transform,
    /// Allowed visit times in months.
    pub times: Vec<f64>,
    /// Visits within this many months of a grid time are snapped onto it.
    pub tolerance: f64,
}

impl LmmSpec {
    pub fn new(outcome: Outcome, biomarker: Option<Biomarker>) -> Self {
        LmmSpec {
            outcome,
            biomarker,
            transform: Transform::Log,
            times: vec![0.0, 6.0, 12.0],
            tolerance: 1.0,
        }
    }
}

/// Rows of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectBlock {
    pub id: String,
    /// Snapped visit times in months.
    pub times: Vec<f64>,
    /// Fixed-effect rows `(1, t[, x])`.
    pub x: DMatrix<f64>,
    /// Random-effect rows `(1, t)`.
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub spec: LmmSpec,
    pub names: Vec<String>,
    pub blocks: Vec<SubjectBlock>,
    /// Rows dropped because the transform could not be applied.
    pub dropped_rows: usize,
}

impl Design {
    pub fn n_fixed(&self) -> usize {
        self.names.len()
    }

    pub fn n_obs(&self) -> usize {
        self.blocks.iter().map(|b| b.y.len()).sum()
    }

    pub fn n_subjects(&self) -> usize {
        self.blocks.len()
    }

    /// `(subject, time)` of every row, in order.
    pub fn rows(&self) -> Vec<(String, f64)> {
        self.blocks
            .iter()
            .flat_map(|b| b.times.iter().map(move |t| (b.id.clone(), *t)))
            .collect()
    }

    /// Same rows without the biomarker column.
    pub fn without_biomarker(&self) -> Design {
        if self.n_fixed() == 2 {
            return self.clone();
        }
        Design {
            spec: LmmSpec {
                biomarker: None,
                ..self.spec.clone()
            },
            names: self.names[..2].to_vec(),
            blocks: self
                .blocks
                .iter()
                .map(|b| SubjectBlock {
                    x: b.x.columns(0, 2).into_owned(),
                    ..b.clone()
                })
                .collect(),
            dropped_rows: self.dropped_rows,
        }
    }

    /// Design without the listed subjects.
    pub fn without_subject(&self, index: usize) -> Design {
        let mut out = self.clone();
        out.blocks.remove(index);
        out
    }
}

/// Keeps visits that snap onto the time grid with the outcome (and the
/// biomarker, if any) present; subjects need two such visits. When two
/// visits snap onto the same grid time the closer one is kept.
pub fn build_design(ds: &Dataset, spec: &LmmSpec) -> Result<Design> {
    if spec.times.is_empty() || !(spec.tolerance >= 0.0) {
        return Err(Error::InvalidArgument("design needs grid times and a non-negative tolerance".into()));
    }
    let months = ds.to_month_scale();
    let mut blocks = Vec::new();
    let mut dropped = 0;
    for s in &months.subjects {
        // Best visit per grid time: (distance, y, x).
        let mut slots: Vec<Option<(f64, f64, Option<f64>)>> = vec![None; spec.times.len()];
        for o in &s.observations {
            let Some((slot, dist)) = spec
                .times
                .iter()
                .enumerate()
                .map(|(k, g)| (k, (o.time - g).abs()))
                .filter(|(_, d)| *d <= spec.tolerance + 1e-9)
                .min_by(|a, b| a.1.total_cmp(&b.1))
            else {
                continue;
            };
            let Some(y) = o.outcome(spec.outcome) else { continue };
            let x = match spec.biomarker {
                None => None,
                Some(b) => {
                    let Some(raw) = o.biomarker(b) else { continue };
                    match spec.transform.apply(raw) {
                        Ok(v) => Some(v),
                        Err(e) => {
                            log::warn!("subject `{}` month {}: row dropped ({e})", s.id, o.time);
                            dropped += 1;
                            continue;
                        }
                    }
                }
            };
            if slots[slot].is_none_or(|(d, _, _)| dist < d) {
                slots[slot] = Some((dist, y, x));
            }
        }
        let rows: Vec<(f64, f64, Option<f64>)> = spec
            .times
            .iter()
            .zip(&slots)
            .filter_map(|(t, slot)| slot.map(|(_, y, x)| (*t, y, x)))
            .collect();
        if rows.len() < 2 {
            continue;
        }
        let p = if spec.biomarker.is_some() { 3 } else { 2 };
        let n = rows.len();
        let x = DMatrix::from_fn(n, p, |i, j| match j {
            0 => 1.0,
            1 => rows[i].0,
            _ => rows[i].2.unwrap(),
        });
        let z = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { rows[i].0 });
        blocks.push(SubjectBlock {
            id: s.id.clone(),
            times: rows.iter().map(|r| r.0).collect(),
            x,
            z,
            y: DVector::from_iterator(n, rows.iter().map(|r| r.1)),
        });
    }
    if blocks.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no subject has two usable {} visits on the design grid",
            spec.outcome
        )));
    }
    let mut names = vec!["intercept".to_string(), "time".to_string()];
    if let Some(b) = spec.biomarker {
        names.push(b.name().to_string());
    }
    Ok(Design {
        spec: spec.clone(),
        names,
        blocks,
        dropped_rows: dropped,
    })
}

/// `b0 + b1 t (+ b2 x)` with the random effects at their mean of zero.
pub fn predict_population(fit: &LmmFit, t: f64, x: Option<f64>) -> Result<f64> {
    let b = &fit.beta;
    match (b.len(), x) {
        (2, _) => Ok(b[0] + b[1] * t),
        (3, Some(x)) => Ok(b[0] + b[1] * t + b[2] * x),
        (3, None) => Err(Error::InvalidArgument("biomarker model needs a biomarker value".into())),
        _ => Err(Error::InvalidArgument("unexpected number of fixed effects".into())),
    }
}

#[cfg(test)]
mod tests;
