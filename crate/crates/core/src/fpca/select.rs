//! Cross-validated choice of the rank `L` and basis size `M`.

use serde::{Deserialize, Serialize};

use super::{curves, fit_mean, fit_with_mean, mean_bandwidth, nll_curves, Curve, FpcaModel, FpcaSettings};
use crate::data::{Dataset, Outcome};
use crate::{par, Error, Result};

/// Grouping of subjects into held-out folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Folds {
    /// One fold per subject.
    #[default]
    LeaveOneOut,
    /// Subject `i` goes to fold `i mod k`.
    KFold(usize),
}

impl Folds {
    fn assign(self, n: usize) -> Vec<Vec<usize>> {
        let k = match self {
            Folds::LeaveOneOut => n,
            Folds::KFold(k) => k.clamp(1, n),
        };
        let mut folds = vec![Vec::new(); k];
        for i in 0..n {
            folds[i % k].push(i);
        }
        folds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub l: usize,
    pub m: usize,
    /// Summed held-out negative log-likelihood; absent when some fold failed.
    pub score: Option<f64>,
    pub failed_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostic {
    pub fold: usize,
    pub held_out: Vec<String>,
    /// Held-out score per grid pair, in the order of the table.
    pub scores: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelectionResult {
    pub l: usize,
    pub m: usize,
    pub bandwidth: f64,
    pub table: Vec<CvEntry>,
    pub folds: Vec<FoldDiagnostic>,
}

/// Scores every `(L, M)` with `L <= M` by the held-out marginal negative
/// log-likelihood, summed over folds. Each fold refits the mean (at the
/// full-data bandwidth) and the covariance without its subjects, starting
/// from the full-data fit of the same pair. Ties go to the smaller `L`,
/// then the smaller `M`.
pub fn select_model(
    ds: &Dataset,
    outcome: Outcome,
    l_grid: &[usize],
    m_grid: &[usize],
    folds: Folds,
    settings: &FpcaSettings,
) -> Result<ModelSelectionResult> {
    settings.validate()?;
    select_curves(&curves(ds, outcome)?, l_grid, m_grid, folds, settings)
}

pub(crate) fn select_curves(
    curves: &[Curve],
    l_grid: &[usize],
    m_grid: &[usize],
    folds: Folds,
    settings: &FpcaSettings,
) -> Result<ModelSelectionResult> {
    let mut pairs: Vec<(usize, usize)> = l_grid
        .iter()
        .flat_map(|&l| m_grid.iter().map(move |&m| (l, m)))
        .filter(|(l, m)| *l >= 1 && l <= m)
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("model grid has no pair with 1 <= L <= M".into()));
    }
    if let Folds::KFold(k) = folds {
        if k < 2 {
            return Err(Error::InvalidArgument("K-fold selection needs K >= 2".into()));
        }
    }
    if curves.len() < 3 {
        return Err(Error::InsufficientData("model selection needs at least three subjects".into()));
    }

    let bandwidth = mean_bandwidth(curves, settings)?;
    let mean = fit_mean(curves, bandwidth, settings)?;
    let full: Vec<Option<FpcaModel>> = par::map(&pairs, |&(l, m)| {
        fit_with_mean(curves, mean.clone(), l, m, None, settings)
            .map_err(|e| log::warn!("full-data fit for (L, M) = ({l}, {m}) failed: {e}"))
            .ok()
    });

    let assignment = folds.assign(curves.len());
    let fold_results: Vec<Result<FoldDiagnostic>> = par::map_range(assignment.len(), |f| {
        let held: Vec<Curve> = assignment[f].iter().map(|&i| curves[i].clone()).collect();
        let train: Vec<Curve> = curves
            .iter()
            .enumerate()
            .filter(|(i, _)| !assignment[f].contains(i))
            .map(|(_, c)| c.clone())
            .collect();
        let fold_mean = fit_mean(&train, bandwidth, settings).ok();
        let scores: Vec<Option<f64>> = pairs
            .iter()
            .zip(&full)
            .map(|(&(l, m), warm)| {
                let warm = warm.as_ref()?;
                let model = fit_with_mean(&train, fold_mean.clone()?, l, m, Some(warm), settings).ok()?;
                nll_curves(&model, &held).ok().filter(|v| v.is_finite())
            })
            .collect();
        let held_out: Vec<String> = held.iter().map(|c| c.id.clone()).collect();
        if scores.iter().all(Option::is_none) {
            return Err(Error::Numerical(format!(
                "every candidate failed on the fold holding out {}",
                held_out.join(", ")
            )));
        }
        Ok(FoldDiagnostic {
            fold: f,
            held_out,
            scores,
        })
    });
    let fold_diags = fold_results.into_iter().collect::<Result<Vec<_>>>()?;

    let table: Vec<CvEntry> = pairs
        .iter()
        .enumerate()
        .map(|(p, &(l, m))| {
            let failed = fold_diags.iter().filter(|d| d.scores[p].is_none()).count();
            let score = (failed == 0).then(|| fold_diags.iter().map(|d| d.scores[p].unwrap()).sum());
            CvEntry {
                l,
                m,
                score,
                failed_folds: failed,
            }
        })
        .collect();

    let mut best: Option<&CvEntry> = None;
    for entry in &table {
        let Some(score) = entry.score else { continue };
        match best {
            Some(b) => {
                let bs = b.score.unwrap();
                if score < bs - 1e-10 * bs.abs().max(1.0) {
                    best = Some(entry);
                }
            }
            None => best = Some(entry),
        }
    }
    let best = best.ok_or_else(|| Error::Numerical("no (L, M) pair could be fitted on every fold".into()))?;
    Ok(ModelSelectionResult {
        l: best.l,
        m: best.m,
        bandwidth,
        table,
        folds: fold_diags,
    })
}
