//! One function per subcommand.

use serde::{Deserialize, Serialize};

use sfpca::data::{apply_cleaning, describe_baseline, write_csv, Biomarker, Dataset, Outcome, ProvenanceEntry, Variable};
use sfpca::eval::{residual_update as regress_residuals, subgroup_report, EvalReport, ResidualUpdate};
use sfpca::fpca::{
    curves, fit_reml, forecast_last, pace_scores, select_model, ForecastConfig, ForecastRun, ModelSelectionResult,
    RankChoice,
};
use sfpca::lmm::{self, build_design, LmmFit, LmmSpec, LooCv, Lrt};
use sfpca::simulate::{generate, SimSidecar};
use sfpca::smoothing::uniform_grid;

use crate::config::ForecastRank;
use crate::run::Context;
use crate::CliError;

pub fn simulate(ctx: &mut Context) -> Result<(), CliError> {
    let seed = ctx.config.seed.expect("checked before the run directory is opened");
    let mut truth = ctx.config.simulate.clone();
    truth.seed = seed;
    truth.validate().map_err(|e| CliError::Config(format!("simulate: {e}")))?;
    let (ds, subjects) = generate(&truth)?;
    let mut buf = Vec::new();
    write_csv(&ds, &ctx.config.columns, &mut buf)?;
    ctx.write("simulated.csv", buf)?;
    ctx.write_json("truth.json", &SimSidecar { truth, subjects })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProvenanceStep {
    pub step: String,
    pub patients_before: usize,
    pub observations_before: usize,
    pub patients_removed: usize,
    pub observations_removed: usize,
    pub patients_after: usize,
    pub observations_after: usize,
}

impl From<&ProvenanceEntry> for ProvenanceStep {
    fn from(e: &ProvenanceEntry) -> Self {
        ProvenanceStep {
            step: e.step.clone(),
            patients_before: e.patients_before,
            observations_before: e.observations_before,
            patients_removed: e.patients_before - e.patients_after,
            observations_removed: e.observations_before - e.observations_after,
            patients_after: e.patients_after,
            observations_after: e.observations_after,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub steps: Vec<ProvenanceStep>,
    pub patients: usize,
    pub observations: usize,
}

pub fn clean(ctx: &mut Context) -> Result<(), CliError> {
    let raw = ctx.raw_dataset()?;
    let cleaned = apply_cleaning(&raw, &ctx.config.cleaning)?;
    let mut buf = Vec::new();
    write_csv(&cleaned, &ctx.config.columns, &mut buf)?;
    ctx.write("cleaned.csv", buf)?;
    let provenance = Provenance {
        steps: cleaned.provenance.iter().map(ProvenanceStep::from).collect(),
        patients: cleaned.n_subjects(),
        observations: cleaned.n_observations(),
    };
    ctx.write_json("provenance.json", &provenance)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn describe(ctx: &mut Context) -> Result<(), CliError> {
    let ds = ctx.analysis_dataset()?;
    let summary = describe_baseline(&ds);
    ctx.write_json("baseline.json", &summary)?;
    ctx.write_csv("baseline.csv", |w| {
        let mut header = vec!["variable".to_string(), "count".into(), "mean".into(), "variance".into()];
        header.extend(summary.variables.iter().map(|v| format!("cor_{v}")));
        w.write_record(&header)?;
        for (i, v) in summary.variables.iter().enumerate() {
            let mut row = vec![v.to_string(), summary.count[i].to_string(), opt(summary.mean[i]), opt(summary.variance[i])];
            row.extend(summary.correlation[i].iter().map(|c| opt(*c)));
            w.write_record(&row)?;
        }
        Ok(())
    })
}

fn selection(ctx: &Context, ds: &Dataset, outcome: Outcome) -> Result<ModelSelectionResult, CliError> {
    let f = &ctx.config.fpca;
    select_model(ds, outcome, &f.l_grid, &f.m_grid, f.folds, &f.settings).map_err(|e| CliError::from(e).context(outcome.name()))
}

pub fn fpca_fit(ctx: &mut Context) -> Result<(), CliError> {
    let ds = ctx.analysis_dataset()?;
    let f = ctx.config.fpca.clone();
    let grid = uniform_grid(f.export_grid);
    for &outcome in &f.outcomes {
        let name = outcome.name();
        let sel = selection(ctx, &ds, outcome)?;
        let model = fit_reml(&ds, outcome, sel.l, sel.m, None, &f.settings).map_err(|e| CliError::from(e).context(name))?;
        let mut buf = Vec::new();
        model.write_json(&mut buf)?;
        ctx.write(&format!("fpca_model_{name}.json"), buf)?;
        ctx.write_json(&format!("model_selection_{name}.json"), &sel)?;

        let horizon = ds.horizon;
        ctx.write_csv(&format!("mean_{name}.csv"), |w| {
            w.write_record(["month", "value"])?;
            for &t in &grid {
                w.write_record([(t * horizon).to_string(), model.mean().value_at(t).to_string()])?;
            }
            Ok(())
        })?;

        let mut phis = Vec::with_capacity(grid.len());
        for &t in &grid {
            phis.push(model.eigenfunctions_at(t)?);
        }
        ctx.write_csv(&format!("eigenfunctions_{name}.csv"), |w| {
            let mut header = vec!["t".to_string()];
            header.extend((1..=model.rank()).map(|l| format!("phi{l}")));
            w.write_record(&header)?;
            for (t, phi) in grid.iter().zip(&phis) {
                let mut row = vec![t.to_string()];
                row.extend(phi.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
            Ok(())
        })?;

        let mut rows = Vec::new();
        let mut scores = Vec::new();
        for c in curves(&ds, outcome)? {
            let s = pace_scores(&model, &c).map_err(|e| CliError::from(e).context(&c.id))?;
            for &t in &grid {
                rows.push([c.id.clone(), (t * horizon).to_string(), model.reconstruct(&s, t)?.to_string()]);
            }
            scores.push(s);
        }
        ctx.write_csv(&format!("trajectories_{name}.csv"), |w| {
            w.write_record(["id", "month", "value"])?;
            rows.iter().try_for_each(|r| w.write_record(r))
        })?;
        ctx.write_json(&format!("scores_{name}.json"), &scores)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ForecastEval {
    pub outcome: Outcome,
    pub rank: RankChoice,
    pub run: ForecastRun,
    pub report: EvalReport,
}

pub fn fpca_forecast(ctx: &mut Context) -> Result<(), CliError> {
    let ds = ctx.analysis_dataset()?;
    let f = ctx.config.fpca.clone();
    let section = ctx.config.forecast.clone();
    for &outcome in &f.outcomes {
        let name = outcome.name();
        let rank = match section.rank {
            ForecastRank::Fixed => RankChoice::Fixed {
                l: section.l,
                m: section.m,
            },
            ForecastRank::Reselect => RankChoice::Reselect {
                l_grid: f.l_grid.clone(),
                m_grid: f.m_grid.clone(),
                folds: f.folds,
            },
            ForecastRank::Selected => {
                let file = format!("model_selection_{name}.json");
                let sel = match ctx.read_artifact::<ModelSelectionResult>(&file)? {
                    Some(s) => s,
                    None => {
                        log::info!("{file} not found; selecting (L, M) on the full data");
                        selection(ctx, &ds, outcome)?
                    }
                };
                RankChoice::Fixed { l: sel.l, m: sel.m }
            }
        };
        let config = ForecastConfig {
            rank: rank.clone(),
            settings: f.settings.clone(),
            min_observations: section.min_observations,
        };
        let run = forecast_last(&ds, outcome, &config).map_err(|e| CliError::from(e).context(name))?;
        if run.results.is_empty() {
            return Err(CliError::Numerical(format!("{name}: every forecast failed")));
        }
        let report = subgroup_report(&run.results, ctx.config.eval.null_forecast)?;
        ctx.write_csv(&format!("forecast_{name}.csv"), |w| {
            w.write_record(["id", "t_last", "truth", "prediction", "error", "gap", "near", "early"])?;
            for r in &run.results {
                w.write_record([
                    r.id.clone(),
                    r.t_last.to_string(),
                    r.truth.to_string(),
                    r.prediction.to_string(),
                    r.error().to_string(),
                    r.gap.to_string(),
                    if r.near { "near" } else { "far" }.to_string(),
                    if r.early { "early" } else { "late" }.to_string(),
                ])?;
            }
            Ok(())
        })?;
        ctx.write_json(
            &format!("forecast_eval_{name}.json"),
            &ForecastEval {
                outcome,
                rank,
                run,
                report,
            },
        )?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LmmPair {
    pub outcome: Outcome,
    pub biomarker: Biomarker,
    pub n_subjects: usize,
    pub n_obs: usize,
    pub dropped_rows: usize,
    pub ml: Option<LmmFit>,
    pub reml: Option<LmmFit>,
    pub null_ml: Option<LmmFit>,
    /// Profile-likelihood intervals for each fixed effect.
    pub intervals: Vec<Option<[f64; 2]>>,
    pub lrt: Option<Lrt>,
    pub cv_full: Option<LooCv>,
    pub cv_null: Option<LooCv>,
    pub errors: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LmmReport {
    pub interval_level: f64,
    pub pairs: Vec<LmmPair>,
}

fn keep<T>(errors: &mut Vec<String>, what: &str, r: sfpca::Result<T>) -> Option<T> {
    r.map_err(|e| errors.push(format!("{what}: {e}"))).ok()
}

fn lmm_pair(ctx: &Context, ds: &Dataset, outcome: Outcome, biomarker: Biomarker) -> Result<LmmPair, CliError> {
    let c = &ctx.config.lmm;
    let spec = LmmSpec {
        transform: c.transform,
        times: c.times.clone(),
        tolerance: c.tolerance,
        ..LmmSpec::new(outcome, Some(biomarker))
    };
    let design = build_design(ds, &spec).map_err(|e| CliError::from(e).context(&format!("{outcome}/{biomarker}")))?;
    let null = design.without_biomarker();
    let mut errors = Vec::new();
    let ml = keep(&mut errors, "ML fit", lmm::fit_ml(&design, None));
    let reml = keep(&mut errors, "REML fit", lmm::fit_reml(&design, ml.as_ref()));
    let null_ml = keep(&mut errors, "null ML fit", lmm::fit_ml(&null, None));
    let lrt = match (&ml, &null_ml) {
        (Some(a), Some(b)) => keep(&mut errors, "LRT", lmm::lrt_biomarker(a, b)),
        _ => None,
    };
    let intervals = match &ml {
        Some(fit) => (0..design.n_fixed())
            .map(|k| {
                keep(&mut errors, &format!("interval for {}", design.names[k]), lmm::profile_interval(&design, fit, k, c.interval_level))
                    .map(|(lo, hi)| [lo, hi])
            })
            .collect(),
        None => Vec::new(),
    };
    let cv_full = keep(&mut errors, "CV (full)", lmm::loo_cv_design(&design));
    let cv_null = keep(&mut errors, "CV (null)", lmm::loo_cv_design(&null));
    for e in &errors {
        log::warn!("{outcome}/{biomarker}: {e}");
    }
    Ok(LmmPair {
        outcome,
        biomarker,
        n_subjects: design.n_subjects(),
        n_obs: design.n_obs(),
        dropped_rows: design.dropped_rows,
        ml,
        reml,
        null_ml,
        intervals,
        lrt,
        cv_full,
        cv_null,
        errors,
    })
}

pub fn lmm(ctx: &mut Context) -> Result<(), CliError> {
    let ds = ctx.analysis_dataset()?;
    let c = ctx.config.lmm.clone();
    let mut pairs = Vec::new();
    for &outcome in &c.outcomes {
        for &biomarker in &c.biomarkers {
            pairs.push(lmm_pair(ctx, &ds, outcome, biomarker)?);
        }
    }
    if !pairs.is_empty() && pairs.iter().all(|p| p.ml.is_none()) {
        return Err(CliError::Numerical(format!("every mixed-model fit failed; first: {}", pairs[0].errors[0])));
    }
    ctx.write_json(
        "lmm_report.json",
        &LmmReport {
            interval_level: c.interval_level,
            pairs,
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub outcome: Outcome,
    pub biomarker: Biomarker,
    pub update: Option<ResidualUpdate>,
    pub error: Option<String>,
}

/// Biomarker value recorded at the forecast visit, if any.
fn value_at(ds: &Dataset, id: &str, month: f64, b: Biomarker) -> Option<f64> {
    let s = ds.subject(id)?;
    s.observations
        .iter()
        .find(|o| (ds.to_months(o.time) - month).abs() <= 1e-9 * month.abs().max(1.0))
        .and_then(|o| o.get(Variable::Biomarker(b)))
}

pub fn residual_update(ctx: &mut Context) -> Result<(), CliError> {
    let ds = ctx.analysis_dataset()?;
    let c = ctx.config.residual_update.clone();
    let mut entries = Vec::new();
    let mut found = false;
    for &outcome in &c.outcomes {
        let file = format!("forecast_eval_{}.json", outcome.name());
        let Some(eval) = ctx.read_artifact::<ForecastEval>(&file)? else {
            log::warn!("{file} not found; skipping {outcome}");
            continue;
        };
        found = true;
        for &biomarker in &c.biomarkers {
            let z: Vec<Option<f64>> = eval
                .run
                .results
                .iter()
                .map(|r| value_at(&ds, &r.id, r.t_last, biomarker))
                .collect();
            let result = regress_residuals(&eval.run.results, &z, c.transform(biomarker), Some(biomarker));
            let (update, error) = match result {
                Ok(u) => (Some(u), None),
                Err(e) => {
                    log::warn!("{outcome}/{biomarker}: {e}");
                    (None, Some(e.to_string()))
                }
            };
            entries.push(ResidualEntry {
                outcome,
                biomarker,
                update,
                error,
            });
        }
    }
    if !found {
        return Err(CliError::Data(format!(
            "no forecast_eval_<outcome>.json in {}; run fpca-forecast first",
            ctx.dir.display()
        )));
    }
    ctx.write_json("residual_update.json", &entries)
}
