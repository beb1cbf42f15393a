//! Summary tables collated from earlier artifacts.

use serde::Serialize;

use sfpca::data::{Biomarker, Outcome};

use crate::commands::{ForecastEval, LmmReport, ResidualEntry};
use crate::run::Context;
use crate::CliError;

/// Fixed effects and the biomarker likelihood-ratio test.
#[derive(Debug, Serialize)]
struct EffectRow {
    outcome: Outcome,
    biomarker: Biomarker,
    term: String,
    estimate: f64,
    std_error: f64,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    lrt_statistic: Option<f64>,
    lrt_p_value: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CvRow {
    outcome: Outcome,
    biomarker: Biomarker,
    cv_mse_full: Option<f64>,
    cv_mse_null: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ForecastRow {
    outcome: Outcome,
    n: usize,
    failures: usize,
    mse_null: f64,
    mse_model: f64,
    r_squared: Option<f64>,
    near_n: usize,
    near_mse: Option<f64>,
    far_n: usize,
    far_mse: Option<f64>,
    early_n: usize,
    early_mse: Option<f64>,
    late_n: usize,
    late_mse: Option<f64>,
    near_gap_months: f64,
    early_months: f64,
}

#[derive(Debug, Serialize)]
struct UpdateRow {
    outcome: Outcome,
    biomarker: Biomarker,
    transform: String,
    n: usize,
    excluded: usize,
    alpha: f64,
    beta: f64,
    p_value: f64,
    mse_original: f64,
    mse_updated: f64,
    mse_cv: f64,
    r_squared: Option<f64>,
}

#[derive(Debug, Default, Serialize)]
struct Report {
    mixed_model_effects: Option<Vec<EffectRow>>,
    mixed_model_cv: Option<Vec<CvRow>>,
    forecast: Option<Vec<ForecastRow>>,
    residual_update: Option<Vec<UpdateRow>>,
}

fn table<T: Serialize>(ctx: &mut Context, name: &str, rows: &[T]) -> Result<(), CliError> {
    ctx.write_csv(name, |w| rows.iter().try_for_each(|r| w.serialize(r)))
}

pub fn report(ctx: &mut Context) -> Result<(), CliError> {
    let mut out = Report::default();

    if let Some(lmm) = ctx.read_artifact::<LmmReport>("lmm_report.json")? {
        let mut effects = Vec::new();
        let mut cv = Vec::new();
        for p in &lmm.pairs {
            if let Some(fit) = &p.ml {
                for k in 0..fit.beta.len() {
                    let ci = p.intervals.get(k).copied().flatten();
                    let is_biomarker = k == 2;
                    effects.push(EffectRow {
                        outcome: p.outcome,
                        biomarker: p.biomarker,
                        term: fit.names[k].clone(),
                        estimate: fit.beta[k],
                        std_error: fit.beta_se[k],
                        ci_low: ci.map(|c| c[0]),
                        ci_high: ci.map(|c| c[1]),
                        lrt_statistic: p.lrt.as_ref().filter(|_| is_biomarker).map(|l| l.statistic),
                        lrt_p_value: p.lrt.as_ref().filter(|_| is_biomarker).map(|l| l.p_value),
                    });
                }
            }
            cv.push(CvRow {
                outcome: p.outcome,
                biomarker: p.biomarker,
                cv_mse_full: p.cv_full.as_ref().map(|c| c.mse),
                cv_mse_null: p.cv_null.as_ref().map(|c| c.mse),
            });
        }
        table(ctx, "table_lmm_effects.csv", &effects)?;
        table(ctx, "table_lmm_cv.csv", &cv)?;
        out.mixed_model_effects = Some(effects);
        out.mixed_model_cv = Some(cv);
    }

    let mut forecast = Vec::new();
    for outcome in Outcome::ALL {
        let Some(e) = ctx.read_artifact::<ForecastEval>(&format!("forecast_eval_{}.json", outcome.name()))? else {
            continue;
        };
        let r = &e.report;
        forecast.push(ForecastRow {
            outcome,
            n: r.n,
            failures: e.run.failures.len(),
            mse_null: r.mse_null,
            mse_model: r.mse_model,
            r_squared: r.r_squared,
            near_n: r.near.count,
            near_mse: r.near.mse,
            far_n: r.far.count,
            far_mse: r.far.mse,
            early_n: r.early.count,
            early_mse: r.early.mse,
            late_n: r.late.count,
            late_mse: r.late.mse,
            near_gap_months: r.near_gap_months,
            early_months: r.early_months,
        });
    }
    if !forecast.is_empty() {
        table(ctx, "table_forecast.csv", &forecast)?;
        out.forecast = Some(forecast);
    }

    if let Some(entries) = ctx.read_artifact::<Vec<ResidualEntry>>("residual_update.json")? {
        let rows: Vec<UpdateRow> = entries
            .iter()
            .filter_map(|e| {
                let u = e.update.as_ref()?;
                Some(UpdateRow {
                    outcome: e.outcome,
                    biomarker: e.biomarker,
                    transform: format!("{:?}", u.transform).to_lowercase(),
                    n: u.n,
                    excluded: u.excluded,
                    alpha: u.alpha,
                    beta: u.beta,
                    p_value: u.p_value,
                    mse_original: u.mse_original,
                    mse_updated: u.mse_updated,
                    mse_cv: u.mse_cv,
                    r_squared: u.r_squared,
                })
            })
            .collect();
        table(ctx, "table_residual_update.csv", &rows)?;
        out.residual_update = Some(rows);
    }

    if out.mixed_model_effects.is_none() && out.forecast.is_none() && out.residual_update.is_none() {
        return Err(CliError::Data(format!(
            "nothing to report in {}; run lmm, fpca-forecast or residual-update first",
            ctx.dir.display()
        )));
    }
    ctx.write_json("report.json", &out)
}
