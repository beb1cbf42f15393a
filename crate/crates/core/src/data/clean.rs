use serde::{Deserialize, Serialize};

use super::{Biomarker, Dataset, Outcome, ProvenanceEntry, TimeScale, Variable, DEFAULT_HORIZON};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
}

impl Comparison {
    fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Lt => value < threshold,
            Comparison::Gt => value > threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparison::Lt => "<",
            Comparison::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Test every visit.
    Observation,
    /// Test only the subject's first visit.
    PatientBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    RemoveObservation,
    RemovePatient,
}

/// A threshold filter on one variable. Missing values never match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningRule {
    pub variable: Variable,
    pub op: Comparison,
    pub threshold: f64,
    pub scope: Scope,
    pub action: Action,
}

impl CleaningRule {
    pub fn observation(variable: Variable, op: Comparison, threshold: f64) -> Self {
        CleaningRule {
            variable,
            op,
            threshold,
            scope: Scope::Observation,
            action: Action::RemoveObservation,
        }
    }

    pub fn baseline_patient(variable: Variable, op: Comparison, threshold: f64) -> Self {
        CleaningRule {
            variable,
            op,
            threshold,
            scope: Scope::PatientBaseline,
            action: Action::RemovePatient,
        }
    }

    /// Parses the variable by name, so misspelt names fail here.
    pub fn parse(variable: &str, op: Comparison, threshold: f64, scope: Scope, action: Action) -> Result<Self> {
        let rule = CleaningRule {
            variable: variable.parse()?,
            op,
            threshold,
            scope,
            action,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rule on {} has non-finite threshold",
                self.variable
            )));
        }
        if self.scope == Scope::PatientBaseline && self.action == Action::RemoveObservation {
            return Err(Error::InvalidArgument(format!(
                "rule on {}: baseline scope requires action remove-patient",
                self.variable
            )));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let (var, op, thr) = (self.variable, self.op.symbol(), self.threshold);
        match (self.scope, self.action) {
            (Scope::PatientBaseline, _) => format!("remove patients with {var}(t0) {op} {thr}"),
            (Scope::Observation, Action::RemovePatient) => {
                format!("remove patients with any {var} {op} {thr}")
            }
            (Scope::Observation, Action::RemoveObservation) => {
                format!("remove observations with {var} {op} {thr}")
            }
        }
    }

    fn matches(&self, value: Option<f64>) -> bool {
        value.is_some_and(|v| self.op.holds(v, self.threshold))
    }
}

/// Default patient-flow rules, in order.
///
/// The DLCO and NT rules drop values above the threshold; the other
/// direction would discard almost every visit at typical values.
pub fn default_rules() -> Vec<CleaningRule> {
    use Comparison::{Gt, Lt};
    let b = Variable::Biomarker;
    let o = Variable::Outcome;
    vec![
        CleaningRule::baseline_patient(b(Biomarker::Timp), Gt, 500.0),
        CleaningRule::baseline_patient(b(Biomarker::Timp), Lt, 50.0),
        CleaningRule::observation(b(Biomarker::P3np), Gt, 25.0),
        CleaningRule::observation(o(Outcome::Fvc), Gt, 170.0),
        CleaningRule::observation(o(Outcome::Fvc), Lt, 50.0),
        CleaningRule::observation(o(Outcome::Tlc), Lt, 25.0),
        CleaningRule::observation(o(Outcome::Dlco), Gt, 120.0),
        CleaningRule::observation(b(Biomarker::Nt), Gt, 1000.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    /// Drop visits missing any variable in `modeled`.
    pub drop_missing: bool,
    pub modeled: Vec<Variable>,
    pub rules: Vec<CleaningRule>,
    /// Months.
    pub horizon: f64,
    pub min_observations: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            drop_missing: true,
            modeled: Variable::ALL.to_vec(),
            rules: default_rules(),
            horizon: DEFAULT_HORIZON,
            min_observations: 2,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", self.horizon)));
        }
        self.rules.iter().try_for_each(CleaningRule::validate)
    }
}

fn step(ds: &mut Dataset, name: String, f: impl FnOnce(&mut Dataset)) {
    let (pb, ob) = ds.counts();
    f(ds);
    // A subject without visits no longer exists.
    ds.subjects.retain(|s| !s.observations.is_empty());
    let (pa, oa) = ds.counts();
    ds.provenance.push(ProvenanceEntry {
        step: name,
        patients_before: pb,
        observations_before: ob,
        patients_after: pa,
        observations_after: oa,
    });
}

/// Applies, in order: the missing-value filter, each rule, the horizon cut and
/// the minimum-visit filter. Every step appends a provenance entry.
pub fn apply_cleaning(ds: &Dataset, config: &CleaningConfig) -> Result<Dataset> {
    config.validate()?;
    if ds.time_scale != TimeScale::Months {
        return Err(Error::InvalidArgument(
            "cleaning expects times in months; clean before rescaling".into(),
        ));
    }
    let mut out = ds.clone();

    if config.drop_missing {
        let modeled = &config.modeled;
        step(&mut out, "remove observations with missing values".into(), |d| {
            for s in &mut d.subjects {
                s.observations.retain(|o| modeled.iter().all(|&v| o.get(v).is_some()));
            }
        });
    }

    for rule in &config.rules {
        step(&mut out, rule.describe(), |d| match (rule.scope, rule.action) {
            (Scope::PatientBaseline, _) => {
                d.subjects.retain(|s| !rule.matches(s.observations.first().and_then(|o| o.get(rule.variable))));
            }
            (Scope::Observation, Action::RemovePatient) => {
                d.subjects
                    .retain(|s| !s.observations.iter().any(|o| rule.matches(o.get(rule.variable))));
            }
            (Scope::Observation, Action::RemoveObservation) => {
                for s in &mut d.subjects {
                    s.observations.retain(|o| !rule.matches(o.get(rule.variable)));
                }
            }
        });
    }

    let horizon = config.horizon;
    step(&mut out, format!("remove observations with t > {horizon}"), |d| {
        for s in &mut d.subjects {
            s.observations.retain(|o| o.time <= horizon);
        }
    });
    out.horizon = horizon;

    let min = config.min_observations;
    step(&mut out, format!("remove patients with fewer than {min} observations"), |d| {
        d.subjects.retain(|s| s.observations.len() >= min);
    });

    Ok(out)
}
