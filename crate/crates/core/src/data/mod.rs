//! Visit-level data model, ingestion, cleaning and descriptive statistics.

mod clean;
mod describe;
mod ingest;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use clean::{apply_cleaning, default_rules, Action, CleaningConfig, CleaningRule, Comparison, Scope};
pub use describe::{describe_baseline, BaselineSummary};
pub use ingest::{ingest_csv, read_csv, write_csv, ColumnMap};

/// Lung-function outcomes, recorded as age/gender predicted percentages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Fvc,
    Tlc,
    Dlco,
}

/// Serum biomarkers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Biomarker {
    Timp,
    P3np,
    Ha,
    Nt,
}

/// Any recorded variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variable {
    Outcome(Outcome),
    Biomarker(Biomarker),
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Fvc, Outcome::Tlc, Outcome::Dlco];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Fvc => "FVC",
            Outcome::Tlc => "TLC",
            Outcome::Dlco => "DLCO",
        }
    }
}

impl Biomarker {
    pub const ALL: [Biomarker; 4] = [Biomarker::Timp, Biomarker::P3np, Biomarker::Ha, Biomarker::Nt];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Biomarker::Timp => "TIMP",
            Biomarker::P3np => "P3NP",
            Biomarker::Ha => "HA",
            Biomarker::Nt => "NT",
        }
    }
}

impl Variable {
    /// Biomarkers first, then outcomes: the column order of the baseline table.
    pub const ALL: [Variable; 7] = [
        Variable::Biomarker(Biomarker::Timp),
        Variable::Biomarker(Biomarker::P3np),
        Variable::Biomarker(Biomarker::Ha),
        Variable::Biomarker(Biomarker::Nt),
        Variable::Outcome(Outcome::Fvc),
        Variable::Outcome(Outcome::Tlc),
        Variable::Outcome(Outcome::Dlco),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Outcome(o) => o.name(),
            Variable::Biomarker(b) => b.name(),
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Biomarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == upper || (upper == "TIMP1" && *v == Variable::Biomarker(Biomarker::Timp)))
            .ok_or_else(|| Error::UnknownVariable(s.to_string()))
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<Variable>()? {
            Variable::Outcome(o) => Ok(o),
            Variable::Biomarker(_) => Err(Error::InvalidArgument(format!("`{s}` is a biomarker, not an outcome"))),
        }
    }
}

impl FromStr for Biomarker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<Variable>()? {
            Variable::Biomarker(b) => Ok(b),
            Variable::Outcome(_) => Err(Error::InvalidArgument(format!("`{s}` is an outcome, not a biomarker"))),
        }
    }
}

impl TryFrom<String> for Variable {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variable> for String {
    fn from(v: Variable) -> String {
        v.name().to_string()
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(Outcome);
string_serde!(Biomarker);

/// One clinic visit.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Months since the first visit, or the rescaled time in `[0, 1]`.
    pub time: f64,
    pub outcomes: [Option<f64>; 3],
    pub biomarkers: [Option<f64>; 4],
}

impl Observation {
    pub fn new(time: f64) -> Self {
        Observation {
            time,
            outcomes: [None; 3],
            biomarkers: [None; 4],
        }
    }

    pub fn outcome(&self, o: Outcome) -> Option<f64> {
        self.outcomes[o.index()]
    }

    pub fn biomarker(&self, b: Biomarker) -> Option<f64> {
        self.biomarkers[b.index()]
    }

    pub fn get(&self, v: Variable) -> Option<f64> {
        match v {
            Variable::Outcome(o) => self.outcome(o),
            Variable::Biomarker(b) => self.biomarker(b),
        }
    }

    pub fn set(&mut self, v: Variable, value: Option<f64>) {
        match v {
            Variable::Outcome(o) => self.outcomes[o.index()] = value,
            Variable::Biomarker(b) => self.biomarkers[b.index()] = value,
        }
    }

    pub fn with(mut self, v: Variable, value: f64) -> Self {
        self.set(v, Some(value));
        self
    }
}

/// All visits of one subject, sorted strictly ascending by time.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub observations: Vec<Observation>,
}

impl SubjectRecord {
    /// Sorts the visits and rejects duplicate times.
    pub fn new(id: impl Into<String>, mut observations: Vec<Observation>) -> Result<Self> {
        let id = id.into();
        if observations.is_empty() {
            return Err(Error::InsufficientData(format!("subject `{id}` has no observations")));
        }
        observations.sort_by(|a, b| a.time.total_cmp(&b.time));
        for w in observations.windows(2) {
            if w[0].time == w[1].time {
                return Err(Error::DuplicateObservation {
                    subject: id,
                    time: w[0].time,
                });
            }
        }
        if let Some(o) = observations.iter().find(|o| !(o.time >= 0.0) || !o.time.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "subject `{id}` has invalid time {}",
                o.time
            )));
        }
        Ok(SubjectRecord { id, observations })
    }

    /// `(time, value)` pairs for the visits where `outcome` is present.
    pub fn series(&self, outcome: Outcome) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.observations
            .iter()
            .filter_map(move |o| o.outcome(outcome).map(|y| (o.time, y)))
    }
}

/// How observation times are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScale {
    Months,
    /// Months divided by the horizon.
    Unit,
}

/// One cleaning or ingestion step with the counts before and after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub step: String,
    pub patients_before: usize,
    pub observations_before: usize,
    pub patients_after: usize,
    pub observations_after: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<SubjectRecord>,
    /// Follow-up window in months.
    pub horizon: f64,
    pub time_scale: TimeScale,
    pub provenance: Vec<ProvenanceEntry>,
}

pub const DEFAULT_HORIZON: f64 = 60.0;

impl Dataset {
    /// Builds a month-scale dataset, rejecting duplicate subject ids.
    pub fn new(subjects: Vec<SubjectRecord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate subject id `{}`", s.id)));
            }
        }
        Ok(Dataset {
            subjects,
            horizon: DEFAULT_HORIZON,
            time_scale: TimeScale::Months,
            provenance: Vec::new(),
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.observations.len()).sum()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.id == id)
    }

    /// Converts a time on this dataset's scale to months.
    pub fn to_months(&self, t: f64) -> f64 {
        match self.time_scale {
            TimeScale::Months => t,
            TimeScale::Unit => t * self.horizon,
        }
    }

    /// Converts months to this dataset's time scale.
    pub fn from_months(&self, months: f64) -> f64 {
        match self.time_scale {
            TimeScale::Months => months,
            TimeScale::Unit => months / self.horizon,
        }
    }

    /// Divides every time by `horizon`, mapping `[0, horizon]` months onto
    /// `[0, 1]`. Already rescaled datasets are returned unchanged.
    pub fn rescale_time(&self, horizon: f64) -> Result<Dataset> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if self.time_scale == TimeScale::Unit {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        for s in &mut out.subjects {
            for o in &mut s.observations {
                if o.time > horizon {
                    return Err(Error::TimeBeyondHorizon {
                        subject: s.id.clone(),
                        time: o.time,
                        horizon,
                    });
                }
                o.time /= horizon;
            }
        }
        out.horizon = horizon;
        out.time_scale = TimeScale::Unit;
        Ok(out)
    }

    /// Inverse of [`Dataset::rescale_time`].
    pub fn to_month_scale(&self) -> Dataset {
        if self.time_scale == TimeScale::Months {
            return self.clone();
        }
        let mut out = self.clone();
        for s in &mut out.subjects {
            for o in &mut s.observations {
                o.time *= self.horizon;
            }
        }
        out.time_scale = TimeScale::Months;
        out
    }

    pub(crate) fn counts(&self) -> (usize, usize) {
        (self.n_subjects(), self.n_observations())
    }
}

/// Free-function form of [`Dataset::rescale_time`].
pub fn rescale_time(ds: &Dataset, horizon: f64) -> Result<Dataset> {
    ds.rescale_time(horizon)
}
