//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sfpca::basis::DEFAULT_M_GRID;
use sfpca::data::{Biomarker, CleaningConfig, ColumnMap, Outcome};
use sfpca::eval::NullForecast;
use sfpca::fpca::{Folds, FpcaSettings, DEFAULT_L_GRID};
use sfpca::simulate::SimTruth;
use sfpca::stats::Transform;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Required by `simulate`; overrides `simulate.seed`.
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Raw visit CSV. Analysis commands prefer `cleaned.csv`, then
    /// `simulated.csv` from the run directory when present.
    pub input: Option<PathBuf>,
    /// Parent of the run directories.
    pub output_dir: PathBuf,
    pub columns: ColumnMap,
    pub cleaning: CleaningConfig,
    pub fpca: FpcaConfig,
    pub forecast: ForecastSection,
    pub eval: EvalConfig,
    pub lmm: LmmConfig,
    pub residual_update: ResidualConfig,
    pub simulate: SimTruth,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            threads: 0,
            input: None,
            output_dir: PathBuf::from("runs"),
            columns: ColumnMap::default(),
            cleaning: CleaningConfig::default(),
            fpca: FpcaConfig::default(),
            forecast: ForecastSection::default(),
            eval: EvalConfig::default(),
            lmm: LmmConfig::default(),
            residual_update: ResidualConfig::default(),
            simulate: SimTruth::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpcaConfig {
    pub outcomes: Vec<Outcome>,
    pub l_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub folds: Folds,
    pub settings: FpcaSettings,
    /// Points of the exported mean, eigenfunction and trajectory grids.
    pub export_grid: usize,
}

impl Default for FpcaConfig {
    fn default() -> Self {
        FpcaConfig {
            outcomes: Outcome::ALL.to_vec(),
            l_grid: DEFAULT_L_GRID.to_vec(),
            m_grid: DEFAULT_M_GRID.to_vec(),
            folds: Folds::LeaveOneOut,
            settings: FpcaSettings::default(),
            export_grid: 61,
        }
    }
}

/// How the forecast picks `(L, M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastRank {
    /// The pair chosen by `fpca-fit` in this run directory, or a fresh
    /// selection on the full data when it is missing.
    #[default]
    Selected,
    /// `forecast.l` and `forecast.m`.
    Fixed,
    /// Model selection inside every leave-last-out fold.
    Reselect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub rank: ForecastRank,
    pub l: usize,
    pub m: usize,
    pub min_observations: usize,
}

impl Default for ForecastSection {
    fn default() -> Self {
        ForecastSection {
            rank: ForecastRank::Selected,
            l: 2,
            m: 8,
            min_observations: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub null_forecast: NullForecast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmmConfig {
    pub outcomes: Vec<Outcome>,
    pub biomarkers: Vec<Biomarker>,
    pub transform: Transform,
    /// Design visit times in months.
    pub times: Vec<f64>,
    pub tolerance: f64,
    /// Coverage of the profile-likelihood intervals.
    pub interval_level: f64,
}

impl Default for LmmConfig {
    fn default() -> Self {
        LmmConfig {
            outcomes: Outcome::ALL.to_vec(),
            biomarkers: Biomarker::ALL.to_vec(),
            transform: Transform::Log,
            times: vec![0.0, 6.0, 12.0],
            tolerance: 1.0,
            interval_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualConfig {
    pub outcomes: Vec<Outcome>,
    pub biomarkers: Vec<Biomarker>,
    /// Biomarkers entered on the log scale.
    pub log_biomarkers: Vec<Biomarker>,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        ResidualConfig {
            outcomes: Outcome::ALL.to_vec(),
            biomarkers: Biomarker::ALL.to_vec(),
            log_biomarkers: vec![Biomarker::Nt],
        }
    }
}

impl ResidualConfig {
    pub fn transform(&self, b: Biomarker) -> Transform {
        if self.log_biomarkers.contains(&b) {
            Transform::Log
        } else {
            Transform::Identity
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let core = |what: &str, e: sfpca::Error| invalid(format!("{what}: {e}"));
        self.cleaning.validate().map_err(|e| core("cleaning", e))?;
        self.fpca.settings.validate().map_err(|e| core("fpca.settings", e))?;
        for (name, grid) in [("fpca.l_grid", &self.fpca.l_grid), ("fpca.m_grid", &self.fpca.m_grid)] {
            if grid.is_empty() {
                return Err(invalid(format!("{name} is empty")));
            }
        }
        if self.fpca.l_grid.contains(&0) {
            return Err(invalid("fpca.l_grid contains 0"));
        }
        if let Some(m) = self.fpca.m_grid.iter().find(|&&m| m < 4) {
            return Err(invalid(format!("fpca.m_grid entry {m} is below the cubic minimum of 4")));
        }
        if let Folds::KFold(k) = self.fpca.folds {
            if k < 2 {
                return Err(invalid("fpca.folds k-fold needs k >= 2"));
            }
        }
        if self.fpca.export_grid < 2 {
            return Err(invalid("fpca.export_grid needs at least 2 points"));
        }
        if self.forecast.rank == ForecastRank::Fixed && (self.forecast.l == 0 || self.forecast.m < 4 || self.forecast.l > self.forecast.m) {
            return Err(invalid("forecast.l and forecast.m need 1 <= l <= m and m >= 4"));
        }
        if self.forecast.min_observations < 2 {
            return Err(invalid("forecast.min_observations must be at least 2"));
        }
        if self.lmm.times.is_empty() {
            return Err(invalid("lmm.times is empty"));
        }
        if !(self.lmm.tolerance >= 0.0) {
            return Err(invalid("lmm.tolerance must be non-negative"));
        }
        if !(self.lmm.interval_level > 0.0 && self.lmm.interval_level < 1.0) {
            return Err(invalid("lmm.interval_level must lie in (0, 1)"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(invalid("output_dir is empty"));
        }
        if let Some(input) = &self.input {
            if input.starts_with(&self.output_dir) || self.output_dir.starts_with(input) {
                return Err(invalid(format!(
                    "input {} and output_dir {} overlap",
                    input.display(),
                    self.output_dir.display()
                )));
            }
        }
        Ok(())
    }

    /// The hashed part of the config as TOML: everything but `threads` and
    /// `output_dir`.
    pub fn to_run_toml(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        table.remove("threads");
        table.remove("output_dir");
        toml::to_string(&table).expect("config serializes")
    }

    /// Hash of everything that can change an artifact. Thread count and
    /// output location are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = 0;
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("run-{}", &self.hash()[..12]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig {
            seed: Some(4),
            ..RunConfig::default()
        };
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn hash_ignores_threads() {
        let a = RunConfig::default();
        let b = RunConfig {
            threads: 3,
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.to_run_toml(), b.to_run_toml());
        let back: RunConfig = toml::from_str(&b.to_run_toml()).unwrap();
        assert_eq!(back.hash(), b.hash());
        let c = RunConfig {
            seed: Some(1),
            ..RunConfig::default()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_grids() {
        let mut c = RunConfig::default();
        c.fpca.m_grid.clear();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.fpca.folds = Folds::KFold(1);
        assert!(c.validate().is_err());
        assert!(toml::from_str::<RunConfig>("nonsense = 1").is_err());
    }
}
