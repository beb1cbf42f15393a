//! Synthetic sparse longitudinal data with a known Karhunen-Loeve truth.
//!
//! Every subject draws from its own ChaCha stream (seed, subject index), so
//! output depends only on the seed and never on thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Biomarker, Dataset, Observation, Outcome, SubjectRecord, Variable, DEFAULT_HORIZON};
use crate::{par, quadrature, Error, Result};

/// Orthonormal eigenfunction families on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenFamily {
    /// `sqrt(2) sin(2 pi k t)`, `sqrt(2) cos(2 pi k t)`, k = 1, 2, ...
    #[default]
    Fourier,
    /// Shifted Legendre polynomials `sqrt(2k + 1) P_k(2t - 1)`, k = 0, 1, ...
    Legendre,
}

fn legendre(k: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if k == 0 {
        return p0;
    }
    for n in 1..k {
        let p2 = ((2 * n + 1) as f64 * x * p1 - n as f64 * p0) / (n + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

impl EigenFamily {
    /// Zero-based eigenfunction `l` at `t`.
    pub fn eval(self, l: usize, t: f64) -> f64 {
        match self {
            EigenFamily::Fourier => {
                let k = (l / 2 + 1) as f64;
                let arg = 2.0 * std::f64::consts::PI * k * t;
                std::f64::consts::SQRT_2 * if l % 2 == 0 { arg.sin() } else { arg.cos() }
            }
            EigenFamily::Legendre => ((2 * l + 1) as f64).sqrt() * legendre(l, 2.0 * t - 1.0),
        }
    }
}

/// Linear mean `intercept + slope * t` on the unit time scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTruth {
    pub outcome: Outcome,
    pub intercept: f64,
    pub slope: f64,
}

impl OutcomeTruth {
    pub fn mean(&self, t: f64) -> f64 {
        self.intercept + self.slope * t
    }
}

/// Log-normal visit-level biomarker with the given mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerTruth {
    pub biomarker: Biomarker,
    pub mean: f64,
    pub variance: f64,
}

impl BiomarkerTruth {
    fn distribution(&self) -> Result<LogNormal<f64>> {
        if !(self.mean > 0.0) || !(self.variance >= 0.0) {
            return Err(Error::InvalidArgument(format!("bad log-normal moments for {}", self.biomarker)));
        }
        let s2 = (1.0 + self.variance / (self.mean * self.mean)).ln();
        LogNormal::new(self.mean.ln() - 0.5 * s2, s2.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Default baseline means and variances.
    pub fn defaults() -> Vec<BiomarkerTruth> {
        [
            (Biomarker::Timp, 234.0, 3188.0),
            (Biomarker::P3np, 7.0, 11.0),
            (Biomarker::Ha, 49.0, 2098.0),
            (Biomarker::Nt, 130.0, 14875.0),
        ]
        .into_iter()
        .map(|(biomarker, mean, variance)| BiomarkerTruth {
            biomarker,
            mean,
            variance,
        })
        .collect()
    }
}

/// Visits on a regular grid, each attended with probability `attendance`
/// and shifted by a uniform jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisitModel {
    pub spacing_months: f64,
    pub attendance: f64,
    pub jitter_months: f64,
    pub min_visits: usize,
    pub max_visits: usize,
}

impl Default for VisitModel {
    fn default() -> Self {
        VisitModel {
            spacing_months: 6.0,
            attendance: 0.4,
            jitter_months: 1.0,
            min_visits: 2,
            max_visits: 8,
        }
    }
}

const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimTruth {
    pub outcomes: Vec<OutcomeTruth>,
    pub family: EigenFamily,
    pub eigenvalues: Vec<f64>,
    pub noise_variance: f64,
    pub biomarkers: Vec<BiomarkerTruth>,
    pub visits: VisitModel,
    pub horizon: f64,
    pub n_subjects: usize,
    pub seed: u64,
}

impl Default for SimTruth {
    fn default() -> Self {
        SimTruth {
            outcomes: vec![
                OutcomeTruth {
                    outcome: Outcome::Fvc,
                    intercept: 102.0,
                    slope: -12.0,
                },
                OutcomeTruth {
                    outcome: Outcome::Tlc,
                    intercept: 93.0,
                    slope: -12.0,
                },
                OutcomeTruth {
                    outcome: Outcome::Dlco,
                    intercept: 65.0,
                    slope: -12.0,
                },
            ],
            family: EigenFamily::Fourier,
            eigenvalues: vec![400.0, 100.0],
            noise_variance: 25.0,
            biomarkers: BiomarkerTruth::defaults(),
            visits: VisitModel::default(),
            horizon: DEFAULT_HORIZON,
            n_subjects: 200,
            seed: 1,
        }
    }
}

impl SimTruth {
    pub fn eigenfunction(&self, l: usize, t: f64) -> f64 {
        self.family.eval(l, t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.outcomes.is_empty() {
            return bad("simulation needs at least one outcome");
        }
        if self.eigenvalues.iter().any(|v| !(*v >= 0.0)) || self.eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return bad("eigenvalues must be non-negative and descending");
        }
        if !(self.noise_variance >= 0.0) {
            return bad("noise variance must be non-negative");
        }
        let v = &self.visits;
        if !(v.attendance > 0.0 && v.attendance <= 1.0) {
            return bad("attendance probability must lie in (0, 1]");
        }
        if !(v.spacing_months > 0.0) || !(v.jitter_months >= 0.0) || v.min_visits > v.max_visits {
            return bad("invalid visit model");
        }
        if !(self.horizon > 0.0) || self.n_subjects == 0 {
            return bad("horizon and subject count must be positive");
        }
        // Orthonormality of the requested eigenfunctions.
        let q = quadrature::unit_interval(64);
        let l = self.eigenvalues.len();
        for a in 0..l {
            for b in a..l {
                let ip: f64 = q.iter().map(|(t, w)| w * self.eigenfunction(a, *t) * self.eigenfunction(b, *t)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                if (ip - target).abs() > 1e-8 {
                    return bad("eigenfunctions are not orthonormal");
                }
            }
        }
        for b in &self.biomarkers {
            b.distribution()?;
        }
        Ok(())
    }

    fn grid(&self) -> Vec<f64> {
        let n = (self.horizon / self.visits.spacing_months + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * self.visits.spacing_months).collect()
    }
}

/// True scores of one subject, one vector per simulated outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub id: String,
    pub scores: Vec<Vec<f64>>,
}

/// Truth sidecar written next to a simulated data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSidecar {
    pub truth: SimTruth,
    pub subjects: Vec<SubjectTruth>,
}

fn subject_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn subject_id(index: usize) -> String {
    format!("S{:04}", index + 1)
}

fn draw_visits(truth: &SimTruth, grid: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let v = &truth.visits;
    for _ in 0..MAX_REDRAWS {
        let mut times = Vec::new();
        for &g in grid {
            if rng.random::<f64>() >= v.attendance {
                continue;
            }
            let jitter = if v.jitter_months > 0.0 {
                rng.random_range(-v.jitter_months..=v.jitter_months)
            } else {
                0.0
            };
            times.push((g + jitter).clamp(0.0, truth.horizon));
        }
        let distinct = times.windows(2).all(|w| w[0] < w[1]);
        if distinct && (v.min_visits..=v.max_visits).contains(&times.len()) {
            return Ok(times);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not draw {}-{} visits in {MAX_REDRAWS} attempts; attendance {} is too low",
        v.min_visits, v.max_visits, v.attendance
    )))
}

/// Draws `n_subjects` curves `mu(t) + sum_l xi_l phi_l(t) + noise` with
/// independent `xi_l ~ N(0, lambda_l)` per outcome, at jittered grid
/// visits, plus independent log-normal biomarkers at every visit.
pub fn generate(truth: &SimTruth) -> Result<(Dataset, Vec<SubjectTruth>)> {
    truth.validate()?;
    let grid = truth.grid();
    let biomarker_dists = truth
        .biomarkers
        .iter()
        .map(|b| b.distribution())
        .collect::<Result<Vec<_>>>()?;
    let noise_sd = truth.noise_variance.sqrt();

    let subjects = par::map_range(truth.n_subjects, |i| -> Result<(SubjectRecord, SubjectTruth)> {
        let mut rng = subject_rng(truth.seed, i);
        let scores: Vec<Vec<f64>> = truth
            .outcomes
            .iter()
            .map(|_| {
                truth
                    .eigenvalues
                    .iter()
                    .map(|lam| lam.sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let times = draw_visits(truth, &grid, &mut rng)?;
        let observations = times
            .iter()
            .map(|&months| {
                let t = months / truth.horizon;
                let mut obs = Observation::new(months);
                for (o, xi) in truth.outcomes.iter().zip(&scores) {
                    let signal: f64 = xi.iter().enumerate().map(|(l, s)| s * truth.eigenfunction(l, t)).sum();
                    let noise = noise_sd * rng.sample::<f64, _>(StandardNormal);
                    obs.set(Variable::Outcome(o.outcome), Some(o.mean(t) + signal + noise));
                }
                for (b, dist) in truth.biomarkers.iter().zip(&biomarker_dists) {
                    obs.set(Variable::Biomarker(b.biomarker), Some(dist.sample(&mut rng)));
                }
                obs
            })
            .collect();
        let id = subject_id(i);
        Ok((SubjectRecord::new(id.clone(), observations)?, SubjectTruth { id, scores }))
    });
    let (records, truths): (Vec<_>, Vec<_>) = subjects.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let mut ds = Dataset::new(records)?;
    ds.horizon = truth.horizon;
    Ok((ds, truths))
}

/// Random intercept and slope model with one log-normal biomarker entering
/// on the log scale. Times are exactly 0, 6 and 12 months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmmTruth {
    pub outcome: Outcome,
    /// Intercept, time (per month) and log-biomarker coefficients.
    pub beta: [f64; 3],
    /// Row-major random-effects covariance.
    pub sigma: [[f64; 2]; 2],
    pub residual_variance: f64,
    pub biomarker: BiomarkerTruth,
    /// Attendance probability of the 6 and 12 month visits; month 0 is
    /// always attended and at least two visits are kept.
    pub attendance: f64,
    pub n_subjects: usize,
    pub seed: u64,
}

impl Default for LmmTruth {
    fn default() -> Self {
        LmmTruth {
            outcome: Outcome::Fvc,
            beta: [100.0, -0.5, -2.0],
            sigma: [[100.0, -1.0], [-1.0, 0.1]],
            residual_variance: 25.0,
            biomarker: BiomarkerTruth::defaults().remove(0),
            attendance: 0.6,
            n_subjects: 200,
            seed: 1,
        }
    }
}

pub const LMM_TIMES: [f64; 3] = [0.0, 6.0, 12.0];

#[derive(Debug, Clone, PartialEq)]
pub struct LmmSample {
    pub dataset: Dataset,
    /// Drawn `(gamma_0, gamma_1)` per subject.
    pub effects: Vec<[f64; 2]>,
}

/// Lower Cholesky factor of a 2x2 PSD matrix, tolerating singularity.
fn chol2(s: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let (a, b, c) = (s[0][0], s[0][1], s[1][1]);
    if a < 0.0 || c < 0.0 || (s[1][0] - b).abs() > 1e-12 * (a.abs() + c.abs() + 1.0) || a * c - b * b < -1e-12 * (a * c).abs().max(1e-300) {
        return Err(Error::InvalidArgument("random-effects covariance is not symmetric PSD".into()));
    }
    let l00 = a.sqrt();
    let l10 = if l00 > 0.0 { b / l00 } else { 0.0 };
    let l11 = (c - l10 * l10).max(0.0).sqrt();
    Ok([[l00, 0.0], [l10, l11]])
}

pub fn generate_lmm(truth: &LmmTruth) -> Result<LmmSample> {
    if truth.n_subjects < 2 {
        return Err(Error::InvalidArgument("need at least two subjects".into()));
    }
    if !(truth.attendance > 0.0 && truth.attendance <= 1.0) || !(truth.residual_variance >= 0.0) {
        return Err(Error::InvalidArgument("invalid attendance or residual variance".into()));
    }
    let l = chol2(truth.sigma)?;
    let dist = truth.biomarker.distribution()?;
    let noise = Normal::new(0.0, truth.residual_variance.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let [b0, b1, b2] = truth.beta;

    let drawn = par::map_range(truth.n_subjects, |i| -> Result<(SubjectRecord, [f64; 2])> {
        let mut rng = subject_rng(truth.seed, i);
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let g = [l[0][0] * z0, l[1][0] * z0 + l[1][1] * z1];
        let mut times = vec![0.0];
        for _ in 0..MAX_REDRAWS {
            times.truncate(1);
            times.extend(LMM_TIMES[1..].iter().filter(|_| rng.random::<f64>() < truth.attendance));
            if times.len() >= 2 {
                break;
            }
        }
        if times.len() < 2 {
            return Err(Error::InvalidArgument("attendance too low to draw two visits".into()));
        }
        let observations = times
            .iter()
            .map(|&t| {
                let x: f64 = dist.sample(&mut rng);
                let y = b0 + b1 * t + b2 * x.ln() + g[0] + g[1] * t + noise.sample(&mut rng);
                Observation::new(t)
                    .with(Variable::Outcome(truth.outcome), y)
                    .with(Variable::Biomarker(truth.biomarker.biomarker), x)
            })
            .collect();
        Ok((SubjectRecord::new(subject_id(i), observations)?, g))
    });
    let (records, effects): (Vec<_>, Vec<_>) = drawn.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(LmmSample {
        dataset: Dataset::new(records)?,
        effects,
    })
}
