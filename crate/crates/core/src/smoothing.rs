//! Local linear kernel smoothing of the pooled mean curve.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{par, Error, Result};

/// Compactly supported kernels on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Biweight,
    Tricube,
}

impl Kernel {
    pub fn weight(self, u: f64) -> f64 {
        let a = u.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Epanechnikov => 0.75 * (1.0 - a * a),
            Kernel::Biweight => 0.9375 * (1.0 - a * a).powi(2),
            Kernel::Tricube => 70.0 / 81.0 * (1.0 - a * a * a).powi(3),
        }
    }
}

/// Smoothed mean on an evaluation grid; linear interpolation in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
    pub kernel: Kernel,
}

impl MeanEstimate {
    /// A flat curve, mostly useful for tests and already-centred data.
    pub fn constant(value: f64) -> Self {
        MeanEstimate {
            grid: vec![0.0, 1.0],
            values: vec![value, value],
            bandwidth: 1.0,
            kernel: Kernel::default(),
        }
    }

    /// Piecewise-linear interpolation of the grid values, held constant
    /// outside the grid.
    pub fn value_at(&self, t: f64) -> f64 {
        let g = &self.grid;
        let n = g.len();
        if t <= g[0] {
            return self.values[0];
        }
        if t >= g[n - 1] {
            return self.values[n - 1];
        }
        let k = g.partition_point(|&x| x <= t);
        let (t0, t1) = (g[k - 1], g[k]);
        let w = (t - t0) / (t1 - t0);
        self.values[k - 1] * (1.0 - w) + self.values[k] * w
    }

    /// Two-column `t,value` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "value"])?;
        for (t, v) in self.grid.iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// `n` equispaced points on `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

pub const DEFAULT_GRID_SIZE: usize = 101;

/// Ten log-spaced bandwidths from 0.05 to 0.5.
pub fn default_bandwidth_candidates() -> Vec<f64> {
    let (lo, hi): (f64, f64) = (0.05, 0.5);
    (0..10)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / 9.0).exp())
        .collect()
}

const MAX_WIDENINGS: usize = 3;

#[derive(Debug, Clone, Copy)]
struct Point {
    t: f64,
    y: f64,
    group: usize,
}

/// Points sorted by `(t, y)` so every local sum runs in a fixed order
/// regardless of input order or thread count.
struct Smoother {
    points: Vec<Point>,
    kernel: Kernel,
}

impl Smoother {
    fn new(mut points: Vec<Point>, kernel: Kernel) -> Self {
        points.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.y.total_cmp(&b.y)));
        Smoother { points, kernel }
    }

    fn local_fit(&self, t0: f64, h: f64, exclude: Option<usize>) -> Option<f64> {
        let lo = self.points.partition_point(|p| p.t < t0 - h);
        let hi = self.points.partition_point(|p| p.t <= t0 + h);
        let window = self.points[lo..hi].iter().filter(|p| Some(p.group) != exclude);

        let (mut s0, mut sd, mut sy) = (0.0, 0.0, 0.0);
        for p in window.clone() {
            let w = self.kernel.weight((p.t - t0) / h);
            s0 += w;
            sd += w * (p.t - t0);
            sy += w * p.y;
        }
        if !(s0 > 0.0) {
            return None;
        }
        let (dbar, ybar) = (sd / s0, sy / s0);
        let (mut sdd, mut sdy) = (0.0, 0.0);
        for p in window {
            let w = self.kernel.weight((p.t - t0) / h);
            let dd = p.t - t0 - dbar;
            sdd += w * dd * dd;
            sdy += w * dd * (p.y - ybar);
        }
        if sdd / s0 <= 1e-12 * h * h {
            // No spread: the intercept is identified only when every point
            // sits at t0 itself.
            return (dbar.abs() <= 1e-12 * h).then_some(ybar);
        }
        let slope = sdy / sdd;
        Some(ybar - slope * dbar)
    }

    /// Local fit that doubles the bandwidth up to three times when the
    /// window is degenerate.
    fn fit(&self, t0: f64, h: f64, exclude: Option<usize>) -> Result<f64> {
        let mut width = h;
        for _ in 0..=MAX_WIDENINGS {
            if let Some(v) = self.local_fit(t0, width, exclude) {
                return Ok(v);
            }
            width *= 2.0;
        }
        Err(Error::DegenerateSmoother { t0 })
    }
}

fn check_inputs(points: &[(f64, f64)], bandwidth: f64) -> Result<()> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if points.is_empty() {
        return Err(Error::InsufficientData("no points to smooth".into()));
    }
    if points.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite point".into()));
    }
    Ok(())
}

/// Local linear fit with the default (Epanechnikov) kernel.
pub fn fit_local_linear(points: &[(f64, f64)], bandwidth: f64, grid: &[f64]) -> Result<MeanEstimate> {
    fit_local_linear_with(points, bandwidth, grid, Kernel::default())
}

/// At each grid point returns the intercept of the kernel-weighted least
/// squares line of `y` on `t - t0`.
pub fn fit_local_linear_with(
    points: &[(f64, f64)],
    bandwidth: f64,
    grid: &[f64],
    kernel: Kernel,
) -> Result<MeanEstimate> {
    check_inputs(points, bandwidth)?;
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("grid must be non-empty and strictly increasing".into()));
    }
    let smoother = Smoother::new(
        points.iter().map(|&(t, y)| Point { t, y, group: 0 }).collect(),
        kernel,
    );
    let values = par::map(grid, |&t0| smoother.fit(t0, bandwidth, None))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(MeanEstimate {
        grid: grid.to_vec(),
        values,
        bandwidth,
        kernel,
    })
}

/// Evaluates the smoother directly at arbitrary points (no grid).
pub fn local_linear_at(points: &[(f64, f64)], bandwidth: f64, at: &[f64], kernel: Kernel) -> Result<Vec<f64>> {
    check_inputs(points, bandwidth)?;
    let smoother = Smoother::new(
        points.iter().map(|&(t, y)| Point { t, y, group: 0 }).collect(),
        kernel,
    );
    at.iter().map(|&t0| smoother.fit(t0, bandwidth, None)).collect()
}

/// Leave-one-subject-out prediction error of the smoother for each
/// candidate; `None` where some held-out point cannot be predicted.
pub fn bandwidth_cv_scores(groups: &[Vec<(f64, f64)>], candidates: &[f64], kernel: Kernel) -> Vec<Option<f64>> {
    let points: Vec<Point> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, pts)| pts.iter().map(move |&(t, y)| Point { t, y, group: g }))
        .collect();
    let smoother = Smoother::new(points, kernel);
    candidates
        .iter()
        .map(|&h| {
            let per_group = par::map_range(groups.len(), |g| {
                groups[g].iter().try_fold(0.0, |acc, &(t, y)| {
                    smoother.fit(t, h, Some(g)).ok().map(|fit| acc + (y - fit).powi(2))
                })
            });
            per_group.into_iter().try_fold(0.0, |acc, s| s.map(|s| acc + s))
        })
        .collect()
}

/// Bandwidth minimising leave-one-subject-out squared prediction error;
/// ties go to the larger bandwidth.
pub fn select_bandwidth(groups: &[Vec<(f64, f64)>], candidates: &[f64]) -> Result<f64> {
    select_bandwidth_with(groups, candidates, Kernel::default())
}

pub fn select_bandwidth_with(groups: &[Vec<(f64, f64)>], candidates: &[f64], kernel: Kernel) -> Result<f64> {
    if candidates.is_empty() || candidates.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidArgument("bandwidth candidates must be positive".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() == 1 {
        return Ok(sorted[0]);
    }
    if groups.iter().filter(|g| !g.is_empty()).count() < 2 {
        return Err(Error::InsufficientData("bandwidth selection needs at least two subjects".into()));
    }

    let n: usize = groups.iter().map(Vec::len).sum();
    let ybar = groups.iter().flatten().map(|p| p.1).sum::<f64>() / n as f64;
    let total_ss: f64 = groups.iter().flatten().map(|p| (p.1 - ybar).powi(2)).sum();

    let scores = bandwidth_cv_scores(groups, &sorted, kernel);
    let mut best: Option<(f64, f64)> = None;
    for (&h, score) in sorted.iter().zip(scores) {
        let Some(score) = score else { continue };
        best = match best {
            None => Some((h, score)),
            Some((bh, bs)) => {
                let tol = 1e-10 * bs.abs().max(score.abs()) + 1e-12 * total_ss;
                if score <= bs + tol {
                    Some((h, score.min(bs)))
                } else {
                    Some((bh, bs))
                }
            }
        };
    }
    best.map(|(h, _)| h)
        .ok_or_else(|| Error::Numerical("every bandwidth candidate gives a degenerate fit".into()))
}
