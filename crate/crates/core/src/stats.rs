//! Small statistical helpers: reference distributions, transforms and
//! simple linear regression.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Upper tail probability of a chi-square distribution.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    dist.sf(x).clamp(0.0, 1.0)
}

/// Two-sided p-value of a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Transform applied to a covariate before it enters a regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    #[default]
    Identity,
    Log,
}

impl Transform {
    pub fn apply(self, v: f64) -> Result<f64> {
        match self {
            Transform::Identity => Ok(v),
            Transform::Log if v > 0.0 => Ok(v.ln()),
            Transform::Log => Err(Error::InvalidArgument(format!("log transform of non-positive value {v}"))),
        }
    }
}

/// Least-squares line `y = alpha + beta x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ols {
    pub alpha: f64,
    pub beta: f64,
    pub sse: f64,
    pub sxx: f64,
    pub n: usize,
}

impl Ols {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Ols> {
        let n = x.len();
        if n != y.len() || n < 2 {
            return Err(Error::InsufficientData("regression needs at least two paired points".into()));
        }
        let xbar = x.iter().sum::<f64>() / n as f64;
        let ybar = y.iter().sum::<f64>() / n as f64;
        let sxx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xbar) * (b - ybar)).sum();
        let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        if sxx <= 1e-24 * scale * scale * n as f64 {
            return Err(Error::InvalidArgument("regressor is constant; slope undefined".into()));
        }
        let beta = sxy / sxx;
        let alpha = ybar - beta * xbar;
        let sse = x.iter().zip(y).map(|(a, b)| (b - alpha - beta * a).powi(2)).sum();
        Ok(Ols {
            alpha,
            beta,
            sse,
            sxx,
            n,
        })
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.alpha + self.beta * x
    }

    /// Standard error of the slope, `NaN` with fewer than three points.
    pub fn slope_se(&self) -> f64 {
        if self.n < 3 {
            return f64::NAN;
        }
        (self.sse / (self.n - 2) as f64 / self.sxx).sqrt()
    }

    /// Two-sided t-test of a zero slope on `n - 2` degrees of freedom.
    pub fn slope_p_value(&self) -> f64 {
        if self.n < 3 {
            return f64::NAN;
        }
        let se = self.slope_se();
        if se == 0.0 {
            return if self.beta == 0.0 { 1.0 } else { 0.0 };
        }
        t_two_sided_p(self.beta / se, (self.n - 2) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_quantile() {
        assert!((chi2_sf(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-10);
        assert!((chi2_sf(3.84, 1.0) - 0.05).abs() < 1e-3);
        assert_eq!(chi2_sf(0.0, 1.0), 1.0);
    }

    #[test]
    fn t_quantile() {
        // t_{0.975, 10} = 2.228138851986...
        assert!((t_two_sided_p(2.228_138_851_986_273_5, 10.0) - 0.05).abs() < 1e-9);
        assert_eq!(t_two_sided_p(0.0, 5.0), 1.0);
    }

    #[test]
    fn ols_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let fit = Ols::fit(&x, &y).unwrap();
        assert!((fit.alpha - 1.5).abs() < 1e-12 && (fit.beta + 2.0).abs() < 1e-12);
        assert_eq!(fit.slope_p_value(), 0.0);
        assert!(Ols::fit(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn log_transform_rejects_non_positive() {
        assert!((Transform::Log.apply(100.0).unwrap() - 100f64.ln()).abs() < 1e-15);
        assert!(Transform::Log.apply(0.0).is_err());
        assert_eq!(Transform::Identity.apply(-3.0).unwrap(), -3.0);
    }
}
