use serde::{Deserialize, Serialize};

use super::{Dataset, Variable};

/// Mean, unbiased variance and pairwise-complete Pearson correlations of the
/// first visit of every subject. Undefined entries are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub variables: Vec<Variable>,
    pub count: Vec<usize>,
    pub mean: Vec<Option<f64>>,
    pub variance: Vec<Option<f64>>,
    pub correlation: Vec<Vec<Option<f64>>>,
}

fn mean_var(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = xs.len();
    if n == 0 {
        return (None, None);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (Some(mean), Some(ss / (n - 1) as f64))
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn describe_baseline(ds: &Dataset) -> BaselineSummary {
    let baselines: Vec<_> = ds.subjects.iter().filter_map(|s| s.observations.first()).collect();
    let vars = Variable::ALL.to_vec();
    let column = |v: Variable| -> Vec<f64> { baselines.iter().filter_map(|o| o.get(v)).collect() };

    let (mut count, mut mean, mut variance) = (Vec::new(), Vec::new(), Vec::new());
    for &v in &vars {
        let xs = column(v);
        let (m, s2) = mean_var(&xs);
        count.push(xs.len());
        mean.push(m);
        variance.push(s2);
    }

    let k = vars.len();
    let mut correlation = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let pairs: Vec<(f64, f64)> = baselines
                .iter()
                .filter_map(|o| Some((o.get(vars[i])?, o.get(vars[j])?)))
                .collect();
            let r = if i == j { pearson(&pairs).map(|_| 1.0) } else { pearson(&pairs) };
            correlation[i][j] = r;
            correlation[j][i] = r;
        }
    }

    BaselineSummary {
        variables: vars,
        count,
        mean,
        variance,
        correlation,
    }
}
