use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sfpca::data::{Dataset, Outcome};
use sfpca::eval::{subgroup_report, NullForecast};
use sfpca::fpca::{forecast_last, ForecastConfig};
use sfpca::simulate::{generate, SimTruth, VisitModel};

/// Monthly early visits, then a sparse tail, and a random end of follow-up.
fn early_dense_cohort(seed: u64) -> Dataset {
    let mut truth = SimTruth {
        n_subjects: 80,
        seed,
        visits: VisitModel {
            spacing_months: 3.0,
            attendance: 0.9,
            jitter_months: 0.5,
            min_visits: 4,
            max_visits: 21,
        },
        ..SimTruth::default()
    };
    truth.outcomes.truncate(1);
    let (mut ds, _) = generate(&truth).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in &mut ds.subjects {
        let end: f64 = rng.random_range(12.0..60.0);
        let mut kept = Vec::new();
        for o in s.observations.drain(..) {
            let month = o.time;
            if month > end || (month > 24.0 && rng.random_bool(0.85)) {
                continue;
            }
            kept.push(o);
        }
        s.observations = kept;
    }
    ds.subjects.retain(|s| s.observations.len() >= 3);
    ds
}

#[test]
fn early_forecasts_are_at_least_as_good() {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..25 {
        let ds = early_dense_cohort(900 + seed);
        let run = forecast_last(&ds, Outcome::Fvc, &ForecastConfig::fixed(2, 8)).unwrap();
        let rep = subgroup_report(&run.results, NullForecast::IncludeSelf).unwrap();
        assert_eq!(rep.early.count + rep.late.count, rep.n);
        assert_eq!(rep.near.count + rep.far.count, rep.n);
        let (e, l) = (rep.early.mse.unwrap(), rep.late.mse.unwrap());
        detail.push((e.round(), l.round()));
        if e <= l {
            wins += 1;
        }
    }
    assert!(wins >= 18, "early <= late in {wins}/25: {detail:?}");
}
