use sfpca::data::Outcome;
use sfpca::fpca::{select_model, Folds, FpcaSettings};
use sfpca::simulate::{generate, SimTruth};

fn scaled_truth(seed: u64) -> SimTruth {
    let mut truth = SimTruth {
        eigenvalues: vec![4.0, 1.0],
        noise_variance: 0.25,
        seed,
        ..SimTruth::default()
    };
    truth.outcomes.truncate(1);
    truth.biomarkers.clear();
    truth
}

#[test]
fn cross_validation_finds_rank_two() {
    let settings = FpcaSettings::default();
    let mut hits = 0;
    let mut chosen = Vec::new();
    for seed in 0..25 {
        let (ds, _) = generate(&scaled_truth(100 + seed)).unwrap();
        let sel = select_model(&ds, Outcome::Fvc, &[1, 2, 3], &[5, 8], Folds::KFold(10), &settings).unwrap();
        chosen.push(sel.l);
        if sel.l == 2 {
            hits += 1;
        }
    }
    assert!(hits >= 20, "rank 2 chosen in {hits}/25: {chosen:?}");
}

#[test]
fn table_covers_every_admissible_pair() {
    let (ds, _) = generate(&SimTruth {
        n_subjects: 40,
        ..scaled_truth(3)
    })
    .unwrap();
    let sel = select_model(&ds, Outcome::Fvc, &[1, 2, 6], &[5, 8], Folds::KFold(4), &FpcaSettings::default()).unwrap();
    let pairs: Vec<(usize, usize)> = sel.table.iter().map(|e| (e.l, e.m)).collect();
    assert_eq!(pairs, vec![(1, 5), (1, 8), (2, 5), (2, 8), (6, 8)]);
    let best = sel
        .table
        .iter()
        .filter_map(|e| e.score.map(|s| (s, e.l, e.m)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    assert_eq!((best.1, best.2), (sel.l, sel.m));
    assert_eq!(sel.folds.len(), 4);
}
