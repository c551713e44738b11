use proptest::prelude::*;

use vbll_calib::metrics::{
    auc_roc, brier, ece, evaluate, nll, reliability_bins, EceWeighting, PredictionSet,
};

/// Probabilities on a 1/1000 grid, coarse enough that the transforms below
/// cannot merge two distinct values into a tie.
fn rows() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60)
        .prop_flat_map(|n| {
            (
                prop::collection::vec((0u32..=1000).prop_map(|k| k as f64 / 1000.0), n),
                prop::collection::vec(0u8..=1, n),
            )
        })
        .prop_filter("both classes", |(_, y)| y.contains(&0) && y.contains(&1))
}

proptest! {
    #[test]
    fn auc_ignores_monotone_transforms((p, y) in rows()) {
        let base = auc_roc(&PredictionSet::new(p.clone(), y.clone()).unwrap()).unwrap();
        let maps: [fn(f64) -> f64; 3] = [|v| v * v, f64::sqrt, |v| 0.1 + 0.8 * v.powi(3)];
        for f in maps {
            let q = p.iter().map(|&v| f(v)).collect();
            let a = auc_roc(&PredictionSet::new(q, y.clone()).unwrap()).unwrap();
            prop_assert!((a - base).abs() < 1e-12);
        }
        let flipped = p.iter().map(|v| 1.0 - v).collect();
        let a = auc_roc(&PredictionSet::new(flipped, y.clone()).unwrap()).unwrap();
        prop_assert!((a - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_row_order((p, y) in rows(), shift in 0usize..60) {
        let pred = PredictionSet::new(p.clone(), y.clone()).unwrap();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.rotate_left(shift % p.len());
        idx.reverse();
        let perm = PredictionSet::new(
            idx.iter().map(|&i| p[i]).collect(),
            idx.iter().map(|&i| y[i]).collect(),
        )
        .unwrap();
        for w in [EceWeighting::MassWeighted, EceWeighting::BinMean] {
            let a = ece(&pred, 40, w).unwrap();
            let b = ece(&perm, 40, w).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((auc_roc(&pred).unwrap() - auc_roc(&perm).unwrap()).abs() < 1e-12);
        prop_assert!((brier(&pred) - brier(&perm)).abs() < 1e-12);
        prop_assert!((nll(&pred) - nll(&perm)).abs() < 1e-12);
    }

    #[test]
    fn report_stays_in_range((p, y) in rows(), bins in 1usize..60) {
        let pred = PredictionSet::new(p, y).unwrap();
        let (report, table) = evaluate(&pred, bins).unwrap();
        prop_assert!(report.check_invariants().is_ok());
        prop_assert_eq!(table.total_count(), pred.len());
        for b in table.non_empty() {
            let c = b.confidence.unwrap();
            prop_assert!(c >= b.lo - 1e-12 && c <= b.hi + 1e-12);
        }
    }
}

#[test]
fn certain_and_correct_is_perfect() {
    let pred = PredictionSet::new(vec![0.0, 1.0, 1.0, 0.0], vec![0, 1, 1, 0]).unwrap();
    let (r, bins) = evaluate(&pred, 40).unwrap();
    assert_eq!((r.accuracy, r.f1, r.auc_roc, r.brier), (1.0, 1.0, 1.0, 0.0));
    assert_eq!((r.ece_mass, r.ece_bin_mean), (0.0, 0.0));
    assert!(r.nll < 1e-11);
    assert_eq!(bins.non_empty().count(), 2);
    assert_eq!(bins.bins[39].count, 2);
}

#[test]
fn weightings_differ_on_unbalanced_bins() {
    // 9 rows in a calibrated bin, 1 row with gap 0.9
    let mut p = vec![0.5; 9];
    let mut y = vec![1, 0, 1, 0, 1, 0, 1, 0, 1];
    p.push(0.9);
    y.push(0);
    let pred = PredictionSet::new(p, y).unwrap();
    let bins = reliability_bins(&pred, 10).unwrap();
    let mass = bins.ece(EceWeighting::MassWeighted);
    let mean = bins.ece(EceWeighting::BinMean);
    // bin at 0.5 has 5/9 positives, gap 1/18
    assert!((mass - (9.0 / 10.0 * (1.0 / 18.0) + 0.09)).abs() < 1e-12);
    assert!((mean - (1.0 / 18.0 + 0.9) / 2.0).abs() < 1e-12);
}
