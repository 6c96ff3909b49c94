mod common;

use common::checks::{self, prediction_case};
use common::random_predictions;
use lth::metrics::{accuracy, brier, ece, nll_mean, summarize};
use lth::nn::{Matrix, PredictionSet};
use proptest::prelude::*;

fn set(rows: &[Vec<f64>], labels: &[usize]) -> PredictionSet {
    let k = rows[0].len();
    PredictionSet::new(Matrix::new(rows.len(), k, rows.concat()).unwrap(), labels.to_vec()).unwrap()
}

#[test]
fn metrics_match_brute_force_on_200_sets() {
    let c = checks::metric_oracles();
    println!("{}", c.detail);
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn confidence_on_an_edge_goes_to_the_upper_bin() {
    let rows = vec![vec![0.6, 0.4], vec![1.0, 0.0], vec![0.5, 0.5]];
    let (_, report) = ece(&set(&rows, &[0, 0, 1]), 5);
    let counts: Vec<usize> = report.bins.iter().map(|b| b.count).collect();
    assert_eq!(counts, vec![0, 0, 1, 1, 1]);
}

#[test]
fn perfect_one_hot_predictions() {
    let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|k| (k == i) as u8 as f64).collect()).collect();
    let m = summarize(&set(&rows, &[0, 1, 2, 3]), 15);
    assert_eq!((m.accuracy, m.ece, m.nll_mean, m.brier), (1.0, 0.0, 0.0, 0.0));
}

#[test]
fn floored_log_bounds_nll() {
    let m = nll_mean(&set(&[vec![1.0, 0.0]], &[1]));
    assert!((m - 1e12f64.ln()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranges_and_bin_consistency(seed in 0u64..100_000, bins in 1usize..40) {
        let (rows, labels, _) = prediction_case(seed);
        let p = set(&rows, &labels);
        let (e, report) = ece(&p, bins);
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(nll_mean(&p) >= 0.0);
        prop_assert!((0.0..=2.0).contains(&brier(&p)));
        let n = rows.len() as f64;
        let weighted: f64 = report.bins.iter().map(|b| b.count as f64 * b.accuracy).sum::<f64>() / n;
        prop_assert!((weighted - accuracy(&p)).abs() < 1e-12);
        for b in &report.bins {
            if b.count > 0 {
                prop_assert!(b.confidence >= b.lower - 1e-12 && b.confidence <= b.upper + 1e-12);
            }
        }
    }

    #[test]
    fn ece_ignores_row_order(seed in 0u64..100_000) {
        let (rows, labels) = random_predictions(40, 5, seed);
        let mut idx: Vec<usize> = (0..40).collect();
        idx.reverse();
        let rev_rows: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
        let rev_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let a = ece(&set(&rows, &labels), 15).0;
        let b = ece(&set(&rev_rows, &rev_labels), 15).0;
        prop_assert!((a - b).abs() < 1e-12);
    }
}
