//! Reliability metrics over a [`PredictionSet`].
//!
//! Confidence is the largest class probability. ECE uses `B` equal-width
//! bins over `[0, 1]`; a confidence lying exactly on an interior edge belongs
//! to the bin above it, and `1.0` belongs to the last bin.

use crate::calib::{argmax, EPS_LOG};
use crate::nn::PredictionSet;

pub const DEFAULT_ECE_BINS: usize = 15;

#[derive(Clone, Debug, PartialEq)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Fraction correct; 0 for an empty bin.
    pub accuracy: f64,
    /// Mean confidence; 0 for an empty bin.
    pub confidence: f64,
}

/// Reliability-diagram data.
#[derive(Clone, Debug, PartialEq)]
pub struct BinReport {
    pub bins: Vec<Bin>,
}

/// Lower edge of bin `b`.
pub fn bin_edge(b: usize, bins: usize) -> f64 {
    b as f64 / bins as f64
}

/// Bin holding `confidence` under the edge rule above.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    let mut idx = ((confidence * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    while idx + 1 < bins && confidence >= bin_edge(idx + 1, bins) {
        idx += 1;
    }
    while idx > 0 && confidence < bin_edge(idx, bins) {
        idx -= 1;
    }
    idx
}

/// Expected calibration error `Σ_b (N_b/N) |acc_b - conf_b|`.
pub fn ece(preds: &PredictionSet, bins: usize) -> (f64, BinReport) {
    let bins = bins.max(1);
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    for (row, &y) in preds.probs().iter_rows().zip(preds.labels()) {
        let top = argmax(row);
        let c = row[top];
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        if top == y {
            correct[b] += 1;
        }
    }
    let n = preds.len() as f64;
    let mut total = 0.0;
    let mut report = Vec::with_capacity(bins);
    for b in 0..bins {
        let (acc, conf) = if count[b] > 0 {
            (correct[b] as f64 / count[b] as f64, conf_sum[b] / count[b] as f64)
        } else {
            (0.0, 0.0)
        };
        if count[b] > 0 {
            total += (count[b] as f64 / n) * (acc - conf).abs();
        }
        report.push(Bin {
            lower: bin_edge(b, bins),
            upper: bin_edge(b + 1, bins),
            count: count[b],
            accuracy: acc,
            confidence: conf,
        });
    }
    (total, BinReport { bins: report })
}

/// `Σ_i -log(max(p_i[y_i], ε))`, summed over samples.
pub fn nll(preds: &PredictionSet) -> f64 {
    preds
        .probs()
        .iter_rows()
        .zip(preds.labels())
        .map(|(row, &y)| -row[y].max(EPS_LOG).ln())
        .sum()
}

/// Per-sample mean NLL.
pub fn nll_mean(preds: &PredictionSet) -> f64 {
    nll(preds) / preds.len() as f64
}

/// `(1/N) Σ_n Σ_k (p_nk - 1[y_n = k])²`.
pub fn brier(preds: &PredictionSet) -> f64 {
    let total: f64 = preds
        .probs()
        .iter_rows()
        .zip(preds.labels())
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .map(|(k, &p)| {
                    let d = p - if k == y { 1.0 } else { 0.0 };
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    total / preds.len() as f64
}

/// Fraction of samples whose argmax (ties to the smaller index) is the label.
pub fn accuracy(preds: &PredictionSet) -> f64 {
    let hits = preds
        .probs()
        .iter_rows()
        .zip(preds.labels())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    hits as f64 / preds.len() as f64
}

/// The four numbers written to every ledger row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub ece: f64,
    pub nll_mean: f64,
    pub brier: f64,
}

pub fn summarize(preds: &PredictionSet, bins: usize) -> MetricSummary {
    MetricSummary {
        accuracy: accuracy(preds),
        ece: ece(preds, bins).0,
        nll_mean: nll_mean(preds),
        brier: brier(preds),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    fn set(rows: &[Vec<f64>], labels: &[usize]) -> PredictionSet {
        PredictionSet::new(Matrix::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let p = set(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1]);
        assert_eq!(ece(&p, 15).0, 0.0);
        assert!(nll(&p).abs() < 1e-11);
        assert_eq!(brier(&p), 0.0);
        assert_eq!(accuracy(&p), 1.0);
    }

    #[test]
    fn wrong_one_hot_predictions() {
        let p = set(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1, 0]);
        assert_eq!(accuracy(&p), 0.0);
        assert_eq!(brier(&p), 2.0);
    }

    #[test]
    fn single_bin_ece() {
        let p = set(&[vec![0.8, 0.2], vec![0.6, 0.4]], &[0, 0]);
        let (e, report) = ece(&p, 1);
        assert!((e - 0.3).abs() < 1e-15);
        assert_eq!(report.bins[0].count, 2);
    }

    #[test]
    fn uniform_predictions() {
        let rows = vec![vec![0.1; 10]; 7];
        let p = set(&rows, &[0, 1, 2, 3, 4, 5, 6]);
        assert!((nll(&p) - 7.0 * 10f64.ln()).abs() < 1e-12);
        assert!((brier(&p) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn edges_go_to_the_upper_bin() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 1);
        assert_eq!(bin_index(0.3, 10), 3);
        assert_eq!(bin_index(0.7, 10), 7);
        assert_eq!(bin_index(0.9999, 10), 9);
        assert_eq!(bin_index(1.0, 10), 9);
        for b in 0..15 {
            assert_eq!(bin_index(bin_edge(b, 15), 15), b);
        }
        assert_eq!(bin_index(0.5, 1), 0);
    }

    #[test]
    fn empty_bins_are_reported() {
        let p = set(&[vec![0.95, 0.05]], &[0]);
        let (_, report) = ece(&p, 4);
        assert_eq!(report.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![0, 0, 0, 1]);
        assert_eq!(report.bins[0].accuracy, 0.0);
    }
}
