use super::Matrix;
use crate::error::{Error, Result};

/// Tolerance on row sums of a probability matrix.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Predicted class probabilities with their true labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    probs: Matrix,
    labels: Vec<usize>,
}

impl PredictionSet {
    /// Validates that rows are distributions and labels index a class.
    pub fn new(probs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if probs.rows() != labels.len() {
            return Err(Error::dim(format!(
                "{} probability rows but {} labels",
                probs.rows(),
                labels.len()
            )));
        }
        if probs.cols() < 2 {
            return Err(Error::data("predictions need at least 2 classes"));
        }
        for (i, row) in probs.iter_rows().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::data(format!("row {i} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::data(format!("row {i} sums to {sum}, not 1")));
            }
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= probs.cols()) {
            return Err(Error::data(format!(
                "label {y} of sample {i} out of range for {} classes",
                probs.cols()
            )));
        }
        Ok(Self { probs, labels })
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
