//! JSON prediction dumps: `{"num_classes": K, "samples": [{"probs": [...], "label": y}]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, PredictionSet};

use super::ledger::write_atomic;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dump {
    num_classes: usize,
    samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sample {
    probs: Vec<f64>,
    label: usize,
}

pub fn predictions_to_json(preds: &PredictionSet) -> String {
    let dump = Dump {
        num_classes: preds.num_classes(),
        samples: preds
            .probs()
            .iter_rows()
            .zip(preds.labels())
            .map(|(row, &label)| Sample { probs: row.to_vec(), label })
            .collect(),
    };
    serde_json::to_string(&dump).expect("plain numbers serialize")
}

pub fn emit_predictions(preds: &PredictionSet, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), predictions_to_json(preds).as_bytes())
}

/// Parses and validates a dump; errors carry the offending sample or JSON position.
pub fn predictions_from_json(text: &str) -> Result<PredictionSet> {
    let dump: Dump = serde_json::from_str(text)
        .map_err(|e| Error::format(format!("line {} column {}: {e}", e.line(), e.column())))?;
    if dump.samples.is_empty() {
        return Err(Error::data("prediction dump has no samples"));
    }
    let k = dump.num_classes;
    let mut data = Vec::with_capacity(dump.samples.len() * k);
    let mut labels = Vec::with_capacity(dump.samples.len());
    for (i, s) in dump.samples.into_iter().enumerate() {
        if s.probs.len() != k {
            return Err(Error::format(format!(
                "sample {i}: {} probabilities for {k} classes",
                s.probs.len()
            )));
        }
        data.extend(s.probs);
        labels.push(s.label);
    }
    let probs = Matrix::new(labels.len(), k, data).map_err(|e| Error::format(e.to_string()))?;
    PredictionSet::new(probs, labels).map_err(|e| match e {
        Error::Data(m) => Error::format(m),
        other => other,
    })
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    predictions_from_json(&text).map_err(|e| match e {
        Error::Format(m) => Error::format(format!("{}: {m}", path.display())),
        other => other,
    })
}
