//! Predictions CSV: `id,truth,predicted,closed_set,score,decision`.
//!
//! `truth` is `UNKNOWN` for samples of classes the model was not trained on;
//! `predicted` is the method's own choice before thresholding and `decision`
//! the outcome under the policy. Rejections are written as `UNKNOWN`.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{Context, Result};
use openset::calibration::ScoredPrediction;
use openset::evaluation::LabeledPrediction;
use openset::UNKNOWN_TOKEN;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub truth: String,
    pub predicted: String,
    pub closed_set: String,
    pub score: f64,
    pub decision: String,
}

pub fn token(label: Option<&str>) -> String {
    label.unwrap_or(UNKNOWN_TOKEN).to_string()
}

fn label(token: &str) -> Option<String> {
    (token != UNKNOWN_TOKEN).then(|| token.to_string())
}

impl PredictionRow {
    pub fn scored(&self) -> ScoredPrediction {
        ScoredPrediction {
            id: self.id.clone(),
            truth: label(&self.truth),
            predicted: label(&self.predicted),
            closed_set: label(&self.closed_set),
            score: self.score,
        }
    }

    pub fn labeled(&self, thresholded: bool) -> LabeledPrediction {
        let predicted = if thresholded {
            &self.decision
        } else {
            &self.closed_set
        };
        LabeledPrediction {
            truth: label(&self.truth),
            predicted: label(predicted),
            closed_set: label(&self.closed_set),
        }
    }
}

pub fn write(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, record) in r.deserialize().enumerate() {
        let row: PredictionRow =
            record.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Known classes named anywhere in the file, sorted.
pub fn known_labels(rows: &[PredictionRow]) -> Vec<String> {
    let mut known = BTreeSet::new();
    for row in rows {
        for t in [&row.truth, &row.predicted, &row.closed_set, &row.decision] {
            if t != UNKNOWN_TOKEN {
                known.insert(t.clone());
            }
        }
    }
    known.into_iter().collect()
}
