//! Class anchored clustering scorer.
//!
//! Class centers start on the coordinate axes, `c_i = magnitude * e_i`, in an
//! embedding space with one dimension per class. After training they may be
//! moved to the mean of correctly classified training embeddings. A query's
//! rejection score per class is `d * (1 - softmin(d))` where `d` holds the
//! Euclidean distances to the centers; the lowest score wins.

use serde::{Deserialize, Serialize};

use crate::calibration::{Direction, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::linalg::{self, euclidean};
use crate::Decision;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacModel {
    pub anchor_magnitude: f64,
    pub updated: bool,
    pub labels: Vec<String>,
    pub centers: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RejectionScores {
    pub distances: Vec<f64>,
    pub scores: Vec<f64>,
}

/// `exp(-d_i) / sum_k exp(-d_k)`, shifted by the minimum for stability.
pub fn softmin(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = values.iter().map(|v| (min - v).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl CacModel {
    /// Anchored centers `magnitude * e_i`, one per label.
    pub fn anchored(labels: Vec<String>, anchor_magnitude: f64) -> Result<Self> {
        let n = labels.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "CAC needs at least 2 classes, got {n}"
            )));
        }
        if !(anchor_magnitude > 0.0 && anchor_magnitude.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "anchor magnitude must be positive, got {anchor_magnitude}"
            )));
        }
        let centers = (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                row[i] = anchor_magnitude;
                row
            })
            .collect();
        Ok(Self {
            anchor_magnitude,
            updated: false,
            labels,
            centers,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    /// Moves each center to the mean of its correctly classified embeddings.
    pub fn update_centers(
        &self,
        embeddings: &[Vec<f64>],
        labels: &[usize],
        predictions: &[usize],
    ) -> Result<Self> {
        if embeddings.len() != labels.len() || labels.len() != predictions.len() {
            return Err(Error::InvalidInput(
                "embeddings, labels and predictions differ in length".into(),
            ));
        }
        let n = self.n_classes();
        if let Some(bad) = embeddings.iter().find(|z| z.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        let centers = (0..n)
            .map(|c| {
                let rows = embeddings
                    .iter()
                    .zip(labels.iter().zip(predictions))
                    .filter(|(_, (l, p))| **l == c && **p == c)
                    .map(|(z, _)| z.as_slice());
                linalg::mean_of(rows, n)
                    .ok_or_else(|| Error::NoCorrectSamples(self.labels[c].clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            anchor_magnitude: self.anchor_magnitude,
            updated: true,
            labels: self.labels.clone(),
            centers,
        })
    }

    pub fn distances(&self, z: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_classes();
        if z.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: z.len(),
            });
        }
        Ok(self.centers.iter().map(|c| euclidean(z, c)).collect())
    }

    pub fn scores(&self, z: &[f64]) -> Result<RejectionScores> {
        let distances = self.distances(z)?;
        let soft = softmin(&distances);
        let scores = distances
            .iter()
            .zip(&soft)
            .map(|(d, s)| d * (1.0 - s))
            .collect();
        Ok(RejectionScores { distances, scores })
    }

    /// Class with the lowest rejection score (lowest index on ties) and that score.
    pub fn best(&self, z: &[f64]) -> Result<(usize, f64)> {
        let s = self.scores(z)?;
        let class = linalg::argmin(&s.scores);
        Ok((class, s.scores[class]))
    }

    pub fn predict(&self, z: &[f64], policy: Option<&ThresholdPolicy>) -> Result<Decision> {
        let (class, score) = self.best(z)?;
        match policy {
            None => Ok(Decision::Known(class)),
            Some(p) => {
                if p.direction != Direction::LowerIsBetter {
                    return Err(Error::InvalidInput(
                        "CAC rejection scores need a lower-is-better policy".into(),
                    ));
                }
                if p.apply(&self.labels[class], score)? {
                    Ok(Decision::Known(class))
                } else {
                    Ok(Decision::Unknown)
                }
            }
        }
    }
}
