//! Inference-time open-set classifiers over embeddings.

pub mod cac;
pub mod gallery;

pub use cac::{CacModel, RejectionScores};
pub use gallery::{GalleryMatch, GallerySet};

use crate::error::{Error, Result};
use crate::linalg;

/// `(a . b) / (|a| |b|)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let denom = linalg::norm(a) * linalg::norm(b);
    if denom == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((linalg::dot(a, b) / denom).clamp(-1.0, 1.0))
}
