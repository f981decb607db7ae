//! Brute-force nearest-class-mean baseline.

use crate::dataset::{EmbeddingDataset, Split};
use crate::error::{Error, Result};
use crate::linalg::{self, euclidean};

/// Mean training vector of every class, in `label_set` order.
pub fn training_means(dataset: &EmbeddingDataset) -> Result<Vec<Vec<f64>>> {
    dataset
        .label_set()
        .iter()
        .map(|label| {
            let rows = dataset
                .samples()
                .iter()
                .filter(|s| s.split == Split::Train && &s.label == label)
                .map(|s| s.features.as_slice());
            linalg::mean_of(rows, dataset.dim())
                .ok_or_else(|| Error::Dataset(format!("class {label} has no training samples")))
        })
        .collect()
}

/// Index into `label_set` of the nearest training mean for every sample;
/// ties go to the lowest class index.
pub fn oracle_nearest_center(dataset: &EmbeddingDataset) -> Result<Vec<usize>> {
    let means = training_means(dataset)?;
    Ok(dataset
        .samples()
        .iter()
        .map(|s| {
            let d: Vec<f64> = means.iter().map(|m| euclidean(&s.features, m)).collect();
            linalg::argmin(&d)
        })
        .collect())
}
