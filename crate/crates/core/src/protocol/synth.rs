//! Gaussian cluster datasets for desk-scale runs.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingDataset, Sample, Split};
use crate::error::{Error, Result};
use crate::linalg::{euclidean, norm};
use crate::seed;

const CENTER_ATTEMPTS: usize = 10_000;

/// Per-class sample counts for each split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    /// 6:2:2 split of `n`: validation and test get `floor(0.2 n)` each and
    /// train keeps the remainder.
    pub fn from_total(n: usize) -> Self {
        let side = n / 5;
        Self {
            train: n - 2 * side,
            val: side,
            test: side,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_known: usize,
    pub n_unknown: usize,
    pub dim: usize,
    pub per_class: SplitCounts,
    /// Minimum distance between class centers in units of `spread`.
    pub center_separation: f64,
    /// Within-class standard deviation.
    pub spread: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_known: 12,
            n_unknown: 3,
            dim: 16,
            per_class: SplitCounts {
                train: 200,
                val: 100,
                test: 100,
            },
            center_separation: 8.0,
            spread: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn n_classes(&self) -> usize {
        self.n_known + self.n_unknown
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes() < 2 {
            return Err(Error::InvalidInput("need at least 2 classes".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        let c = self.per_class;
        if c.train == 0 || c.val == 0 || c.test == 0 {
            return Err(Error::InvalidInput(format!(
                "per-class counts must be positive, got {}/{}/{}",
                c.train, c.val, c.test
            )));
        }
        if !(self.center_separation >= 0.0 && self.center_separation.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "separation must be nonnegative, got {}",
                self.center_separation
            )));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "spread must be positive, got {}",
                self.spread
            )));
        }
        Ok(())
    }

    pub fn label(&self, class: usize) -> String {
        format!("class_{class:02}")
    }
}

/// Class centers on the sphere of radius `separation * spread`, drawn in
/// sequence and redrawn until each is at least that far from all earlier ones.
pub fn class_centers(spec: &SynthSpec) -> Result<Vec<Vec<f64>>> {
    let radius = spec.center_separation * spec.spread;
    let mut rng = seed::rng(spec.seed, "synth/centers");
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.n_classes());
    for class in 0..spec.n_classes() {
        let mut placed = false;
        for _ in 0..CENTER_ATTEMPTS {
            let direction: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&direction);
            if n == 0.0 {
                continue;
            }
            let candidate: Vec<f64> = direction.iter().map(|v| v / n * radius).collect();
            if centers.iter().all(|c| euclidean(c, &candidate) >= radius) {
                centers.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidInput(format!(
                "could not place class {class} at separation {} in dimension {} after {CENTER_ATTEMPTS} attempts",
                spec.center_separation, spec.dim
            )));
        }
    }
    Ok(centers)
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<EmbeddingDataset> {
    spec.validate()?;
    let centers = class_centers(spec)?;
    let noise = Normal::new(0.0, spec.spread).expect("spread is positive");
    let counts = spec.per_class;
    let mut samples = Vec::with_capacity(spec.n_classes() * counts.total());
    for (class, center) in centers.iter().enumerate() {
        let label = spec.label(class);
        let mut rng = seed::rng(spec.seed, &format!("synth/{label}"));
        let splits = std::iter::repeat_n(Split::Train, counts.train)
            .chain(std::iter::repeat_n(Split::Val, counts.val))
            .chain(std::iter::repeat_n(Split::Test, counts.test));
        for (i, split) in splits.enumerate() {
            let features = center.iter().map(|m| m + noise.sample(&mut rng)).collect();
            samples.push(Sample {
                id: format!("{label}_{i:04}"),
                label: label.clone(),
                split,
                features,
            });
        }
    }
    EmbeddingDataset::new(spec.dim, samples)
}
