//! Cosine-similarity gallery matching.
//!
//! A gallery keeps up to `gallery_size` training embeddings per class. A query
//! takes the class of its single most similar gallery vector and is rejected
//! when that similarity fails the threshold policy.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::cosine_similarity;
use crate::calibration::{Direction, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::{seed, Decision};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalleryClass {
    pub label: String,
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GallerySet {
    pub gallery_size: usize,
    pub classes: Vec<GalleryClass>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GalleryMatch {
    pub class: usize,
    pub id: String,
    pub similarity: f64,
}

impl GallerySet {
    /// Samples `min(count, per_class)` embeddings of each class, seeded.
    ///
    /// `classes[i]` indexes `labels`; the inputs must come from the training
    /// split only.
    pub fn build(
        ids: &[String],
        classes: &[usize],
        vectors: &[Vec<f64>],
        labels: &[String],
        per_class: usize,
        seed: u64,
    ) -> Result<Self> {
        if ids.len() != classes.len() || classes.len() != vectors.len() {
            return Err(Error::InvalidInput(
                "ids, classes and vectors differ in length".into(),
            ));
        }
        if per_class == 0 {
            return Err(Error::InvalidInput("gallery size must be positive".into()));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(labels.len());
        for (c, label) in labels.iter().enumerate() {
            let members: Vec<usize> = (0..ids.len()).filter(|&i| classes[i] == c).collect();
            if members.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "class {label} has no gallery candidates"
                )));
            }
            let mut chosen: Vec<usize> = if members.len() <= per_class {
                members
            } else {
                let mut rng = seed::rng(seed, &format!("gallery/{label}"));
                index::sample(&mut rng, members.len(), per_class)
                    .into_iter()
                    .map(|k| members[k])
                    .collect()
            };
            chosen.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
            for &i in &chosen {
                if vectors[i].len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: vectors[i].len(),
                    });
                }
                if vectors[i].iter().all(|v| *v == 0.0) {
                    return Err(Error::ZeroVector);
                }
            }
            out.push(GalleryClass {
                label: label.clone(),
                ids: chosen.iter().map(|&i| ids[i].clone()).collect(),
                vectors: chosen.iter().map(|&i| vectors[i].clone()).collect(),
            });
        }
        Ok(Self {
            gallery_size: per_class,
            classes: out,
        })
    }

    pub fn labels(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.label.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.vectors.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Most similar gallery vector; ties go to the lower class index, then
    /// the smaller sample id.
    pub fn best_match(&self, query: &[f64]) -> Result<GalleryMatch> {
        let mut best: Option<(usize, &str, f64)> = None;
        for (c, class) in self.classes.iter().enumerate() {
            for (id, v) in class.ids.iter().zip(&class.vectors) {
                let sim = cosine_similarity(query, v)?;
                let better = match best {
                    None => true,
                    Some((bc, bid, bs)) => {
                        sim > bs || (sim == bs && (c < bc || (c == bc && id.as_str() < bid)))
                    }
                };
                if better {
                    best = Some((c, id, sim));
                }
            }
        }
        let (class, id, similarity) = best.ok_or(Error::EmptyGallery)?;
        Ok(GalleryMatch {
            class,
            id: id.to_owned(),
            similarity,
        })
    }

    pub fn predict(&self, query: &[f64], policy: Option<&ThresholdPolicy>) -> Result<Decision> {
        let m = self.best_match(query)?;
        match policy {
            None => Ok(Decision::Known(m.class)),
            Some(p) => {
                if p.direction != Direction::HigherIsBetter {
                    return Err(Error::InvalidInput(
                        "gallery similarities need a higher-is-better policy".into(),
                    ));
                }
                if p.apply(&self.classes[m.class].label, m.similarity)? {
                    Ok(Decision::Known(m.class))
                } else {
                    Ok(Decision::Unknown)
                }
            }
        }
    }
}
