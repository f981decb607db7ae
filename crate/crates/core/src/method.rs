//! Method configurations and fitted open-set classifiers.
//!
//! A method pairs a toy-network head with its inference-time decision rule:
//! OpenMax over softmax logits, a cosine gallery over ArcFace embeddings, or
//! anchored-center rejection scores over CAC embeddings. Each fitted method
//! turns a raw feature vector into a [`ScoredPrediction`].

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::calibration::{Direction, ScoredPrediction};
use crate::dataset::{DatasetView, Sample};
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::{train_toy, Head, ToyNetwork, TrainConfig};
use crate::metric_heads::{CacModel, GallerySet};
use crate::openmax::{self, DistanceMetric, OpenMaxConfig, OpenMaxModel};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenMaxParams {
    /// Weibull tail size.
    pub tail_size: usize,
    pub alpha_revise: usize,
    pub distance_metric: DistanceMetric,
}

impl Default for OpenMaxParams {
    fn default() -> Self {
        let c = OpenMaxConfig::default();
        Self {
            tail_size: c.tail_size,
            alpha_revise: c.alpha_revise,
            distance_metric: c.distance_metric,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GalleryParams {
    pub scale: f64,
    pub margin: f64,
    pub embedding_dim: usize,
    pub gallery_size: usize,
}

impl Default for GalleryParams {
    fn default() -> Self {
        Self {
            scale: 8.0,
            margin: 0.3,
            embedding_dim: 16,
            gallery_size: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacParams {
    pub anchor_magnitude: f64,
    pub anchor_weight: f64,
}

impl Default for CacParams {
    fn default() -> Self {
        Self {
            anchor_magnitude: 10.0,
            anchor_weight: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    Openmax(OpenMaxParams),
    #[serde(alias = "arcface")]
    Gallery(GalleryParams),
    Cac(CacParams),
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::Openmax(_) => "openmax",
            MethodConfig::Gallery(_) => "gallery",
            MethodConfig::Cac(_) => "cac",
        }
    }

    /// Configuration with default hyperparameters for a method name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "openmax" => Ok(MethodConfig::Openmax(OpenMaxParams::default())),
            "gallery" | "arcface" => Ok(MethodConfig::Gallery(GalleryParams::default())),
            "cac" => Ok(MethodConfig::Cac(CacParams::default())),
            other => Err(Error::InvalidInput(format!(
                "unknown method {other:?}; expected openmax, gallery or cac"
            ))),
        }
    }

    pub fn direction(&self) -> Direction {
        match self {
            MethodConfig::Openmax(_) | MethodConfig::Gallery(_) => Direction::HigherIsBetter,
            MethodConfig::Cac(_) => Direction::LowerIsBetter,
        }
    }

    pub fn head(&self) -> Head {
        match *self {
            MethodConfig::Openmax(_) => Head::Softmax,
            MethodConfig::Gallery(p) => Head::ArcFace {
                scale: p.scale,
                margin: p.margin,
                embedding_dim: p.embedding_dim,
            },
            MethodConfig::Cac(p) => Head::Cac {
                anchor_magnitude: p.anchor_magnitude,
                anchor_weight: p.anchor_weight,
            },
        }
    }
}

/// The inference-time rule of a fitted method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "model", rename_all = "snake_case")]
pub enum Classifier {
    Openmax(OpenMaxModel),
    Gallery(GallerySet),
    Cac(CacModel),
}

/// A method ready to score samples.
///
/// Without a network the classifier consumes feature vectors directly, which
/// is how externally produced embeddings and activations are handled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedMethod {
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<ToyNetwork>,
    pub classifier: Classifier,
}

/// Decision of a fitted method for one vector, before any threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodOutput {
    /// `None` when the method rejected the sample on its own.
    pub predicted: Option<usize>,
    pub closed_set: usize,
    pub score: f64,
}

/// Training inputs of the known classes, labels as indices into `labels`.
struct TrainingSet<'a> {
    samples: Vec<&'a Sample>,
    classes: Vec<usize>,
}

fn training_set<'a>(train: &DatasetView<'a>, labels: &[String]) -> Result<TrainingSet<'a>> {
    let mut samples = Vec::new();
    let mut classes = Vec::new();
    for s in train.iter() {
        let c = labels
            .iter()
            .position(|l| *l == s.label)
            .ok_or_else(|| Error::UnknownLabel(s.label.clone()))?;
        samples.push(s);
        classes.push(c);
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput(
            "no known-class training samples".into(),
        ));
    }
    Ok(TrainingSet { samples, classes })
}

impl FittedMethod {
    /// Trains the method's head on `train` (known classes only), then fits
    /// the decision rule on the emitted training vectors.
    pub fn fit(
        config: &MethodConfig,
        train: &DatasetView<'_>,
        labels: &[String],
        training: &TrainConfig,
        master_seed: u64,
    ) -> Result<Self> {
        let set = training_set(train, labels)?;
        let inputs: Vec<Vec<f64>> = set.samples.iter().map(|s| s.features.clone()).collect();
        let train_config = TrainConfig {
            seed: seed::derive(master_seed, &format!("train/{}", config.name())),
            ..training.clone()
        };
        let network = train_toy(
            &inputs,
            &set.classes,
            labels.len(),
            config.head(),
            &train_config,
        )?;
        let outputs = inputs
            .iter()
            .map(|x| network.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let predictions: Vec<usize> = outputs.iter().map(|o| network.classify_output(o)).collect();
        let classifier = fit_classifier(config, &set, &outputs, &predictions, labels, master_seed)?;
        Ok(Self {
            labels: labels.to_vec(),
            network: Some(network),
            classifier,
        })
    }

    /// Fits the decision rule directly on the feature vectors of `train`.
    ///
    /// OpenMax expects logits (dimension = class count) and CAC expects
    /// anchored embeddings (dimension = class count).
    pub fn fit_on_vectors(
        config: &MethodConfig,
        train: &DatasetView<'_>,
        labels: &[String],
        master_seed: u64,
    ) -> Result<Self> {
        let set = training_set(train, labels)?;
        let outputs: Vec<Vec<f64>> = set.samples.iter().map(|s| s.features.clone()).collect();
        let predictions: Vec<usize> = match config {
            MethodConfig::Openmax(_) => outputs.iter().map(|o| linalg::argmax(o)).collect(),
            MethodConfig::Gallery(_) => set.classes.clone(),
            MethodConfig::Cac(p) => {
                let anchored = CacModel::anchored(labels.to_vec(), p.anchor_magnitude)?;
                outputs
                    .iter()
                    .map(|o| anchored.best(o).map(|(c, _)| c))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let classifier = fit_classifier(config, &set, &outputs, &predictions, labels, master_seed)?;
        Ok(Self {
            labels: labels.to_vec(),
            network: None,
            classifier,
        })
    }

    pub fn name(&self) -> &'static str {
        match self.classifier {
            Classifier::Openmax(_) => "openmax",
            Classifier::Gallery(_) => "gallery",
            Classifier::Cac(_) => "cac",
        }
    }

    pub fn direction(&self) -> Direction {
        match self.classifier {
            Classifier::Openmax(_) | Classifier::Gallery(_) => Direction::HigherIsBetter,
            Classifier::Cac(_) => Direction::LowerIsBetter,
        }
    }

    /// Sample ids stored inside the fitted structures.
    pub fn stored_ids(&self) -> Vec<&str> {
        match &self.classifier {
            Classifier::Gallery(g) => g
                .classes
                .iter()
                .flat_map(|c| c.ids.iter().map(String::as_str))
                .collect(),
            Classifier::Openmax(_) | Classifier::Cac(_) => Vec::new(),
        }
    }

    pub fn emit(&self, features: &[f64]) -> Result<Vec<f64>> {
        match &self.network {
            Some(net) => net.forward(features),
            None => Ok(features.to_vec()),
        }
    }

    pub fn output(&self, features: &[f64]) -> Result<MethodOutput> {
        let z = self.emit(features)?;
        match &self.classifier {
            Classifier::Openmax(m) => {
                let s = m.score(&z)?;
                Ok(MethodOutput {
                    predicted: (!s.unknown_wins).then_some(s.class),
                    closed_set: linalg::argmax(&z),
                    score: s.probability,
                })
            }
            Classifier::Gallery(g) => {
                let m = g.best_match(&z)?;
                Ok(MethodOutput {
                    predicted: Some(m.class),
                    closed_set: m.class,
                    score: m.similarity,
                })
            }
            Classifier::Cac(c) => {
                let (class, score) = c.best(&z)?;
                Ok(MethodOutput {
                    predicted: Some(class),
                    closed_set: class,
                    score,
                })
            }
        }
    }

    /// Scores every sample of `view`; labels outside `self.labels` become
    /// unknown truths.
    pub fn score_view(&self, view: &DatasetView<'_>) -> Result<Vec<ScoredPrediction>> {
        let known: HashSet<&str> = self.labels.iter().map(String::as_str).collect();
        view.iter()
            .map(|s| {
                let out = self.output(&s.features)?;
                Ok(ScoredPrediction {
                    id: s.id.clone(),
                    truth: known.contains(s.label.as_str()).then(|| s.label.clone()),
                    predicted: out.predicted.map(|c| self.labels[c].clone()),
                    closed_set: Some(self.labels[out.closed_set].clone()),
                    score: out.score,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn fit_classifier(
    config: &MethodConfig,
    set: &TrainingSet<'_>,
    outputs: &[Vec<f64>],
    predictions: &[usize],
    labels: &[String],
    master_seed: u64,
) -> Result<Classifier> {
    match *config {
        MethodConfig::Openmax(p) => {
            let om = OpenMaxConfig {
                tail_size: p.tail_size,
                alpha_revise: p.alpha_revise,
                distance_metric: p.distance_metric,
            };
            Ok(Classifier::Openmax(openmax::calibrate(
                outputs,
                &set.classes,
                predictions,
                labels,
                om,
            )?))
        }
        MethodConfig::Gallery(p) => {
            let ids: Vec<String> = set.samples.iter().map(|s| s.id.clone()).collect();
            Ok(Classifier::Gallery(GallerySet::build(
                &ids,
                &set.classes,
                outputs,
                labels,
                p.gallery_size,
                master_seed,
            )?))
        }
        MethodConfig::Cac(p) => {
            let anchored = CacModel::anchored(labels.to_vec(), p.anchor_magnitude)?;
            Ok(Classifier::Cac(anchored.update_centers(
                outputs,
                &set.classes,
                predictions,
            )?))
        }
    }
}
