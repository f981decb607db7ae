//! Labeled embedding vectors, their CSV encoding, and class partitions.
//!
//! File layout: UTF-8, LF line endings, header `id,label,split,f0,...,f{d-1}`.
//! Feature values are written with 17 significant digits so that a save/load
//! cycle reproduces every `f64` bit for bit. An optional sidecar
//! `<name>.manifest.json` must agree with the CSV when present.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!(
                "unknown split token {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub label: String,
    pub split: Split,
    pub features: Vec<f64>,
}

/// A validated, immutable collection of samples sharing one feature dimension.
///
/// `label_set` lists classes in order of first appearance; that order defines
/// class indices everywhere downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    samples: Vec<Sample>,
    label_set: Vec<String>,
}

impl EmbeddingDataset {
    pub fn new(dim: usize, samples: Vec<Sample>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dataset("dimension must be positive".into()));
        }
        let mut ids = HashSet::with_capacity(samples.len());
        let mut label_set = Vec::new();
        let mut seen = HashSet::new();
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::Dataset(format!(
                    "sample {} has {} features, expected {dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!(
                    "sample {} has a non-finite feature",
                    s.id
                )));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate id {}", s.id)));
            }
            if seen.insert(s.label.as_str()) {
                label_set.push(s.label.clone());
            }
        }
        Ok(Self {
            dim,
            samples,
            label_set,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn view(&self) -> DatasetView<'_> {
        DatasetView {
            dataset: self,
            indices: (0..self.samples.len()).collect(),
        }
    }
}

/// A borrowed subset of a dataset, stored as sample indices.
#[derive(Clone, Debug)]
pub struct DatasetView<'a> {
    dataset: &'a EmbeddingDataset,
    indices: Vec<usize>,
}

impl<'a> DatasetView<'a> {
    pub fn dataset(&self) -> &'a EmbeddingDataset {
        self.dataset
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Sample> + '_ {
        let samples = &self.dataset.samples;
        self.indices.iter().map(move |&i| &samples[i])
    }

    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> DatasetView<'a> {
        let samples = &self.dataset.samples;
        DatasetView {
            dataset: self.dataset,
            indices: self
                .indices
                .iter()
                .copied()
                .filter(|&i| keep(&samples[i]))
                .collect(),
        }
    }

    pub fn split(&self, split: Split) -> DatasetView<'a> {
        self.filter(|s| s.split == split)
    }

    pub fn ids(&self) -> HashSet<&'a str> {
        self.iter().map(|s| s.id.as_str()).collect()
    }

    /// Caps every class of `split` at `cap` samples by seeded sampling
    /// without replacement. Other splits and small classes pass through;
    /// original sample order is kept.
    pub fn subsample_per_class(&self, split: Split, cap: usize, seed: u64) -> DatasetView<'a> {
        let samples = &self.dataset.samples;
        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &i in &self.indices {
            if samples[i].split == split {
                by_class
                    .entry(samples[i].label.as_str())
                    .or_default()
                    .push(i);
            }
        }
        let mut dropped = HashSet::new();
        for (label, members) in &by_class {
            if members.len() <= cap {
                continue;
            }
            let mut rng = seed::rng(seed, &format!("subsample/{split}/{label}"));
            let chosen: HashSet<usize> = index::sample(&mut rng, members.len(), cap)
                .into_iter()
                .collect();
            dropped.extend(
                members
                    .iter()
                    .enumerate()
                    .filter(|(pos, _)| !chosen.contains(pos))
                    .map(|(_, &i)| i),
            );
        }
        DatasetView {
            dataset: self.dataset,
            indices: self
                .indices
                .iter()
                .copied()
                .filter(|i| !dropped.contains(i))
                .collect(),
        }
    }

    /// Copies the viewed samples into a standalone dataset.
    pub fn to_dataset(&self) -> EmbeddingDataset {
        let samples: Vec<Sample> = self.iter().cloned().collect();
        EmbeddingDataset::new(self.dataset.dim, samples)
            .expect("a subset of a valid dataset is valid")
    }
}

pub fn subsample_per_class(
    dataset: &EmbeddingDataset,
    split: Split,
    cap: usize,
    seed: u64,
) -> DatasetView<'_> {
    dataset.view().subsample_per_class(split, cap, seed)
}

/// Known/unknown/excluded assignment of a dataset's classes.
///
/// `known` keeps dataset label order, which fixes class indices for models.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPartition {
    pub known: Vec<String>,
    pub unknown: BTreeSet<String>,
    pub excluded: BTreeSet<String>,
}

impl ClassPartition {
    pub fn new(
        label_set: &[String],
        unknown: BTreeSet<String>,
        excluded: BTreeSet<String>,
    ) -> Result<Self> {
        if let Some(overlap) = unknown.intersection(&excluded).next() {
            return Err(Error::InvalidInput(format!(
                "class {overlap} is both unknown and excluded"
            )));
        }
        for label in unknown.iter().chain(&excluded) {
            if !label_set.contains(label) {
                return Err(Error::UnknownLabel(label.clone()));
            }
        }
        let known = label_set
            .iter()
            .filter(|l| !unknown.contains(*l) && !excluded.contains(*l))
            .cloned()
            .collect();
        Ok(Self {
            known,
            unknown,
            excluded,
        })
    }

    pub fn is_known(&self, label: &str) -> bool {
        !self.unknown.contains(label) && !self.excluded.contains(label)
    }
}

/// Views produced by [`partition_classes`].
#[derive(Clone, Debug)]
pub struct PartitionViews<'a> {
    pub partition: ClassPartition,
    /// Every split of the known classes.
    pub known: DatasetView<'a>,
    /// Validation and test samples of unknown and excluded classes.
    pub unknown: DatasetView<'a>,
}

pub fn partition_classes<'a>(
    dataset: &'a EmbeddingDataset,
    unknown: &BTreeSet<String>,
    excluded: &BTreeSet<String>,
) -> Result<PartitionViews<'a>> {
    let partition = ClassPartition::new(dataset.label_set(), unknown.clone(), excluded.clone())?;
    let all = dataset.view();
    let known = all.filter(|s| partition.is_known(&s.label));
    let unknown = all.filter(|s| !partition.is_known(&s.label) && s.split != Split::Train);
    Ok(PartitionViews {
        partition,
        known,
        unknown,
    })
}

/// Sidecar describing a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dim: usize,
    pub n_samples: usize,
    pub label_set: Vec<String>,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub created: String,
}

impl DatasetManifest {
    pub fn describe(dataset: &EmbeddingDataset, source: &str, created: &str) -> Self {
        Self {
            dim: dataset.dim,
            n_samples: dataset.len(),
            label_set: dataset.label_set.clone(),
            source: source.to_owned(),
            created: created.to_owned(),
        }
    }

    fn check(&self, dataset: &EmbeddingDataset) -> Result<()> {
        if self.dim != dataset.dim {
            return Err(Error::Manifest(format!(
                "dim {} vs {} in data",
                self.dim, dataset.dim
            )));
        }
        if self.n_samples != dataset.len() {
            return Err(Error::Manifest(format!(
                "n_samples {} vs {} in data",
                self.n_samples,
                dataset.len()
            )));
        }
        let declared: BTreeSet<&String> = self.label_set.iter().collect();
        let actual: BTreeSet<&String> = dataset.label_set.iter().collect();
        if declared != actual {
            return Err(Error::Manifest("label_set differs from data labels".into()));
        }
        Ok(())
    }
}

/// `data/x.csv` -> `data/x.manifest.json`.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.manifest.json"))
}

pub fn save_manifest(manifest: &DatasetManifest, csv_path: &Path) -> Result<()> {
    let path = manifest_path(csv_path);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn load_dataset(path: &Path) -> Result<EmbeddingDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() < 4 || &header[0] != "id" || &header[1] != "label" || &header[2] != "split" {
        return Err(parse_err(
            1,
            "header must start with id,label,split and name at least one feature",
        ));
    }
    for (k, name) in header.iter().skip(3).enumerate() {
        if name != format!("f{k}") {
            return Err(parse_err(
                1,
                format!("feature column {k} is named {name:?}, expected f{k}"),
            ));
        }
    }
    let dim = header.len() - 3;

    let mut samples = Vec::new();
    let mut ids: HashMap<String, u64> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!(
                    "row has {} fields, header has {}",
                    record.len(),
                    header.len()
                ),
            ));
        }
        let id = record[0].to_owned();
        if let Some(first) = ids.insert(id.clone(), line) {
            return Err(parse_err(
                line,
                format!("duplicate id {id:?} (first on line {first})"),
            ));
        }
        let split = record[2]
            .parse::<Split>()
            .map_err(|e| parse_err(line, e.to_string()))?;
        let mut features = Vec::with_capacity(dim);
        for (k, field) in record.iter().skip(3).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("feature f{k} is not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("feature f{k} of row {id:?} is non-finite"),
                ));
            }
            features.push(v);
        }
        samples.push(Sample {
            id,
            label: record[1].to_owned(),
            split,
            features,
        });
    }

    let dataset = EmbeddingDataset::new(dim, samples)?;
    let sidecar = manifest_path(path);
    if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.check(&dataset)?;
    }
    Ok(dataset)
}

/// Formats a feature with 17 significant digits.
pub fn format_feature(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save_dataset(dataset: &EmbeddingDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));

    let mut header = vec!["id".to_owned(), "label".to_owned(), "split".to_owned()];
    header.extend((0..dataset.dim).map(|k| format!("f{k}")));
    writer.write_record(&header).map_err(csv_err)?;

    let mut row: Vec<String> = Vec::with_capacity(dataset.dim + 3);
    for s in &dataset.samples {
        row.clear();
        row.push(s.id.clone());
        row.push(s.label.clone());
        row.push(s.split.to_string());
        row.extend(s.features.iter().map(|v| format_feature(*v)));
        writer.write_record(&row).map_err(csv_err)?;
    }
    let mut inner = writer
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| Error::io(path, e))
}
