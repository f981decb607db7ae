//! Rejection thresholds: one shared threshold chosen by sweeping validation
//! open-set F-score, or per-class thresholds read off a score quantile.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{self, Averaging, LabeledPrediction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

impl Direction {
    /// Boundary-inclusive acceptance test.
    pub fn accepts(self, score: f64, delta: f64) -> bool {
        match self {
            Direction::HigherIsBetter => score >= delta,
            Direction::LowerIsBetter => score <= delta,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::HigherIsBetter => Direction::LowerIsBetter,
            Direction::LowerIsBetter => Direction::HigherIsBetter,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ThresholdRule {
    Fixed(f64),
    PerClass(BTreeMap<String, f64>),
}

/// Accept/reject rule for a method's decision score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyFile", into = "PolicyFile")]
pub struct ThresholdPolicy {
    pub direction: Direction,
    pub rule: ThresholdRule,
    /// Quantile the per-class thresholds were read from, if any.
    pub quantile: Option<f64>,
}

impl ThresholdPolicy {
    pub fn fixed(direction: Direction, delta: f64) -> Self {
        Self {
            direction,
            rule: ThresholdRule::Fixed(delta),
            quantile: None,
        }
    }

    pub fn per_class(
        direction: Direction,
        deltas: BTreeMap<String, f64>,
        quantile: Option<f64>,
    ) -> Self {
        Self {
            direction,
            rule: ThresholdRule::PerClass(deltas),
            quantile,
        }
    }

    pub fn threshold_for(&self, class: &str) -> Result<f64> {
        match &self.rule {
            ThresholdRule::Fixed(d) => Ok(*d),
            ThresholdRule::PerClass(map) => map
                .get(class)
                .copied()
                .ok_or_else(|| Error::MissingClassThreshold(class.to_owned())),
        }
    }

    /// True when `score` for `predicted` is accepted as a known class.
    pub fn apply(&self, predicted: &str, score: f64) -> Result<bool> {
        let delta = self.threshold_for(predicted)?;
        Ok(self.direction.accepts(score, delta))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PolicyKind {
    Fixed,
    PerClass,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    kind: PolicyKind,
    direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_by_class: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    quantile: Option<f64>,
}

impl From<ThresholdPolicy> for PolicyFile {
    fn from(p: ThresholdPolicy) -> Self {
        let (kind, delta, delta_by_class) = match p.rule {
            ThresholdRule::Fixed(d) => (PolicyKind::Fixed, Some(d), None),
            ThresholdRule::PerClass(m) => (PolicyKind::PerClass, None, Some(m)),
        };
        PolicyFile {
            kind,
            direction: p.direction,
            delta,
            delta_by_class,
            quantile: p.quantile,
        }
    }
}

impl TryFrom<PolicyFile> for ThresholdPolicy {
    type Error = String;

    fn try_from(f: PolicyFile) -> std::result::Result<Self, String> {
        let rule = match (f.kind, f.delta, f.delta_by_class) {
            (PolicyKind::Fixed, Some(d), None) => ThresholdRule::Fixed(d),
            (PolicyKind::PerClass, None, Some(m)) => ThresholdRule::PerClass(m),
            (PolicyKind::Fixed, _, _) => return Err("fixed policy needs exactly `delta`".into()),
            (PolicyKind::PerClass, _, _) => {
                return Err("per_class policy needs exactly `delta_by_class`".into())
            }
        };
        Ok(ThresholdPolicy {
            direction: f.direction,
            rule,
            quantile: f.quantile,
        })
    }
}

/// A method's output for one sample before any threshold is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub id: String,
    /// True label, `None` for samples of unknown classes.
    pub truth: Option<String>,
    /// Class chosen by the method; `None` when the method itself already
    /// rejected the sample (the OpenMax unknown slot).
    pub predicted: Option<String>,
    /// Closed-set prediction with rejection disabled.
    pub closed_set: Option<String>,
    /// Probability (OpenMax), cosine similarity (gallery) or rejection score (CAC).
    pub score: f64,
}

impl ScoredPrediction {
    pub fn decide(&self, policy: &ThresholdPolicy) -> Result<LabeledPrediction> {
        let predicted = match &self.predicted {
            Some(class) if policy.apply(class, self.score)? => Some(class.clone()),
            _ => None,
        };
        Ok(LabeledPrediction {
            truth: self.truth.clone(),
            predicted,
            closed_set: self.closed_set.clone(),
        })
    }
}

pub fn apply_policy(
    predictions: &[ScoredPrediction],
    policy: &ThresholdPolicy,
) -> Result<Vec<LabeledPrediction>> {
    predictions.iter().map(|p| p.decide(policy)).collect()
}

/// Open-set F-score of `predictions` under `policy`.
pub fn fscore_under(
    predictions: &[ScoredPrediction],
    known_labels: &[String],
    policy: &ThresholdPolicy,
    averaging: Averaging,
) -> Result<f64> {
    let decided = apply_policy(predictions, policy)?;
    let confusion = evaluation::build_confusion(known_labels, &decided)?;
    confusion.open_set_fscore(averaging)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_threshold: f64,
    pub best_fscore: f64,
    /// `(threshold, open-set F-score)` in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Evaluates every grid threshold on validation predictions (known and
/// unknown samples) and returns the F-score maximizer, smallest on ties.
pub fn sweep_fixed(
    predictions: &[ScoredPrediction],
    known_labels: &[String],
    direction: Direction,
    grid: &[f64],
) -> Result<SweepResult> {
    sweep_fixed_with(predictions, known_labels, direction, grid, Averaging::Macro)
}

/// [`sweep_fixed`] with a choice of F-score averaging.
pub fn sweep_fixed_with(
    predictions: &[ScoredPrediction],
    known_labels: &[String],
    direction: Direction,
    grid: &[f64],
    averaging: Averaging,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("threshold grid is empty".into()));
    }
    if !predictions.iter().any(|p| p.truth.is_some()) {
        return Err(Error::InvalidInput(
            "validation set has no known-class samples".into(),
        ));
    }
    let curve = grid
        .iter()
        .map(|&delta| {
            let policy = ThresholdPolicy::fixed(direction, delta);
            fscore_under(predictions, known_labels, &policy, averaging).map(|f| (delta, f))
        })
        .collect::<Result<Vec<_>>>()?;
    let (best_threshold, best_fscore) = best_point(&curve);
    Ok(SweepResult {
        best_threshold,
        best_fscore,
        curve,
    })
}

/// Highest value on the curve; ties go to the smallest grid value.
pub(crate) fn best_point(curve: &[(f64, f64)]) -> (f64, f64) {
    let mut best = curve[0];
    for &(x, y) in &curve[1..] {
        if y > best.1 || (y == best.1 && x < best.0) {
            best = (x, y);
        }
    }
    best
}

/// `points` evenly spaced values spanning the observed score range.
pub fn default_grid(predictions: &[ScoredPrediction], points: usize) -> Vec<f64> {
    let (lo, hi) = predictions
        .iter()
        .map(|p| p.score)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s), hi.max(s))
        });
    linspace(lo, hi, points)
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        _ if !lo.is_finite() || !hi.is_finite() => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (points - 1) as f64;
            (0..points)
                .map(|i| {
                    if i == points - 1 {
                        hi
                    } else {
                        lo + step * i as f64
                    }
                })
                .collect()
        }
    }
}

/// Sorted-sample linear interpolation quantile: position `(n - 1) q`.
pub fn empirical_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Which validation samples feed a class's quantile.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantilePopulation {
    /// Samples of the class that the method classified correctly.
    #[default]
    CorrectOnly,
    /// Every validation sample of the class, scored for its predicted class.
    All,
}

/// Per-class thresholds at quantile `q` of known-class validation scores.
/// Unknown-class samples in `predictions` are ignored.
pub fn quantile_thresholds(
    predictions: &[ScoredPrediction],
    known_labels: &[String],
    q: f64,
    population: QuantilePopulation,
) -> Result<BTreeMap<String, f64>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidInput(format!(
            "quantile must be in (0, 1), got {q}"
        )));
    }
    let mut scores: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for p in predictions {
        let Some(truth) = p.truth.as_deref() else {
            continue;
        };
        let keep = match population {
            QuantilePopulation::CorrectOnly => p.predicted.as_deref() == Some(truth),
            QuantilePopulation::All => true,
        };
        if keep {
            scores.entry(truth).or_default().push(p.score);
        }
    }
    known_labels
        .iter()
        .map(|label| {
            let values = scores.get(label.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            empirical_quantile(values, q)
                .map(|d| (label.clone(), d))
                .ok_or_else(|| Error::NoCorrectSamples(label.clone()))
        })
        .collect()
}

pub fn quantile_policy(
    predictions: &[ScoredPrediction],
    known_labels: &[String],
    q: f64,
    direction: Direction,
    population: QuantilePopulation,
) -> Result<ThresholdPolicy> {
    let deltas = quantile_thresholds(predictions, known_labels, q, population)?;
    Ok(ThresholdPolicy::per_class(direction, deltas, Some(q)))
}
