//! Open-set metrics over known classes with unknown-induced errors.
//!
//! Unknown samples accepted as class `j` count as false positives of `j`;
//! known samples rejected as unknown count as false negatives of their class.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sample's truth and decisions, labels as strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    /// `None` for samples of unknown classes.
    pub truth: Option<String>,
    /// Final decision, `None` when rejected.
    pub predicted: Option<String>,
    /// Prediction with rejection disabled; falls back to `predicted`.
    pub closed_set: Option<String>,
}

impl LabeledPrediction {
    pub fn new(truth: Option<&str>, predicted: Option<&str>) -> Self {
        Self {
            truth: truth.map(str::to_owned),
            predicted: predicted.map(str::to_owned),
            closed_set: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenSetConfusion {
    pub labels: Vec<String>,
    pub per_class: Vec<ClassCounts>,
    pub known_total: u64,
    pub known_correct: u64,
    pub known_correct_closed_set: u64,
    pub known_rejected: u64,
    pub unknown_total: u64,
    pub unknown_rejected: u64,
}

pub fn build_confusion(
    known_labels: &[String],
    predictions: &[LabeledPrediction],
) -> Result<OpenSetConfusion> {
    let index: HashMap<&str, usize> = known_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let lookup = |label: &Option<String>| -> Result<Option<usize>> {
        match label {
            None => Ok(None),
            Some(l) => index
                .get(l.as_str())
                .copied()
                .map(Some)
                .ok_or_else(|| Error::UnknownLabel(l.clone())),
        }
    };
    let mut confusion = OpenSetConfusion::empty(known_labels.to_vec());
    for p in predictions {
        let truth = lookup(&p.truth)?;
        let predicted = lookup(&p.predicted)?;
        let closed = match &p.closed_set {
            Some(_) => lookup(&p.closed_set)?,
            None => predicted,
        };
        confusion.record(truth, predicted, closed);
    }
    Ok(confusion)
}

impl OpenSetConfusion {
    pub fn empty(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            per_class: vec![ClassCounts::default(); n],
            known_total: 0,
            known_correct: 0,
            known_correct_closed_set: 0,
            known_rejected: 0,
            unknown_total: 0,
            unknown_rejected: 0,
        }
    }

    /// Adds one sample given class indices (`None` = unknown / rejected).
    pub fn record(
        &mut self,
        truth: Option<usize>,
        predicted: Option<usize>,
        closed_set: Option<usize>,
    ) {
        match truth {
            Some(t) => {
                self.known_total += 1;
                if closed_set == Some(t) {
                    self.known_correct_closed_set += 1;
                }
                match predicted {
                    Some(p) if p == t => {
                        self.known_correct += 1;
                        self.per_class[t].tp += 1;
                    }
                    Some(p) => {
                        self.per_class[t].fn_ += 1;
                        self.per_class[p].fp += 1;
                    }
                    None => {
                        self.known_rejected += 1;
                        self.per_class[t].fn_ += 1;
                    }
                }
            }
            None => {
                self.unknown_total += 1;
                match predicted {
                    Some(p) => self.per_class[p].fp += 1,
                    None => self.unknown_rejected += 1,
                }
            }
        }
    }

    pub fn merge(&mut self, other: &OpenSetConfusion) -> Result<()> {
        if self.labels != other.labels {
            return Err(Error::InvalidInput(
                "cannot merge confusions over different classes".into(),
            ));
        }
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
        self.known_total += other.known_total;
        self.known_correct += other.known_correct;
        self.known_correct_closed_set += other.known_correct_closed_set;
        self.known_rejected += other.known_rejected;
        self.unknown_total += other.unknown_total;
        self.unknown_rejected += other.unknown_rejected;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.known_total + self.unknown_total
    }

    /// Known-sample accuracy; `thresholded` counts rejections as errors,
    /// otherwise the closed-set prediction is scored.
    pub fn known_accuracy(&self, thresholded: bool) -> Result<f64> {
        if self.known_total == 0 {
            return Err(Error::InvalidInput("no known-class samples".into()));
        }
        let correct = if thresholded {
            self.known_correct
        } else {
            self.known_correct_closed_set
        };
        Ok(correct as f64 / self.known_total as f64)
    }

    pub fn unknown_accuracy(&self) -> Result<f64> {
        if self.unknown_total == 0 {
            return Err(Error::InvalidInput("no unknown-class samples".into()));
        }
        Ok(self.unknown_rejected as f64 / self.unknown_total as f64)
    }

    /// Sample-weighted accuracy over known and unknown samples.
    pub fn open_set_accuracy(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::InvalidInput("no samples".into()));
        }
        Ok((self.known_correct + self.unknown_rejected) as f64 / self.total() as f64)
    }

    /// F1 of class `j`; `None` when the class has neither support nor predictions.
    pub fn class_f1(&self, j: usize) -> Option<f64> {
        let c = self.per_class[j];
        let support = c.tp + c.fn_;
        let predicted = c.tp + c.fp;
        if support == 0 && predicted == 0 {
            return None;
        }
        if c.tp == 0 {
            return Some(0.0);
        }
        let precision = c.tp as f64 / predicted as f64;
        let recall = c.tp as f64 / support as f64;
        Some(2.0 * precision * recall / (precision + recall))
    }

    pub fn open_set_fscore(&self, averaging: Averaging) -> Result<f64> {
        if self.labels.is_empty() {
            return Err(Error::InvalidInput("no known classes".into()));
        }
        if !self.per_class.iter().any(|c| c.tp + c.fn_ > 0) {
            return Err(Error::InvalidInput("no known class has support".into()));
        }
        match averaging {
            Averaging::Macro => {
                let scores: Vec<f64> = (0..self.labels.len())
                    .filter_map(|j| self.class_f1(j))
                    .collect();
                Ok(scores.iter().sum::<f64>() / scores.len() as f64)
            }
            Averaging::Micro => {
                let (tp, fp, fn_) = self
                    .per_class
                    .iter()
                    .fold((0, 0, 0), |(a, b, c), k| (a + k.tp, b + k.fp, c + k.fn_));
                if tp == 0 {
                    return Ok(0.0);
                }
                Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
            }
        }
    }

    pub fn report(&self, averaging: Averaging) -> Result<MetricReport> {
        let per_class = self
            .labels
            .iter()
            .enumerate()
            .map(|(j, label)| {
                let c = self.per_class[j];
                let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
                (
                    label.clone(),
                    ClassMetrics {
                        tp: c.tp,
                        fp: c.fp,
                        fn_: c.fn_,
                        precision: ratio(c.tp, c.tp + c.fp),
                        recall: ratio(c.tp, c.tp + c.fn_),
                        f1: self.class_f1(j),
                    },
                )
            })
            .collect();
        Ok(MetricReport {
            known_acc: self.known_accuracy(false)?,
            known_acc_th: self.known_accuracy(true)?,
            unknown_acc: self.unknown_accuracy().ok(),
            open_set_acc: self.open_set_accuracy()?,
            open_set_fscore: self.open_set_fscore(averaging)?,
            averaging,
            per_class,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// The five table columns plus per-class detail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub known_acc: f64,
    pub known_acc_th: f64,
    /// Absent when the evaluation had no unknown samples.
    pub unknown_acc: Option<f64>,
    pub open_set_acc: f64,
    pub open_set_fscore: f64,
    pub averaging: Averaging,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

pub const CSV_HEADER: &str = "known_acc,known_acc_th,unknown_acc,open_set_acc,open_set_fscore";

impl MetricReport {
    /// Metrics in table column order; unknown accuracy may be absent.
    pub fn columns(&self) -> [Option<f64>; 5] {
        [
            Some(self.known_acc),
            Some(self.known_acc_th),
            self.unknown_acc,
            Some(self.open_set_acc),
            Some(self.open_set_fscore),
        ]
    }

    pub fn csv_row(&self) -> String {
        self.columns()
            .iter()
            .map(|c| c.map(|v| v.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn evaluate(
    known_labels: &[String],
    predictions: &[LabeledPrediction],
    averaging: Averaging,
) -> Result<MetricReport> {
    build_confusion(known_labels, predictions)?.report(averaging)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    fn lp(truth: Option<&str>, predicted: Option<&str>) -> LabeledPrediction {
        LabeledPrediction::new(truth, predicted)
    }

    #[test]
    fn perfect_closed_set() {
        let preds = vec![lp(Some("A"), Some("A")), lp(Some("B"), Some("B"))];
        let c = build_confusion(&names(&["A", "B"]), &preds).unwrap();
        assert!(c.per_class.iter().all(|k| k.fp == 0 && k.fn_ == 0));
        assert_eq!(c.known_accuracy(true).unwrap(), 1.0);
        assert_eq!(c.open_set_fscore(Averaging::Macro).unwrap(), 1.0);
        assert!(c.unknown_accuracy().is_err());
    }

    #[test]
    fn unknown_accepted_is_false_positive() {
        let c = build_confusion(&names(&["A"]), &[lp(None, Some("A"))]).unwrap();
        assert_eq!(c.per_class[0].fp, 1);
    }

    #[test]
    fn absent_class_is_an_error() {
        assert!(matches!(
            build_confusion(&names(&["A"]), &[lp(Some("A"), Some("Z"))]),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn six_sample_tally() {
        let preds = vec![
            lp(Some("A"), Some("A")),
            lp(Some("A"), Some("B")),
            lp(Some("A"), None),
            lp(Some("B"), Some("B")),
            lp(None, Some("B")),
            lp(None, None),
        ];
        let c = build_confusion(&names(&["A", "B"]), &preds).unwrap();
        assert_eq!(
            c.per_class[0],
            ClassCounts {
                tp: 1,
                fp: 0,
                fn_: 2
            }
        );
        assert_eq!(
            c.per_class[1],
            ClassCounts {
                tp: 1,
                fp: 2,
                fn_: 0
            }
        );
        assert_eq!(
            (c.known_total, c.unknown_total, c.unknown_rejected),
            (4, 2, 1)
        );
    }

    #[test]
    fn accuracy_hand_counts() {
        let mut preds: Vec<_> = (0..9).map(|_| lp(Some("A"), Some("A"))).collect();
        preds.push(LabeledPrediction {
            truth: Some("A".into()),
            predicted: None,
            closed_set: Some("A".into()),
        });
        let c = build_confusion(&names(&["A"]), &preds).unwrap();
        assert!((c.known_accuracy(true).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(c.known_accuracy(false).unwrap(), 1.0);

        let mut preds: Vec<_> = (0..4).map(|_| lp(None, None)).collect();
        preds.push(lp(None, Some("A")));
        preds.push(lp(Some("A"), Some("A")));
        let c = build_confusion(&names(&["A"]), &preds).unwrap();
        assert!((c.unknown_accuracy().unwrap() - 0.8).abs() < 1e-15);

        let none_rejected: Vec<_> = (0..3).map(|_| lp(None, Some("A"))).collect();
        let c = build_confusion(&names(&["A"]), &none_rejected).unwrap();
        assert_eq!(c.unknown_accuracy().unwrap(), 0.0);

        let mut preds: Vec<_> = (0..90).map(|_| lp(Some("A"), Some("A"))).collect();
        preds.extend((0..10).map(|_| lp(None, Some("A"))));
        let c = build_confusion(&names(&["A"]), &preds).unwrap();
        assert!((c.open_set_accuracy().unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn all_rejected_scores_zero() {
        let preds = vec![lp(Some("A"), None), lp(Some("B"), None), lp(None, None)];
        let c = build_confusion(&names(&["A", "B"]), &preds).unwrap();
        assert_eq!(c.open_set_fscore(Averaging::Macro).unwrap(), 0.0);
        assert_eq!(c.open_set_fscore(Averaging::Micro).unwrap(), 0.0);
    }

    #[test]
    fn twelve_sample_scenario() {
        // Hand tally:
        //   A: truths 4 -> 3 correct, 1 predicted C.   unknown -> A once.
        //   B: truths 4 -> 3 correct, 1 rejected.
        //   C: truths 2 -> 2 correct.                  unknown -> C once.
        //   A: tp 3, fp 1, fn 1 -> P 3/4, R 3/4, F 0.75
        //   B: tp 3, fp 0, fn 1 -> P 1,   R 3/4, F 6/7
        //   C: tp 2, fp 2, fn 0 -> P 1/2, R 1,   F 2/3
        let mut preds = Vec::new();
        preds.extend((0..3).map(|_| lp(Some("A"), Some("A"))));
        preds.push(lp(Some("A"), Some("C")));
        preds.extend((0..3).map(|_| lp(Some("B"), Some("B"))));
        preds.push(lp(Some("B"), None));
        preds.extend((0..2).map(|_| lp(Some("C"), Some("C"))));
        preds.push(lp(None, Some("A")));
        preds.push(lp(None, Some("C")));
        assert_eq!(preds.len(), 12);
        let c = build_confusion(&names(&["A", "B", "C"]), &preds).unwrap();
        let expected = (0.75 + 6.0 / 7.0 + 2.0 / 3.0) / 3.0;
        assert!((c.open_set_fscore(Averaging::Macro).unwrap() - expected).abs() < 1e-15);
        let micro = 2.0 * 8.0 / (16.0 + 3.0 + 2.0);
        assert!((c.open_set_fscore(Averaging::Micro).unwrap() - micro).abs() < 1e-15);
    }

    #[test]
    fn zero_support_zero_prediction_classes_are_skipped() {
        let preds = vec![lp(Some("A"), Some("A"))];
        let c = build_confusion(&names(&["A", "B"]), &preds).unwrap();
        assert_eq!(c.open_set_fscore(Averaging::Macro).unwrap(), 1.0);
        // Predicted but without support counts as zero.
        let preds = vec![lp(Some("A"), Some("A")), lp(None, Some("B"))];
        let c = build_confusion(&names(&["A", "B"]), &preds).unwrap();
        assert_eq!(c.open_set_fscore(Averaging::Macro).unwrap(), 0.5);
    }

    #[test]
    fn report_serializes_columns() {
        let preds = vec![lp(Some("A"), Some("A")), lp(None, None)];
        let r = evaluate(&names(&["A"]), &preds, Averaging::Macro).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        for key in [
            "known_acc",
            "known_acc_th",
            "unknown_acc",
            "open_set_acc",
            "open_set_fscore",
            "per_class",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(r.csv_row(), "1,1,1,1,1");
    }

    fn arb_predictions() -> impl Strategy<Value = Vec<(Option<usize>, Option<usize>, Option<usize>)>>
    {
        prop::collection::vec(
            (
                prop::option::of(0..4usize),
                prop::option::of(0..4usize),
                prop::option::of(0..4usize),
            ),
            1..80,
        )
    }

    fn to_labeled(raw: &[(Option<usize>, Option<usize>, Option<usize>)]) -> Vec<LabeledPrediction> {
        let name = |i: &Option<usize>| i.map(|k| format!("c{k}"));
        raw.iter()
            .map(|(t, p, c)| LabeledPrediction {
                truth: name(t),
                predicted: name(p),
                closed_set: name(c),
            })
            .collect()
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval_and_convex(raw in arb_predictions()) {
            let labels: Vec<String> = (0..4).map(|k| format!("c{k}")).collect();
            let c = build_confusion(&labels, &to_labeled(&raw)).unwrap();
            let osa = c.open_set_accuracy().unwrap();
            prop_assert!((0.0..=1.0).contains(&osa));
            if c.known_total > 0 && c.unknown_total > 0 {
                let ka = c.known_accuracy(true).unwrap();
                let ua = c.unknown_accuracy().unwrap();
                let n = c.total() as f64;
                let mix = (c.known_total as f64 * ka + c.unknown_total as f64 * ua) / n;
                prop_assert!((mix - osa).abs() < 1e-12);
            }
            if let Ok(f) = c.open_set_fscore(Averaging::Macro) {
                prop_assert!((0.0..=1.0).contains(&f));
            }
        }

        #[test]
        fn metrics_ignore_sample_order_and_label_names(raw in arb_predictions(), seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let labels: Vec<String> = (0..4).map(|k| format!("c{k}")).collect();
            let base = build_confusion(&labels, &to_labeled(&raw)).unwrap();
            let mut shuffled = raw.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let perm = [3usize, 1, 0, 2];
            let relabeled: Vec<_> = shuffled
                .iter()
                .map(|(t, p, c)| (t.map(|k| perm[k]), p.map(|k| perm[k]), c.map(|k| perm[k])))
                .collect();
            let other = build_confusion(&labels, &to_labeled(&relabeled)).unwrap();
            prop_assert_eq!(base.open_set_accuracy().unwrap(), other.open_set_accuracy().unwrap());
            match (base.open_set_fscore(Averaging::Macro), other.open_set_fscore(Averaging::Macro)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "fscore availability changed"),
            }
        }

        #[test]
        fn lowering_threshold_trades_unknown_for_known(
            scores in prop::collection::vec((0.0..1.0f64, any::<bool>()), 1..60),
            a in 0.0..1.0f64,
            b in 0.0..1.0f64,
        ) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let labels = vec!["A".to_string()];
            let at = |delta: f64| {
                let preds: Vec<_> = scores
                    .iter()
                    .map(|(s, known)| lp(known.then_some("A"), (*s >= delta).then_some("A")))
                    .collect();
                build_confusion(&labels, &preds).unwrap()
            };
            let (c_lo, c_hi) = (at(lo), at(hi));
            if c_lo.known_total > 0 {
                prop_assert!(c_lo.known_accuracy(true).unwrap() >= c_hi.known_accuracy(true).unwrap());
            }
            if c_lo.unknown_total > 0 {
                prop_assert!(c_lo.unknown_accuracy().unwrap() <= c_hi.unknown_accuracy().unwrap());
            }
        }
    }
}
