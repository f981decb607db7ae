//! Mean and sample standard deviation across folds.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::FoldResult;
use crate::calibration::best_point;
use crate::error::{Error, Result};

/// `(candidate, open-set F-score)` points in grid order.
pub type Curve = Vec<(f64, f64)>;

/// Mean and sample standard deviation (n - 1 denominator) of one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    /// A single value gets standard deviation 0.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

impl fmt::Display for Summary {
    /// Fractions rendered as percentages, e.g. `92.00 ± 2.00%`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}%", self.mean * 100.0, self.std * 100.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub strategy: String,
    pub n_folds: usize,
    pub single_fold: bool,
    /// Table column order; a column is absent when any fold lacks it.
    pub columns: [Option<Summary>; 5],
}

pub const AGGREGATE_HEADER: &str =
    "method,strategy,n_folds,known_acc,known_acc_th,unknown_acc,open_set_acc,open_set_fscore";

impl AggregateRow {
    pub fn csv_row(&self) -> String {
        let mut cells = vec![
            self.method.clone(),
            self.strategy.clone(),
            self.n_folds.to_string(),
        ];
        cells.extend(
            self.columns
                .iter()
                .map(|c| c.map(|s| s.to_string()).unwrap_or_default()),
        );
        cells.join(",")
    }
}

/// One row per (method, strategy) in first-appearance order.
pub fn aggregate(results: &[FoldResult]) -> Result<Vec<AggregateRow>> {
    if results.is_empty() {
        return Err(Error::InvalidInput("no fold results to aggregate".into()));
    }
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in results {
        let key = (r.method.as_str(), r.strategy.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut folds: Vec<usize> = results.iter().map(|r| r.fold).collect();
    folds.sort_unstable();
    folds.dedup();
    for &fold in &folds {
        let mut present: Vec<(&str, &str)> = results
            .iter()
            .filter(|r| r.fold == fold)
            .map(|r| (r.method.as_str(), r.strategy.as_str()))
            .collect();
        present.sort_unstable();
        let mut expected = keys.clone();
        expected.sort_unstable();
        if present != expected {
            return Err(Error::InvalidInput(format!(
                "fold {fold} does not report the same methods as the other folds"
            )));
        }
    }

    Ok(keys
        .into_iter()
        .map(|(method, strategy)| {
            let mut rows: Vec<&FoldResult> = results
                .iter()
                .filter(|r| r.method == method && r.strategy == strategy)
                .collect();
            rows.sort_by_key(|r| r.fold);
            let columns = std::array::from_fn(|i| {
                let values: Option<Vec<f64>> = rows.iter().map(|r| r.report.columns()[i]).collect();
                values.and_then(|v| Summary::of(&v))
            });
            AggregateRow {
                method: method.to_string(),
                strategy: strategy.to_string(),
                n_folds: rows.len(),
                single_fold: rows.len() == 1,
                columns,
            }
        })
        .collect())
}

/// Grid point with the highest mean validation F-score across folds; ties go
/// to the smallest value. Returns the point and its mean curve.
pub fn select_shared_threshold(curves: &[Curve]) -> Result<((f64, f64), Curve)> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidInput("no validation curves".into()))?;
    if first.is_empty() {
        return Err(Error::InvalidInput("validation curve is empty".into()));
    }
    for c in &curves[1..] {
        if c.len() != first.len() || c.iter().zip(first).any(|(a, b)| a.0 != b.0) {
            return Err(Error::InvalidInput(
                "folds were swept over different grids".into(),
            ));
        }
    }
    let n = curves.len() as f64;
    let mean: Vec<(f64, f64)> = first
        .iter()
        .enumerate()
        .map(|(i, &(x, _))| (x, curves.iter().map(|c| c[i].1).sum::<f64>() / n))
        .collect();
    Ok((best_point(&mean), mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{Direction, ThresholdPolicy};
    use crate::evaluation::{Averaging, MetricReport};
    use std::collections::BTreeMap;

    fn result(fold: usize, method: &str, value: f64, unknown: Option<f64>) -> FoldResult {
        FoldResult {
            fold,
            method: method.into(),
            strategy: "fixed".into(),
            policy: ThresholdPolicy::fixed(Direction::HigherIsBetter, 0.5),
            validation_fscore: value,
            report: MetricReport {
                known_acc: value,
                known_acc_th: value,
                unknown_acc: unknown,
                open_set_acc: value,
                open_set_fscore: value,
                averaging: Averaging::Macro,
                per_class: BTreeMap::new(),
            },
            curve: vec![],
        }
    }

    #[test]
    fn hand_mean_and_std() {
        let s = Summary::of(&[0.90, 0.92, 0.94]).unwrap();
        assert!((s.mean - 0.92).abs() < 1e-12);
        assert!((s.std - 0.02).abs() < 1e-12);
        assert_eq!(s.to_string(), "92.00 ± 2.00%");
    }

    #[test]
    fn constant_inputs_have_zero_spread() {
        let s = Summary::of(&[0.7; 5]).unwrap();
        assert_eq!(s.std, 0.0);
        assert!((s.mean - 0.7).abs() < 1e-15);
    }

    #[test]
    fn single_fold_flag() {
        let rows = aggregate(&[result(0, "cac", 0.9, Some(0.8))]).unwrap();
        assert!(rows[0].single_fold);
        assert_eq!(rows[0].columns[0].unwrap().std, 0.0);
    }

    #[test]
    fn missing_unknown_column_stays_absent() {
        let rows = aggregate(&[
            result(0, "cac", 0.9, None),
            result(1, "cac", 0.8, Some(0.5)),
        ])
        .unwrap();
        assert!(rows[0].columns[2].is_none());
        assert_eq!(rows[0].csv_row().split(',').nth(5), Some(""));
    }

    #[test]
    fn heterogeneous_methods_rejected() {
        let results = [
            result(0, "cac", 0.9, None),
            result(0, "openmax", 0.9, None),
            result(1, "cac", 0.9, None),
        ];
        assert!(aggregate(&results).is_err());
    }

    #[test]
    fn shared_threshold_from_mean_curve() {
        let a = vec![(0.1, 0.9), (0.2, 0.6), (0.3, 0.5)];
        let b = vec![(0.1, 0.2), (0.2, 0.8), (0.3, 0.7)];
        let ((x, y), mean) = select_shared_threshold(&[a.clone(), b]).unwrap();
        assert_eq!(x, 0.2);
        assert!((y - 0.7).abs() < 1e-12);
        assert_eq!(mean.len(), 3);
        let ((single, _), _) = select_shared_threshold(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single, 0.1);
        let ((same, _), _) = select_shared_threshold(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same, 0.1);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = vec![(0.1, 0.9)];
        let b = vec![(0.2, 0.9)];
        assert!(select_shared_threshold(&[a, b]).is_err());
    }
}
