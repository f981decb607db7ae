//! Unknown-class rotation across folds.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassPartition;
use crate::error::{Error, Result};
use crate::seed;

/// Which classes play the unknown role in each fold.
///
/// Rotating classes are shuffled once by seed and cut into consecutive groups;
/// always-excluded classes are on the unknown side of every fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub unknowns_per_fold: usize,
    pub seed: u64,
    /// Rotating classes in shuffled order; fold `k` takes the `k`-th group.
    pub rotating_classes: Vec<String>,
    pub always_excluded: BTreeSet<String>,
    pub folds: Vec<ClassPartition>,
}

pub fn make_folds(
    label_set: &[String],
    unknowns_per_fold: usize,
    n_folds: usize,
    always_excluded: &BTreeSet<String>,
    seed: u64,
) -> Result<FoldPlan> {
    if n_folds == 0 || unknowns_per_fold == 0 {
        return Err(Error::FoldPlan(format!(
            "need at least one fold and one unknown per fold, got {n_folds} folds of {unknowns_per_fold}"
        )));
    }
    if let Some(missing) = always_excluded.iter().find(|l| !label_set.contains(l)) {
        return Err(Error::UnknownLabel(missing.clone()));
    }
    let mut rotating: Vec<String> = label_set
        .iter()
        .filter(|l| !always_excluded.contains(*l))
        .cloned()
        .collect();
    if rotating.len() != unknowns_per_fold * n_folds {
        return Err(Error::FoldPlan(format!(
            "{} rotating classes cannot form {n_folds} folds of {unknowns_per_fold} unknowns ({} needed)",
            rotating.len(),
            unknowns_per_fold * n_folds
        )));
    }
    let known_per_fold = rotating.len() - unknowns_per_fold;
    if known_per_fold < 2 {
        return Err(Error::FoldPlan(format!(
            "each fold would train on {known_per_fold} classes; at least 2 are needed"
        )));
    }
    rotating.shuffle(&mut seed::rng(seed, "folds"));
    let folds = rotating
        .chunks(unknowns_per_fold)
        .map(|group| {
            ClassPartition::new(
                label_set,
                group.iter().cloned().collect(),
                always_excluded.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldPlan {
        n_folds,
        unknowns_per_fold,
        seed,
        rotating_classes: rotating,
        always_excluded: always_excluded.clone(),
        folds,
    })
}

impl FoldPlan {
    /// Checks coverage: each rotating class is unknown in exactly one fold,
    /// each fold has the configured unknown count and keeps the excluded set.
    pub fn validate(&self) -> Result<()> {
        if self.folds.len() != self.n_folds {
            return Err(Error::FoldPlan(format!(
                "plan lists {} folds, expected {}",
                self.folds.len(),
                self.n_folds
            )));
        }
        let mut seen = BTreeSet::new();
        for (k, fold) in self.folds.iter().enumerate() {
            if fold.unknown.len() != self.unknowns_per_fold {
                return Err(Error::FoldPlan(format!(
                    "fold {k} has {} unknowns, expected {}",
                    fold.unknown.len(),
                    self.unknowns_per_fold
                )));
            }
            if fold.excluded != self.always_excluded {
                return Err(Error::FoldPlan(format!(
                    "fold {k} does not exclude the fixed classes"
                )));
            }
            for label in &fold.unknown {
                if !seen.insert(label.clone()) {
                    return Err(Error::FoldPlan(format!(
                        "class {label} is unknown in more than one fold"
                    )));
                }
            }
        }
        let rotating: BTreeSet<String> = self.rotating_classes.iter().cloned().collect();
        if seen != rotating {
            return Err(Error::FoldPlan(
                "fold unknowns do not cover the rotating classes".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: FoldPlan = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}
