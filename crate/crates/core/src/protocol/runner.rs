//! Per-fold training, threshold selection and evaluation.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, select_shared_threshold, AggregateRow, AGGREGATE_HEADER};
use super::folds::{make_folds, FoldPlan};
use crate::calibration::{
    apply_policy, fscore_under, linspace, quantile_policy, Direction, QuantilePopulation,
    ScoredPrediction, ThresholdPolicy,
};
use crate::dataset::{ClassPartition, EmbeddingDataset, Split};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Averaging, MetricReport};
use crate::losses::TrainConfig;
use crate::method::{FittedMethod, MethodConfig};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Fixed,
    Quantile,
    #[default]
    Both,
}

impl Strategy {
    fn fixed(self) -> bool {
        matches!(self, Strategy::Fixed | Strategy::Both)
    }

    fn quantile(self) -> bool {
        matches!(self, Strategy::Quantile | Strategy::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub strategy: Strategy,
    /// Candidate fixed thresholds; when absent, `grid_points` values span the
    /// validation scores of all folds.
    pub grid: Option<Vec<f64>>,
    pub grid_points: usize,
    /// Candidate quantiles; when absent a direction-dependent default is used.
    pub quantile_grid: Option<Vec<f64>>,
    pub population: QuantilePopulation,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Both,
            grid: None,
            grid_points: 200,
            quantile_grid: None,
            population: QuantilePopulation::CorrectOnly,
        }
    }
}

/// Quantile candidates: high quantiles for lower-is-better scores and their
/// mirror images for higher-is-better scores.
pub fn default_quantile_grid(direction: Direction) -> Vec<f64> {
    let high = [0.80, 0.85, 0.90, 0.95, 0.975, 0.99];
    match direction {
        Direction::LowerIsBetter => high.to_vec(),
        Direction::HigherIsBetter => high.iter().rev().map(|q| 1.0 - q).collect(),
    }
}

/// Whether a toy network is trained per fold or the dataset vectors are
/// already embeddings or activations produced elsewhere.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    #[default]
    TrainToy,
    Precomputed,
}

/// Where the always-excluded classes are shown.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcludedPlacement {
    #[default]
    TestOnly,
    ValidationAndTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldsConfig {
    pub n: usize,
    pub unknowns_per_fold: usize,
    pub always_excluded: Vec<String>,
    /// Defaults to the protocol seed.
    pub seed: Option<u64>,
}

impl Default for FoldsConfig {
    fn default() -> Self {
        Self {
            n: 5,
            unknowns_per_fold: 3,
            always_excluded: Vec::new(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub dataset: Option<PathBuf>,
    pub folds: FoldsConfig,
    pub methods: Vec<MethodConfig>,
    pub thresholds: ThresholdConfig,
    pub features: FeatureMode,
    pub training: TrainConfig,
    /// Per-class cap on training samples.
    pub train_cap: Option<usize>,
    pub excluded_placement: ExcludedPlacement,
    pub averaging: Averaging,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            folds: FoldsConfig::default(),
            methods: ["openmax", "gallery", "cac"]
                .iter()
                .map(|m| MethodConfig::by_name(m).expect("built-in method"))
                .collect(),
            thresholds: ThresholdConfig::default(),
            features: FeatureMode::TrainToy,
            training: TrainConfig::default(),
            train_cap: Some(1000),
            excluded_placement: ExcludedPlacement::TestOnly,
            averaging: Averaging::Macro,
            seed: 0,
            output_dir: None,
        }
    }
}

/// Outcome of one method under one threshold strategy on one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub method: String,
    pub strategy: String,
    pub policy: ThresholdPolicy,
    /// Validation open-set F-score at the selected threshold or quantile.
    pub validation_fscore: f64,
    pub report: MetricReport,
    /// Validation `(candidate, open-set F-score)` for this fold.
    pub curve: Vec<(f64, f64)>,
}

/// Scored validation and test samples of one fitted method on one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldScores {
    pub fold: usize,
    pub method: String,
    pub direction: Direction,
    pub known: Vec<String>,
    pub validation: Vec<ScoredPrediction>,
    pub test: Vec<ScoredPrediction>,
}

/// Trains and fits `method` on the known classes of `partition`, then scores
/// validation (known, unknown and optionally excluded classes) and test (all
/// classes). Fails if an unknown-class sample reaches training structures.
pub fn score_fold(
    dataset: &EmbeddingDataset,
    partition: &ClassPartition,
    method: &MethodConfig,
    config: &ProtocolConfig,
    fold: usize,
) -> Result<FoldScores> {
    fit_and_score_fold(dataset, partition, method, config, fold).map(|(_, scores)| scores)
}

/// [`score_fold`] that also returns the fitted method.
pub fn fit_and_score_fold(
    dataset: &EmbeddingDataset,
    partition: &ClassPartition,
    method: &MethodConfig,
    config: &ProtocolConfig,
    fold: usize,
) -> Result<(FittedMethod, FoldScores)> {
    fit_and_score_inner(dataset, partition, method, config, fold).map_err(|e| e.for_fold(fold))
}

fn fit_and_score_inner(
    dataset: &EmbeddingDataset,
    partition: &ClassPartition,
    method: &MethodConfig,
    config: &ProtocolConfig,
    fold: usize,
) -> Result<(FittedMethod, FoldScores)> {
    let all = dataset.view();
    let mut train = all.filter(|s| s.split == Split::Train && partition.is_known(&s.label));
    if let Some(cap) = config.train_cap {
        train = train.subsample_per_class(
            Split::Train,
            cap,
            seed::derive(config.seed, &format!("cap/fold{fold}")),
        );
    }
    let held_out: HashSet<&str> = all.filter(|s| !partition.is_known(&s.label)).ids();
    if let Some(id) = train.iter().find(|s| held_out.contains(s.id.as_str())) {
        return Err(Error::Leakage(id.id.clone()));
    }

    let method_seed = seed::derive(config.seed, &format!("fold{fold}/{}", method.name()));
    let fitted = match config.features {
        FeatureMode::TrainToy => FittedMethod::fit(
            method,
            &train,
            &partition.known,
            &config.training,
            method_seed,
        )?,
        FeatureMode::Precomputed => {
            FittedMethod::fit_on_vectors(method, &train, &partition.known, method_seed)?
        }
    };
    if let Some(id) = fitted
        .stored_ids()
        .into_iter()
        .find(|id| held_out.contains(id))
    {
        return Err(Error::Leakage(id.to_string()));
    }

    let show_excluded = config.excluded_placement == ExcludedPlacement::ValidationAndTest;
    let validation = all.filter(|s| {
        s.split == Split::Val
            && (partition.is_known(&s.label)
                || partition.unknown.contains(&s.label)
                || (show_excluded && partition.excluded.contains(&s.label)))
    });
    let test = all.split(Split::Test);
    let scores = FoldScores {
        fold,
        method: method.name().to_string(),
        direction: fitted.direction(),
        known: partition.known.clone(),
        validation: fitted.score_view(&validation)?,
        test: fitted.score_view(&test)?,
    };
    Ok((fitted, scores))
}

fn fixed_curve(scores: &FoldScores, grid: &[f64], averaging: Averaging) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&delta| {
            let policy = ThresholdPolicy::fixed(scores.direction, delta);
            fscore_under(&scores.validation, &scores.known, &policy, averaging).map(|f| (delta, f))
        })
        .collect()
}

fn quantile_curve(
    scores: &FoldScores,
    grid: &[f64],
    population: QuantilePopulation,
    averaging: Averaging,
) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&q| {
            let policy = quantile_policy(
                &scores.validation,
                &scores.known,
                q,
                scores.direction,
                population,
            )?;
            fscore_under(&scores.validation, &scores.known, &policy, averaging).map(|f| (q, f))
        })
        .collect()
}

fn fixed_grid(folds: &[FoldScores], thresholds: &ThresholdConfig) -> Result<Vec<f64>> {
    let grid = match &thresholds.grid {
        Some(g) => g.clone(),
        None => {
            let (lo, hi) = folds
                .iter()
                .flat_map(|f| &f.validation)
                .map(|p| p.score)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                    (lo.min(s), hi.max(s))
                });
            linspace(lo, hi, thresholds.grid_points)
        }
    };
    if grid.is_empty() {
        return Err(Error::InvalidInput("threshold grid is empty".into()));
    }
    Ok(grid)
}

/// Mean validation curve of one method under one strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCurve {
    pub method: String,
    pub strategy: String,
    pub selected: f64,
    pub points: Vec<(f64, f64)>,
}

fn evaluate_policy(
    scores: &FoldScores,
    policy: &ThresholdPolicy,
    averaging: Averaging,
) -> Result<MetricReport> {
    let decided = apply_policy(&scores.test, policy)?;
    evaluate(&scores.known, &decided, averaging)
}

/// Selects one threshold (and one quantile) shared by all `folds` of a single
/// method from the mean validation curve, then evaluates each fold's test set.
pub fn select_and_evaluate(
    folds: &[FoldScores],
    config: &ProtocolConfig,
) -> Result<(Vec<FoldResult>, Vec<MeanCurve>)> {
    let first = folds
        .first()
        .ok_or_else(|| Error::InvalidInput("no folds to evaluate".into()))?;
    let direction = first.direction;
    let averaging = config.averaging;
    let mut results = Vec::new();
    let mut curves = Vec::new();

    if config.thresholds.strategy.fixed() {
        let grid = fixed_grid(folds, &config.thresholds)?;
        let per_fold = folds
            .iter()
            .map(|f| fixed_curve(f, &grid, averaging).map_err(|e| e.for_fold(f.fold)))
            .collect::<Result<Vec<_>>>()?;
        let ((delta, _), mean) = select_shared_threshold(&per_fold)?;
        let policy = ThresholdPolicy::fixed(direction, delta);
        for (f, curve) in folds.iter().zip(per_fold) {
            let report = evaluate_policy(f, &policy, averaging).map_err(|e| e.for_fold(f.fold))?;
            let validation_fscore = curve
                .iter()
                .find(|p| p.0 == delta)
                .map_or(f64::NAN, |p| p.1);
            results.push(FoldResult {
                fold: f.fold,
                method: f.method.clone(),
                strategy: "fixed".into(),
                policy: policy.clone(),
                validation_fscore,
                report,
                curve,
            });
        }
        curves.push(MeanCurve {
            method: first.method.clone(),
            strategy: "fixed".into(),
            selected: delta,
            points: mean,
        });
    }

    if config.thresholds.strategy.quantile() {
        let grid = config
            .thresholds
            .quantile_grid
            .clone()
            .unwrap_or_else(|| default_quantile_grid(direction));
        if grid.is_empty() {
            return Err(Error::InvalidInput("quantile grid is empty".into()));
        }
        let population = config.thresholds.population;
        let per_fold = folds
            .iter()
            .map(|f| {
                quantile_curve(f, &grid, population, averaging).map_err(|e| e.for_fold(f.fold))
            })
            .collect::<Result<Vec<_>>>()?;
        let ((q, _), mean) = select_shared_threshold(&per_fold)?;
        for (f, curve) in folds.iter().zip(per_fold) {
            let policy = quantile_policy(&f.validation, &f.known, q, direction, population)
                .map_err(|e| e.for_fold(f.fold))?;
            let report = evaluate_policy(f, &policy, averaging).map_err(|e| e.for_fold(f.fold))?;
            let validation_fscore = curve.iter().find(|p| p.0 == q).map_or(f64::NAN, |p| p.1);
            results.push(FoldResult {
                fold: f.fold,
                method: f.method.clone(),
                strategy: "quantile".into(),
                policy,
                validation_fscore,
                report,
                curve,
            });
        }
        curves.push(MeanCurve {
            method: first.method.clone(),
            strategy: "quantile".into(),
            selected: q,
            points: mean,
        });
    }
    Ok((results, curves))
}

/// A single fold with thresholds chosen on its own validation set.
pub fn run_fold(
    dataset: &EmbeddingDataset,
    partition: &ClassPartition,
    method: &MethodConfig,
    config: &ProtocolConfig,
    fold: usize,
) -> Result<Vec<FoldResult>> {
    let scores = score_fold(dataset, partition, method, config, fold)?;
    Ok(select_and_evaluate(std::slice::from_ref(&scores), config)?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolOutcome {
    pub plan: FoldPlan,
    /// Ordered by method, then strategy, then fold.
    pub results: Vec<FoldResult>,
    pub aggregate: Vec<AggregateRow>,
    pub curves: Vec<MeanCurve>,
}

/// Runs every configured method on every fold of the plan.
///
/// `(fold, method)` jobs run on up to `jobs` threads; results are collected by
/// index so the outcome does not depend on scheduling.
pub fn run_protocol(
    dataset: &EmbeddingDataset,
    config: &ProtocolConfig,
    jobs: usize,
) -> Result<ProtocolOutcome> {
    if config.methods.is_empty() {
        return Err(Error::InvalidInput("no methods configured".into()));
    }
    let excluded: BTreeSet<String> = config.folds.always_excluded.iter().cloned().collect();
    let plan = make_folds(
        dataset.label_set(),
        config.folds.unknowns_per_fold,
        config.folds.n,
        &excluded,
        config.folds.seed.unwrap_or(config.seed),
    )?;

    let tasks: Vec<(usize, usize)> = (0..config.methods.len())
        .flat_map(|m| (0..plan.folds.len()).map(move |k| (m, k)))
        .collect();
    let slots: Vec<Mutex<Option<Result<FoldScores>>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(m, k)) = tasks.get(i) else { break };
        let scored = score_fold(dataset, &plan.folds[k], &config.methods[m], config, k);
        *slots[i].lock().expect("slot lock") = Some(scored);
    };
    let threads = jobs.clamp(1, tasks.len());
    if threads == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(worker);
            }
        });
    }
    let scored = slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every task ran"))
        .collect::<Result<Vec<_>>>()?;

    let mut results = Vec::new();
    let mut curves = Vec::new();
    for group in scored.chunks(plan.folds.len()) {
        let (r, c) = select_and_evaluate(group, config)?;
        results.extend(r);
        curves.extend(c);
    }
    let aggregate = aggregate(&results)?;
    Ok(ProtocolOutcome {
        plan,
        results,
        aggregate,
        curves,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn curve_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("threshold,open_set_fscore\n");
    for (x, y) in points {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for row in rows {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

/// Writes `fold_plan.json`, `fold_<k>.json`, `aggregate.csv` and validation
/// curves under `curves/` into `dir`.
pub fn write_outputs(outcome: &ProtocolOutcome, dir: &Path) -> Result<()> {
    let curves_dir = dir.join("curves");
    std::fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    outcome.plan.save(&dir.join("fold_plan.json"))?;
    for k in 0..outcome.plan.folds.len() {
        let fold: Vec<&FoldResult> = outcome.results.iter().filter(|r| r.fold == k).collect();
        write(
            &dir.join(format!("fold_{k}.json")),
            &(serde_json::to_string_pretty(&fold)? + "\n"),
        )?;
        for r in fold {
            write(
                &curves_dir.join(format!("{}_{}_fold{k}.csv", r.method, r.strategy)),
                &curve_csv(&r.curve),
            )?;
        }
    }
    for c in &outcome.curves {
        write(
            &curves_dir.join(format!("{}_{}_mean.csv", c.method, c.strategy)),
            &curve_csv(&c.points),
        )?;
    }
    write(
        &dir.join("aggregate.csv"),
        &aggregate_csv(&outcome.aggregate),
    )
}
