use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use openset::calibration::{
    default_grid, sweep_fixed_with, Direction, ScoredPrediction, ThresholdPolicy,
};
use openset::dataset::{
    load_dataset, partition_classes, save_dataset, save_manifest, ClassPartition, DatasetManifest,
    EmbeddingDataset, Sample, Split,
};
use openset::evaluation::{evaluate as evaluate_predictions, Averaging, MetricReport};
use openset::method::{FittedMethod, MethodConfig};
use openset::protocol::{
    aggregate, aggregate_csv, fit_and_score_fold, generate_synthetic, make_folds, run_protocol,
    select_and_evaluate, write_outputs, AggregateRow, FeatureMode, FoldPlan, FoldResult,
    ProtocolConfig, SplitCounts, Strategy, SynthSpec,
};
use serde::Serialize;

use crate::args::{
    AveragingArg, CalibrateArgs, DirectionArg, EvaluateArgs, HyperArgs, MethodName, PredictArgs,
    ProtocolArgs, ReportArgs, ReportFormat, SplitArgs, SweepArgs, SynthArgs, ThresholdKind,
};
use crate::predictions::{self, token, PredictionRow};
use crate::usage;

const SEED_ENV: &str = "OPENSET_SEED";

/// Flag, then config file, then `OPENSET_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("no such file: {}", path.display())))
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Prints to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// The config and its seed when the file sets one.
fn load_config(path: &Path) -> Result<(ProtocolConfig, Option<u64>)> {
    require_file(path)?;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let config: ProtocolConfig = serde_json::from_value(value.clone())
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let seed = value.get("seed").map(|_| config.seed);
    Ok((config, seed))
}

fn load(path: &Path) -> Result<EmbeddingDataset> {
    require_file(path)?;
    load_dataset(path).with_context(|| format!("loading {}", path.display()))
}

fn save_with_manifest(dataset: &EmbeddingDataset, path: &Path, source: &str) -> Result<()> {
    create_parent(path)?;
    save_dataset(dataset, path)?;
    let created = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    save_manifest(&DatasetManifest::describe(dataset, source, &created), path)?;
    Ok(())
}

fn averaging(a: AveragingArg) -> Averaging {
    match a {
        AveragingArg::Macro => Averaging::Macro,
        AveragingArg::Micro => Averaging::Micro,
    }
}

pub fn synth(a: SynthArgs, seed: Option<u64>, verbose: bool) -> Result<()> {
    let per_class = match a.per_class {
        Some(n) => SplitCounts::from_total(n),
        None => SplitCounts {
            train: a.train,
            val: a.val,
            test: a.test,
        },
    };
    let spec = SynthSpec {
        n_known: a.n_known,
        n_unknown: a.n_unknown,
        dim: a.dim,
        per_class,
        center_separation: a.separation,
        spread: a.spread,
        seed: resolve_seed(seed, None)?,
    };
    let data = generate_synthetic(&spec)?;
    let source = format!(
        "synth n_known={} n_unknown={} dim={} train={} val={} test={} separation={} spread={} seed={}",
        spec.n_known,
        spec.n_unknown,
        spec.dim,
        per_class.train,
        per_class.val,
        per_class.test,
        spec.center_separation,
        spec.spread,
        spec.seed
    );
    save_with_manifest(&data, &a.out, &source)?;
    if verbose {
        eprintln!(
            "wrote {} samples of {} classes to {}",
            data.len(),
            data.label_set().len(),
            a.out.display()
        );
    }
    Ok(())
}

pub fn split(a: SplitArgs, seed: Option<u64>, verbose: bool) -> Result<()> {
    let data = load(&a.dataset)?;
    let excluded: BTreeSet<String> = a.exclude.iter().cloned().collect();
    let plan = make_folds(
        data.label_set(),
        a.unknowns_per_fold,
        a.folds,
        &excluded,
        resolve_seed(seed, None)?,
    )?;
    create_parent(&a.out)?;
    plan.save(&a.out)?;
    if let Some(dir) = &a.views_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (k, fold) in plan.folds.iter().enumerate() {
            let views = partition_classes(&data, &fold.unknown, &fold.excluded)?;
            let source = format!("fold {k} of {}", a.dataset.display());
            save_with_manifest(
                &views.known.to_dataset(),
                &dir.join(format!("fold_{k}_known.csv")),
                &source,
            )?;
            save_with_manifest(
                &views.unknown.to_dataset(),
                &dir.join(format!("fold_{k}_unknown.csv")),
                &source,
            )?;
        }
    }
    if verbose {
        for (k, fold) in plan.folds.iter().enumerate() {
            let unknown: Vec<&str> = fold.unknown.iter().map(String::as_str).collect();
            eprintln!(
                "fold {k}: {} known, unknown {}",
                fold.known.len(),
                unknown.join(",")
            );
        }
    }
    Ok(())
}

fn method_name(m: MethodName) -> &'static str {
    match m {
        MethodName::Openmax => "openmax",
        MethodName::Gallery => "gallery",
        MethodName::Cac => "cac",
    }
}

fn misplaced(flag: &str, method: &MethodConfig) -> anyhow::Error {
    usage(format!(
        "--{flag} does not apply to method {}",
        method.name()
    ))
}

/// Applies method hyperparameter flags; a flag for another method is an error.
fn apply_method_flags(method: &mut MethodConfig, h: &HyperArgs) -> Result<()> {
    let snapshot = *method;
    match method {
        MethodConfig::Openmax(p) => {
            if let Some(v) = h.eta {
                p.tail_size = v;
            }
            if let Some(v) = h.alpha {
                p.alpha_revise = v;
            }
        }
        MethodConfig::Gallery(p) => {
            if let Some(v) = h.scale {
                p.scale = v;
            }
            if let Some(v) = h.margin {
                p.margin = v;
            }
            if let Some(v) = h.embedding_dim {
                p.embedding_dim = v;
            }
            if let Some(v) = h.gallery_size {
                p.gallery_size = v;
            }
        }
        MethodConfig::Cac(p) => {
            if let Some(v) = h.anchor_magnitude {
                p.anchor_magnitude = v;
            }
            if let Some(v) = h.anchor_weight {
                p.anchor_weight = v;
            }
        }
    }
    let flags: [(&str, bool, &str); 8] = [
        ("eta", h.eta.is_some(), "openmax"),
        ("alpha", h.alpha.is_some(), "openmax"),
        ("scale", h.scale.is_some(), "gallery"),
        ("margin", h.margin.is_some(), "gallery"),
        ("embedding-dim", h.embedding_dim.is_some(), "gallery"),
        ("gallery-size", h.gallery_size.is_some(), "gallery"),
        ("anchor-magnitude", h.anchor_magnitude.is_some(), "cac"),
        ("anchor-weight", h.anchor_weight.is_some(), "cac"),
    ];
    if let Some((flag, _, _)) = flags
        .iter()
        .find(|(_, set, owner)| *set && *owner != snapshot.name())
    {
        return Err(misplaced(flag, &snapshot));
    }
    Ok(())
}

fn apply_training_flags(config: &mut ProtocolConfig, h: &HyperArgs) {
    if let Some(v) = h.epochs {
        config.training.epochs = v;
    }
    if let Some(v) = h.learning_rate {
        config.training.learning_rate = v;
    }
    if let Some(v) = h.batch_size {
        config.training.batch_size = v;
    }
    if let Some(v) = h.hidden {
        config.training.hidden = v;
    }
    if let Some(v) = h.train_cap {
        config.train_cap = Some(v);
    }
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    method: &'a MethodConfig,
    strategy: &'a str,
    fold: usize,
    /// Selected fixed threshold or quantile.
    selected: f64,
    validation_fscore: f64,
    policy: &'a ThresholdPolicy,
    test: &'a MetricReport,
}

pub fn calibrate(a: CalibrateArgs, seed: Option<u64>, verbose: bool) -> Result<()> {
    let (mut config, config_seed) = match &a.config {
        Some(path) => load_config(path)?,
        None => (ProtocolConfig::default(), None),
    };
    config.seed = resolve_seed(seed, config_seed)?;

    let mut method = match a.method {
        Some(m) => {
            let name = method_name(m);
            match config.methods.iter().find(|c| c.name() == name) {
                Some(c) => *c,
                None => MethodConfig::by_name(name)?,
            }
        }
        None => *config
            .methods
            .first()
            .ok_or_else(|| usage("no method given and the config lists none"))?,
    };
    apply_method_flags(&mut method, &a.hyper)?;
    apply_training_flags(&mut config, &a.hyper);
    config.methods = vec![method];
    if a.precomputed {
        config.features = FeatureMode::Precomputed;
    }

    let thresholds = &mut config.thresholds;
    match (a.threshold, a.q) {
        (Some(ThresholdKind::Fixed), Some(_)) => {
            return Err(usage("--q needs --threshold quantile"))
        }
        (Some(ThresholdKind::Quantile) | None, Some(q)) => {
            if !(q > 0.0 && q < 1.0) {
                return Err(usage(format!("--q must lie in (0, 1), got {q}")));
            }
            thresholds.strategy = Strategy::Quantile;
            thresholds.quantile_grid = Some(vec![q]);
        }
        (Some(ThresholdKind::Fixed), None) => thresholds.strategy = Strategy::Fixed,
        (Some(ThresholdKind::Quantile), None) => thresholds.strategy = Strategy::Quantile,
        (None, None) => {
            if thresholds.strategy == Strategy::Both {
                thresholds.strategy = Strategy::Fixed;
            }
        }
    }
    if let Some(n) = a.grid_points {
        if n == 0 {
            return Err(usage("--grid-points must be positive"));
        }
        thresholds.grid_points = n;
    }

    let dataset_path = a
        .dataset
        .clone()
        .or_else(|| config.dataset.clone())
        .ok_or_else(|| usage("no dataset given on the command line or in the config"))?;
    let data = load(&dataset_path)?;

    let (fold, unknown, excluded) = match (&a.plan, a.fold) {
        (Some(path), Some(k)) => {
            require_file(path)?;
            let plan = FoldPlan::load(path)?;
            let p = plan.folds.get(k).ok_or_else(|| {
                usage(format!(
                    "fold {k} not in plan with {} folds",
                    plan.folds.len()
                ))
            })?;
            (k, p.unknown.clone(), p.excluded.clone())
        }
        _ => (
            0,
            a.unknown.iter().cloned().collect(),
            a.exclude.iter().cloned().collect(),
        ),
    };
    let partition = ClassPartition::new(data.label_set(), unknown, excluded)
        .map_err(|e| usage(e.to_string()))?;

    let (fitted, scores) = fit_and_score_fold(&data, &partition, &method, &config, fold)?;
    let (results, curves) = select_and_evaluate(std::slice::from_ref(&scores), &config)?;
    let result = results
        .first()
        .context("no threshold strategy produced a result")?;
    let selected = curves.first().map_or(f64::NAN, |c| c.selected);

    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_text(&dir.join("model.json"), &(fitted.to_json()? + "\n"))?;
    write_json(&dir.join("policy.json"), &result.policy)?;
    let mut curve = String::from("threshold,open_set_fscore\n");
    for (x, y) in &result.curve {
        curve.push_str(&format!("{x},{y}\n"));
    }
    write_text(&dir.join("curve.csv"), &curve)?;
    write_json(
        &dir.join("report.json"),
        &CalibrationReport {
            method: &method,
            strategy: &result.strategy,
            fold,
            selected,
            validation_fscore: result.validation_fscore,
            policy: &result.policy,
            test: &result.report,
        },
    )?;
    let mut resolved = config.clone();
    resolved.dataset = Some(dataset_path.clone());
    write_json(&dir.join("config.json"), &resolved)?;

    if let Some(path) = &a.emit {
        let samples = data
            .samples()
            .iter()
            .map(|s| {
                Ok(Sample {
                    features: fitted.emit(&s.features)?,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dim = samples.first().map_or(0, |s| s.features.len());
        let emitted = EmbeddingDataset::new(dim, samples)?;
        save_with_manifest(
            &emitted,
            path,
            &format!("{} vectors of {}", method.name(), dataset_path.display()),
        )?;
    }

    emit(&format!(
        "{} {}: selected {selected} validation F {:.4} test F {:.4}\n",
        method.name(),
        result.strategy,
        result.validation_fscore,
        result.report.open_set_fscore
    ))?;
    if verbose {
        eprintln!("wrote model, policy, curve and report to {}", dir.display());
    }
    Ok(())
}

fn prediction_row(
    fitted: &FittedMethod,
    known: &HashSet<&str>,
    policy: Option<&ThresholdPolicy>,
    s: &Sample,
) -> Result<PredictionRow> {
    let out = fitted.output(&s.features)?;
    let scored = ScoredPrediction {
        id: s.id.clone(),
        truth: known.contains(s.label.as_str()).then(|| s.label.clone()),
        predicted: out.predicted.map(|c| fitted.labels[c].clone()),
        closed_set: Some(fitted.labels[out.closed_set].clone()),
        score: out.score,
    };
    let decision = match policy {
        Some(p) => scored.decide(p)?.predicted,
        None => scored.predicted.clone(),
    };
    Ok(PredictionRow {
        id: scored.id,
        truth: token(scored.truth.as_deref()),
        predicted: token(scored.predicted.as_deref()),
        closed_set: token(scored.closed_set.as_deref()),
        score: scored.score,
        decision: token(decision.as_deref()),
    })
}

pub fn predict(a: PredictArgs, verbose: bool) -> Result<()> {
    let data = load(&a.dataset)?;
    require_file(&a.model)?;
    let fitted = FittedMethod::from_json(&std::fs::read_to_string(&a.model)?)
        .with_context(|| format!("loading {}", a.model.display()))?;
    let policy: Option<ThresholdPolicy> = match &a.policy {
        Some(path) => {
            require_file(path)?;
            let text = std::fs::read_to_string(path)?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| usage(format!("{}: {e}", path.display())))?,
            )
        }
        None => None,
    };
    let split = a.split.as_deref().map(Split::from_str).transpose()?;
    let samples: Vec<&Sample> = data
        .samples()
        .iter()
        .filter(|s| split.is_none_or(|sp| s.split == sp))
        .collect();
    let known: HashSet<&str> = fitted.labels.iter().map(String::as_str).collect();

    let jobs = a.jobs.max(1);
    let chunk = samples.len().div_ceil(jobs).max(1);
    let rows: Vec<PredictionRow> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                let (fitted, known, policy) = (&fitted, &known, policy.as_ref());
                scope.spawn(move || {
                    part.iter()
                        .map(|s| prediction_row(fitted, known, policy, s))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prediction worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?
    .into_iter()
    .flatten()
    .collect();

    create_parent(&a.out)?;
    predictions::write(&a.out, &rows)?;
    if verbose {
        let rejected = rows
            .iter()
            .filter(|r| r.decision == openset::UNKNOWN_TOKEN)
            .count();
        eprintln!("scored {} samples, {rejected} rejected", rows.len());
    }
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    require_file(path)?;
    let rows = predictions::read(path)?;
    if rows.is_empty() {
        return Err(usage(format!("{} has no predictions", path.display())));
    }
    Ok(rows)
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let rows = read_predictions(&a.predictions)?;
    let scored: Vec<ScoredPrediction> = rows.iter().map(PredictionRow::scored).collect();
    let known = predictions::known_labels(&rows);
    let direction = match a.direction {
        DirectionArg::Higher => Direction::HigherIsBetter,
        DirectionArg::Lower => Direction::LowerIsBetter,
    };
    let grid = if a.grid.is_empty() {
        if a.grid_points == 0 {
            return Err(usage("--grid-points must be positive"));
        }
        default_grid(&scored, a.grid_points)
    } else {
        a.grid.clone()
    };
    let result = sweep_fixed_with(&scored, &known, direction, &grid, averaging(a.averaging))?;
    let mut out = String::from("threshold,open_set_fscore\n");
    for (x, y) in &result.curve {
        out.push_str(&format!("{x},{y}\n"));
    }
    create_parent(&a.out)?;
    write_text(&a.out, &out)?;
    emit(&format!(
        "best threshold {} open-set F {:.4}\n",
        result.best_threshold, result.best_fscore
    ))
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let rows = read_predictions(&a.predictions)?;
    let labeled: Vec<_> = rows.iter().map(|r| r.labeled(!a.no_threshold)).collect();
    let known = predictions::known_labels(&rows);
    let report = evaluate_predictions(&known, &labeled, averaging(a.averaging))?;
    match &a.out {
        Some(path) => {
            create_parent(path)?;
            write_json(path, &report)?;
        }
        None => emit(&(serde_json::to_string_pretty(&report)? + "\n"))?,
    }
    Ok(())
}

fn markdown_table(rows: &[AggregateRow]) -> String {
    let mut out = String::from(
        "| Method | Strategy | Folds | Known acc | Known acc (th) | Unknown acc | Open-set acc | Open-set F |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let cells: Vec<String> = r
            .columns
            .iter()
            .map(|c| c.map_or_else(|| "n/a".to_string(), |s| s.to_string()))
            .collect();
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            r.method,
            r.strategy,
            r.n_folds,
            cells.join(" | ")
        ));
    }
    out
}

pub fn protocol(a: ProtocolArgs, seed: Option<u64>, verbose: bool) -> Result<()> {
    let (mut config, config_seed) = match &a.config {
        Some(path) => load_config(path)?,
        None => (ProtocolConfig::default(), None),
    };
    config.seed = resolve_seed(seed, config_seed)?;
    let dataset_path: PathBuf = a
        .dataset
        .clone()
        .or_else(|| config.dataset.clone())
        .ok_or_else(|| usage("no dataset given on the command line or in the config"))?;
    let out_dir = a
        .out_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| usage("no output directory given on the command line or in the config"))?;
    let data = load(&dataset_path)?;
    if verbose {
        eprintln!(
            "{} samples, {} classes, {} folds, {} methods",
            data.len(),
            data.label_set().len(),
            config.folds.n,
            config.methods.len()
        );
    }

    let outcome = run_protocol(&data, &config, a.jobs)?;
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    write_outputs(&outcome, &out_dir)?;
    let mut resolved = config.clone();
    resolved.dataset = Some(dataset_path);
    resolved.output_dir = None;
    write_json(&out_dir.join("config.json"), &resolved)?;
    emit(&markdown_table(&outcome.aggregate))
}

fn fold_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let path = entry?.path();
        let k = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("fold_"))
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(k) = k {
            found.push((k, path));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn report(a: ReportArgs) -> Result<()> {
    if !a.run_dir.is_dir() {
        return Err(usage(format!("no such directory: {}", a.run_dir.display())));
    }
    let mut results: Vec<FoldResult> = Vec::new();
    for path in fold_files(&a.run_dir)? {
        let text = std::fs::read_to_string(&path)?;
        let fold: Vec<FoldResult> =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        results.extend(fold);
    }
    if results.is_empty() {
        return Err(usage(format!(
            "{} holds no fold results",
            a.run_dir.display()
        )));
    }
    let rows = aggregate(&results)?;
    match a.format {
        ReportFormat::Markdown => emit(&markdown_table(&rows)),
        ReportFormat::Csv => emit(&aggregate_csv(&rows)),
    }
}
