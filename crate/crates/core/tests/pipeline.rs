//! Fitting, scoring and evaluating methods across module boundaries.

use std::collections::BTreeSet;

use openset::calibration::{apply_policy, sweep_fixed, Direction};
use openset::dataset::{partition_classes, EmbeddingDataset, Sample, Split};
use openset::evaluation::{evaluate, Averaging};
use openset::method::{FittedMethod, MethodConfig};
use openset::protocol::{
    generate_synthetic, run_fold, run_protocol, FeatureMode, FoldsConfig, ProtocolConfig,
    SplitCounts, SynthSpec, ThresholdConfig,
};
use openset::Error;

fn blobs(seed: u64) -> EmbeddingDataset {
    generate_synthetic(&SynthSpec {
        n_known: 4,
        n_unknown: 2,
        dim: 6,
        per_class: SplitCounts {
            train: 80,
            val: 40,
            test: 40,
        },
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn set(labels: &[&str]) -> BTreeSet<String> {
    labels.iter().map(|s| s.to_string()).collect()
}

/// Logit-like vectors: one coordinate per known class, large for the true one.
fn logits_dataset() -> EmbeddingDataset {
    let known = ["a", "b", "c"];
    let mut samples = Vec::new();
    for (c, label) in known.iter().chain(["u"].iter()).enumerate() {
        for i in 0..60 {
            let split = [Split::Train, Split::Train, Split::Val, Split::Test][i % 4];
            let jitter = (i as f64 * 0.37).sin();
            let features = (0..3)
                .map(|k| {
                    if k == c {
                        6.0 + jitter
                    } else {
                        0.5 * (jitter + k as f64).cos()
                    }
                })
                .collect();
            samples.push(Sample {
                id: format!("{label}{i}"),
                label: label.to_string(),
                split,
                features,
            });
        }
    }
    EmbeddingDataset::new(3, samples).unwrap()
}

#[test]
fn fitted_methods_round_trip_through_json() {
    let data = blobs(1);
    let views =
        partition_classes(&data, &set(&["class_04", "class_05"]), &BTreeSet::new()).unwrap();
    let train = views.known.split(Split::Train);
    for name in ["openmax", "gallery", "cac"] {
        let mut config = MethodConfig::by_name(name).unwrap();
        if let MethodConfig::Openmax(p) = &mut config {
            p.alpha_revise = 2;
        }
        let training = openset::losses::TrainConfig {
            epochs: 10,
            ..Default::default()
        };
        let fitted =
            FittedMethod::fit(&config, &train, &views.partition.known, &training, 3).unwrap();
        let back = FittedMethod::from_json(&fitted.to_json().unwrap()).unwrap();
        let view = data.view().split(Split::Test);
        assert_eq!(
            fitted.score_view(&view).unwrap(),
            back.score_view(&view).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn precomputed_openmax_rejects_the_unknown_class() {
    let data = logits_dataset();
    let views = partition_classes(&data, &set(&["u"]), &BTreeSet::new()).unwrap();
    let mut config = MethodConfig::by_name("openmax").unwrap();
    if let MethodConfig::Openmax(p) = &mut config {
        p.tail_size = 10;
        p.alpha_revise = 2;
    }
    let fitted = FittedMethod::fit_on_vectors(
        &config,
        &views.known.split(Split::Train),
        &views.partition.known,
        0,
    )
    .unwrap();
    assert!(fitted.network.is_none());

    let validation = fitted.score_view(&data.view().split(Split::Val)).unwrap();
    assert!(validation.iter().filter(|p| p.truth.is_none()).count() > 0);
    let known = views.partition.known.clone();
    let grid: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
    let sweep = sweep_fixed(&validation, &known, Direction::HigherIsBetter, &grid).unwrap();
    assert_eq!(sweep.curve.len(), grid.len());

    let test = fitted.score_view(&data.view().split(Split::Test)).unwrap();
    let policy = openset::calibration::ThresholdPolicy::fixed(
        Direction::HigherIsBetter,
        sweep.best_threshold,
    );
    let report = evaluate(
        &known,
        &apply_policy(&test, &policy).unwrap(),
        Averaging::Macro,
    )
    .unwrap();
    assert_eq!(report.known_acc, 1.0);
    assert!(report.open_set_fscore >= sweep.best_fscore - 0.1);
}

#[test]
fn single_fold_run_reports_both_strategies() {
    let data = blobs(2);
    let partition = openset::dataset::ClassPartition::new(
        data.label_set(),
        set(&["class_05"]),
        set(&["class_04"]),
    )
    .unwrap();
    let config = ProtocolConfig {
        training: openset::losses::TrainConfig {
            epochs: 10,
            ..Default::default()
        },
        thresholds: ThresholdConfig {
            grid_points: 30,
            ..ThresholdConfig::default()
        },
        ..ProtocolConfig::default()
    };
    let results = run_fold(
        &data,
        &partition,
        &MethodConfig::by_name("cac").unwrap(),
        &config,
        0,
    )
    .unwrap();
    let strategies: Vec<&str> = results.iter().map(|r| r.strategy.as_str()).collect();
    assert_eq!(strategies, ["fixed", "quantile"]);
    for r in &results {
        assert_eq!(r.policy.direction, Direction::LowerIsBetter);
        assert!(r.report.unknown_acc.is_some());
        assert!(r.curve.iter().all(|(_, f)| (0.0..=1.0).contains(f)));
    }
}

#[test]
fn precomputed_protocol_rejects_methods_that_need_other_vectors() {
    let data = blobs(3);
    let config = ProtocolConfig {
        folds: FoldsConfig {
            n: 3,
            unknowns_per_fold: 2,
            ..FoldsConfig::default()
        },
        methods: vec![MethodConfig::by_name("cac").unwrap()],
        features: FeatureMode::Precomputed,
        ..ProtocolConfig::default()
    };
    // CAC consumes class-count-dimensional embeddings; these are 6-dimensional.
    let err = run_protocol(&data, &config, 1).unwrap_err();
    assert!(matches!(err, Error::Fold { .. }), "{err}");
}

#[test]
fn protocol_outcome_does_not_depend_on_thread_count() {
    let data = blobs(4);
    let config = ProtocolConfig {
        folds: FoldsConfig {
            n: 3,
            unknowns_per_fold: 2,
            ..FoldsConfig::default()
        },
        training: openset::losses::TrainConfig {
            epochs: 6,
            ..Default::default()
        },
        thresholds: ThresholdConfig {
            grid_points: 25,
            ..ThresholdConfig::default()
        },
        methods: ["openmax", "cac"]
            .iter()
            .map(|m| {
                let mut c = MethodConfig::by_name(m).unwrap();
                if let MethodConfig::Openmax(p) = &mut c {
                    p.alpha_revise = 2;
                }
                c
            })
            .collect(),
        seed: 8,
        ..ProtocolConfig::default()
    };
    let one = run_protocol(&data, &config, 1).unwrap();
    let many = run_protocol(&data, &config, 3).unwrap();
    assert_eq!(one, many);
    assert_eq!(one.aggregate.len(), 4);
}
