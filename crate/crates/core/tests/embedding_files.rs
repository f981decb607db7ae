//! The embedding CSV and manifest contract shared with external exporters.

use std::path::Path;

use openset::dataset::{
    load_dataset, manifest_path, save_dataset, save_manifest, DatasetManifest, Split,
};
use openset::protocol::{generate_synthetic, SplitCounts, SynthSpec};
use openset::Error;

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn exporter_style_file_with_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("smoke.csv");
    let mut text = String::from("id,label,split,f0,f1,f2,f3\n");
    for (c, label) in ["copepod", "diatom", "ciliate"].iter().enumerate() {
        for i in 0..30 {
            let split = ["train", "train", "train", "val", "test"][i % 5];
            text.push_str(&format!(
                "{label}/img_{i:03}.png,{label},{split},{c}.5,-0.25,1e-3,{i}\n"
            ));
        }
    }
    write(&csv, &text);
    write(
        &manifest_path(&csv),
        r#"{"dim":4,"n_samples":90,"label_set":["ciliate","copepod","diatom"],"source":"resnet18 arcface","created":"2024-01-01T00:00:00Z"}"#,
    );
    let data = load_dataset(&csv).unwrap();
    assert_eq!(data.dim(), 4);
    assert_eq!(data.len(), 90);
    assert_eq!(data.label_set(), ["copepod", "diatom", "ciliate"]);
    assert_eq!(data.view().split(Split::Val).len(), 18);
    assert_eq!(data.samples()[1].features, vec![0.5, -0.25, 1e-3, 1.0]);
}

#[test]
fn manifest_disagreement_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    write(&csv, "id,label,split,f0,f1\na,A,train,1,2\nb,B,test,3,4\n");
    write(
        &manifest_path(&csv),
        r#"{"dim":3,"n_samples":2,"label_set":["A","B"]}"#,
    );
    assert!(matches!(load_dataset(&csv), Err(Error::Manifest(_))));
    write(
        &manifest_path(&csv),
        r#"{"dim":2,"n_samples":2,"label_set":["A","C"]}"#,
    );
    assert!(matches!(load_dataset(&csv), Err(Error::Manifest(_))));
    write(
        &manifest_path(&csv),
        r#"{"dim":2,"n_samples":2,"label_set":["B","A"]}"#,
    );
    assert!(load_dataset(&csv).is_ok());
}

#[test]
fn malformed_rows_report_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    write(&csv, "id,label,split,f0\na,A,train,1\nb,A,holdout,2\n");
    match load_dataset(&csv) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
    write(&csv, "id,label,split,f1\na,A,train,1\n");
    assert!(matches!(
        load_dataset(&csv),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn synthetic_dataset_survives_a_save_load_cycle() {
    let spec = SynthSpec {
        n_known: 3,
        n_unknown: 1,
        dim: 5,
        per_class: SplitCounts::from_total(50),
        seed: 9,
        ..SynthSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    save_dataset(&data, &csv).unwrap();
    save_manifest(&DatasetManifest::describe(&data, "synth", ""), &csv).unwrap();
    let back = load_dataset(&csv).unwrap();
    assert_eq!(back, data);

    let again = dir.path().join("t.csv");
    save_dataset(&back, &again).unwrap();
    assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(&again).unwrap());
}
