use std::fs;
use std::path::Path;

use proptest::prelude::*;
use sas::artifacts::{load_checkpoint, save_checkpoint, Checkpoint};
use sas::dataio::{export_dataset, export_with_ids, load_dataset, DataError, MANIFEST_FILE};
use sas_core::dataset::Splits;
use sas_core::pipeline::{preset, run_pipeline, run_pipeline_detailed, NoClock};
use sas_core::synth::generate;
use sas_core::{build_graph, Dataset, Graph, Matrix, MlpConfig, Preset, SynthConfig, SynthKind, TrainConfig};

fn arb_dataset() -> impl Strategy<Value = (Graph, Dataset)> {
    (1usize..30, 1usize..5, 1usize..4).prop_flat_map(|(n, d, c)| {
        let features = prop::collection::vec(-1e6f64..1e6, n * d);
        let labels = prop::collection::vec(prop::option::weighted(0.8, 0..c), n);
        let edges = prop::collection::vec((0..n, 0..n), 0..3 * n);
        let part = prop::collection::vec(0u8..4, n);
        (Just((n, d, c)), features, labels, edges, part).prop_map(|((n, d, c), features, labels, edges, part)| {
            let edges: Vec<_> = edges.into_iter().filter(|(u, v)| u != v).collect();
            let graph = build_graph(&edges, n).unwrap();
            let mut splits = Splits::default();
            for (i, p) in part.into_iter().enumerate() {
                match p {
                    0 if labels[i].is_some() => splits.train.push(i),
                    1 => splits.val.push(i),
                    2 => splits.test.push(i),
                    _ => {}
                }
            }
            let ds = Dataset::new(Matrix::from_vec(n, d, features), labels, c, splits).unwrap();
            (graph, ds)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn export_then_load_is_lossless((graph, ds) in arb_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_dataset(&graph, &ds, dir.path()).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        prop_assert_eq!(&loaded.graph, &graph);
        prop_assert_eq!(&loaded.dataset, &ds);
        prop_assert!(loaded.node_ids.is_none());
    }
}

fn xor(seed: u64) -> (Graph, Dataset) {
    let synth = generate(&SynthConfig::new(SynthKind::Xor, seed)).unwrap();
    let ds = Dataset::from(&synth);
    (synth.graph, ds)
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn export_is_byte_deterministic() {
    let (graph, ds) = xor(3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    export_dataset(&graph, &ds, a.path()).unwrap();
    export_dataset(&graph, &ds, b.path()).unwrap();
    assert_eq!(read_all(a.path()), read_all(b.path()));
}

#[test]
fn empty_graph_round_trips() {
    let ds = Dataset::new(Matrix::zeros(4, 2), vec![Some(0), None, Some(1), None], 2, Splits::default()).unwrap();
    let graph = Graph::edgeless(4);
    let dir = tempfile::tempdir().unwrap();
    let loaded = load_dataset(&export_dataset(&graph, &ds, dir.path()).unwrap()).unwrap();
    assert_eq!(loaded.graph.num_edges(), 0);
    assert_eq!(loaded.dataset, ds);
}

#[test]
fn named_node_ids_round_trip() {
    let (graph, ds) = xor(4);
    let ids: Vec<String> = (0..ds.num_nodes()).map(|i| format!("paper-{}", i * 7)).collect();
    let dir = tempfile::tempdir().unwrap();
    let loaded = load_dataset(&export_with_ids(&graph, &ds, Some(&ids), dir.path()).unwrap()).unwrap();
    assert_eq!(loaded.graph, graph);
    assert_eq!(loaded.dataset, ds);
    assert_eq!(loaded.node_ids.as_deref(), Some(ids.as_slice()));
    let edges = fs::read_to_string(dir.path().join("edges.tsv")).unwrap();
    assert!(edges.contains("paper-"));
}

/// Small valid dataset on disk; tests then corrupt one file.
fn small_export() -> tempfile::TempDir {
    let ds = Dataset::new(
        Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]]),
        vec![Some(0), Some(1), None],
        2,
        Splits {
            train: vec![0],
            val: vec![1],
            test: vec![2],
        },
    )
    .unwrap();
    let graph = build_graph(&[(0, 1), (1, 2)], 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&graph, &ds, dir.path()).unwrap();
    dir
}

fn load_err(dir: &tempfile::TempDir) -> DataError {
    load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap_err()
}

#[test]
fn wrong_feature_width_names_file_and_line() {
    let dir = small_export();
    fs::write(dir.path().join("features.csv"), "0,1\n1,0,2\n0.5,0.5\n").unwrap();
    let err = load_err(&dir);
    assert!(matches!(err, DataError::DimensionMismatch { declared: 2, found: 3, .. }), "{err:?}");
    assert!(err.to_string().contains("features.csv:2"), "{err}");
}

#[test]
fn declared_width_larger_than_file() {
    let dir = small_export();
    let manifest = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest).unwrap().replace("\"feature_dim\": 2", "\"feature_dim\": 3");
    fs::write(&manifest, text).unwrap();
    let err = load_err(&dir);
    assert!(matches!(err, DataError::DimensionMismatch { declared: 3, found: 2, .. }), "{err:?}");
    assert!(err.to_string().contains("features.csv:1"), "{err}");
}

#[test]
fn unknown_class_names_file_and_line() {
    let dir = small_export();
    fs::write(dir.path().join("labels.tsv"), "0\t0\n1\t5\n").unwrap();
    let err = load_err(&dir);
    assert!(matches!(err, DataError::UnknownClass { class: 5, .. }), "{err:?}");
    assert!(err.to_string().contains("labels.tsv:2"), "{err}");
}

#[test]
fn overlapping_splits_name_file_and_line() {
    let dir = small_export();
    fs::write(
        dir.path().join("splits.json"),
        "{\n  \"train\": [0],\n  \"val\": [1],\n  \"test\": [2, 0]\n}\n",
    )
    .unwrap();
    let err = load_err(&dir);
    assert!(matches!(err, DataError::OverlappingSplits { node: 0, .. }), "{err:?}");
    assert!(err.to_string().contains("splits.json:4"), "{err}");
}

#[test]
fn malformed_edge_line_names_file_and_line() {
    let dir = small_export();
    fs::write(dir.path().join("edges.tsv"), "0\t1\n1\t2\t0\n").unwrap();
    let err = load_err(&dir);
    assert!(matches!(err, DataError::Malformed { .. }), "{err:?}");
    assert!(err.to_string().contains("edges.tsv:2"), "{err}");
}

#[test]
fn diagnostics_are_distinct() {
    let cases: [(&str, &str); 3] = [
        ("features.csv", "0,1\n1,0,2\n0.5,0.5\n"),
        ("labels.tsv", "0\t0\n1\t5\n"),
        ("edges.tsv", "0\t1\n1\t2\t0\n"),
    ];
    let messages: Vec<String> = cases
        .iter()
        .map(|(file, body)| {
            let dir = small_export();
            fs::write(dir.path().join(file), body).unwrap();
            load_err(&dir).to_string()
        })
        .collect();
    for i in 0..messages.len() {
        for j in i + 1..messages.len() {
            assert_ne!(messages[i], messages[j]);
        }
    }
}

#[test]
fn replay_from_disk_reproduces_metrics() {
    let (graph, ds) = xor(1);
    let dir = tempfile::tempdir().unwrap();
    let loaded = load_dataset(&export_dataset(&graph, &ds, dir.path()).unwrap()).unwrap();
    let spec = preset(Preset::SasA, 2, 2, MlpConfig::default(), TrainConfig::default())
        .unwrap()
        .with_seed(7);
    let direct = run_pipeline(&spec, &ds, &graph).unwrap();
    let replayed = run_pipeline(&spec, &loaded.dataset, &loaded.graph).unwrap();
    assert_eq!(direct, replayed);
}

#[test]
fn checkpoint_round_trip_is_lossless() {
    let (graph, ds) = xor(2);
    let spec = preset(Preset::SasB, 2, 3, MlpConfig::default(), TrainConfig { epochs: 50, ..TrainConfig::default() }).unwrap();
    let run = run_pipeline_detailed(&spec, &ds, &graph, &NoClock).unwrap();
    let checkpoint = Checkpoint::new(spec, 3, run.model);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&path, &checkpoint).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), checkpoint);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let (graph, ds) = xor(2);
    let spec = preset(Preset::SasA, 2, 1, MlpConfig::default(), TrainConfig { epochs: 5, ..TrainConfig::default() }).unwrap();
    let run = run_pipeline_detailed(&spec, &ds, &graph, &NoClock).unwrap();
    let mut checkpoint = Checkpoint::new(spec, 1, run.model);
    checkpoint.pipeline.mlp.num_layers = 3;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&path, &checkpoint).unwrap();
    assert!(load_checkpoint(&path).is_err());
}
