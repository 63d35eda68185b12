//! On-disk datasets.
//!
//! A dataset directory holds a JSON manifest plus four files:
//!
//! * edge list, one `u<TAB>v` pair per line, `#` starts a comment;
//! * features, headerless CSV with `N` rows of `D` decimal floats;
//! * labels, `node<TAB>class` lines; nodes without a line are unlabeled;
//! * splits, a JSON object with `train`, `val` and `test` index arrays.
//!
//! Node references in the edge and label files are dense indices unless the
//! manifest names a node-id file, in which case line `i` of that file is the
//! external id of node `i` and edges and labels use those ids.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sas_core::dataset::{DatasetError, SplitName, Splits};
use sas_core::{build_graph, Dataset, Graph, Matrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
const EDGES_FILE: &str = "edges.tsv";
const FEATURES_FILE: &str = "features.csv";
const LABELS_FILE: &str = "labels.tsv";
const SPLITS_FILE: &str = "splits.json";
const NODE_IDS_FILE: &str = "node_ids.txt";

/// A file, and a 1-based line within it when one applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub path: PathBuf,
    pub line: Option<u64>,
}

impl Location {
    fn file(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            line: None,
        }
    }

    fn line(path: &Path, line: u64) -> Self {
        Self {
            path: path.to_path_buf(),
            line: Some(line),
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}", self.path.display(), line),
            None => write!(f, "{}", self.path.display()),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{at}: {source}")]
    Io {
        at: Location,
        #[source]
        source: io::Error,
    },
    #[error("{at}: invalid JSON: {source}")]
    Json {
        at: Location,
        #[source]
        source: serde_json::Error,
    },
    #[error("{at}: {source}")]
    Csv {
        at: Location,
        #[source]
        source: csv::Error,
    },
    #[error("{at}: malformed line: {message}")]
    Malformed { at: Location, message: String },
    #[error("{at}: {what}: manifest declares {declared}, found {found}")]
    DimensionMismatch {
        at: Location,
        what: &'static str,
        declared: usize,
        found: usize,
    },
    #[error("{at}: class {class} is not below the declared class count {num_classes}")]
    UnknownClass { at: Location, class: usize, num_classes: usize },
    #[error("{at}: unknown node `{node}`")]
    UnknownNode { at: Location, node: String },
    #[error("{at}: node {node} is labeled twice")]
    DuplicateLabel { at: Location, node: usize },
    #[error("{at}: {split} split references node {node}, but there are {num_nodes} nodes")]
    SplitIndexOutOfRange {
        at: Location,
        split: SplitName,
        node: usize,
        num_nodes: usize,
    },
    #[error("{at}: node {node} is in both the {first} and {second} splits")]
    OverlappingSplits {
        at: Location,
        node: usize,
        first: SplitName,
        second: SplitName,
    },
    #[error("{at}: node {node} is listed twice in the {split} split")]
    DuplicateInSplit { at: Location, split: SplitName, node: usize },
    #[error("{at}: training node {node} has no label")]
    UnlabeledTrainNode { at: Location, node: usize },
    #[error("{at}: unsupported format version {found} (expected {FORMAT_VERSION})")]
    UnsupportedVersion { at: Location, found: u32 },
    #[error("{at}: {source}")]
    Dataset {
        at: Location,
        #[source]
        source: DatasetError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        at: Location::file(path),
        source,
    }
}

/// Describes a dataset directory. File paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub edges: String,
    pub features: String,
    pub labels: String,
    pub splits: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_ids: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub graph: Graph,
    pub dataset: Dataset,
    /// External node ids when the manifest names a node-id file.
    pub node_ids: Option<Vec<String>>,
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|source| DataError::Json {
        at: Location::line(path, source.line() as u64),
        source,
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DataError::UnsupportedVersion {
            at: Location::file(path),
            found: manifest.format_version,
        });
    }
    if manifest.feature_dim == 0 {
        return Err(DataError::Malformed {
            at: Location::file(path),
            message: "feature_dim must be at least 1".into(),
        });
    }
    Ok(manifest)
}

/// Reads and validates the dataset described by the manifest at `path`.
pub fn load_dataset(path: &Path) -> Result<LoadedDataset, DataError> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let n = manifest.num_nodes;

    let node_ids = match &manifest.node_ids {
        Some(file) => Some(read_node_ids(&base.join(file), n)?),
        None => None,
    };
    let resolver = NodeResolver::new(node_ids.as_deref(), n);

    let features = read_features(&base.join(&manifest.features), n, manifest.feature_dim)?;
    let labels = read_labels(&base.join(&manifest.labels), &resolver, n, manifest.num_classes)?;
    let edges = read_edges(&base.join(&manifest.edges), &resolver)?;
    let splits_path = base.join(&manifest.splits);
    let splits = read_splits(&splits_path, &labels)?;

    let graph = build_graph(&edges, n).expect("edge endpoints are resolved against the node count");
    let dataset = Dataset::new(features, labels, manifest.num_classes, splits).map_err(|source| DataError::Dataset {
        at: Location::file(&splits_path),
        source,
    })?;
    Ok(LoadedDataset {
        manifest,
        graph,
        dataset,
        node_ids,
    })
}

fn read_node_ids(path: &Path, num_nodes: usize) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut ids = Vec::with_capacity(num_nodes);
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(DataError::Malformed {
                at: Location::line(path, i as u64 + 1),
                message: format!("node id `{line}` is empty or contains whitespace"),
            });
        }
        if seen.insert(id.to_string(), i).is_some() {
            return Err(DataError::Malformed {
                at: Location::line(path, i as u64 + 1),
                message: format!("node id `{id}` appears twice"),
            });
        }
        ids.push(id.to_string());
    }
    if ids.len() != num_nodes {
        return Err(DataError::DimensionMismatch {
            at: Location::file(path),
            what: "node ids",
            declared: num_nodes,
            found: ids.len(),
        });
    }
    Ok(ids)
}

/// Maps node references in edge and label files to dense indices.
enum NodeResolver {
    Dense(usize),
    Named(HashMap<String, usize>),
}

impl NodeResolver {
    fn new(ids: Option<&[String]>, num_nodes: usize) -> Self {
        match ids {
            Some(ids) => Self::Named(ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect()),
            None => Self::Dense(num_nodes),
        }
    }

    fn resolve(&self, token: &str, at: impl FnOnce() -> Location) -> Result<usize, DataError> {
        let found = match self {
            Self::Dense(n) => token.parse::<usize>().ok().filter(|i| i < n),
            Self::Named(map) => map.get(token).copied(),
        };
        found.ok_or_else(|| DataError::UnknownNode {
            at: at(),
            node: token.to_string(),
        })
    }
}

/// Non-blank, non-comment lines split into exactly two fields.
fn pairs<'a>(path: &'a Path, text: &'a str) -> impl Iterator<Item = Result<(u64, &'a str, &'a str), DataError>> + 'a {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let line_no = i as u64 + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        let mut fields = line.split_whitespace();
        Some(match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => Ok((line_no, a, b)),
            _ => Err(DataError::Malformed {
                at: Location::line(path, line_no),
                message: format!("expected two tab-separated fields, got `{raw}`"),
            }),
        })
    })
}

fn read_edges(path: &Path, resolver: &NodeResolver) -> Result<Vec<(usize, usize)>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    pairs(path, &text)
        .map(|pair| {
            let (line, a, b) = pair?;
            let u = resolver.resolve(a, || Location::line(path, line))?;
            let v = resolver.resolve(b, || Location::line(path, line))?;
            Ok((u, v))
        })
        .collect()
}

fn read_labels(
    path: &Path,
    resolver: &NodeResolver,
    num_nodes: usize,
    num_classes: usize,
) -> Result<Vec<Option<usize>>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut labels = vec![None; num_nodes];
    for pair in pairs(path, &text) {
        let (line, a, b) = pair?;
        let at = || Location::line(path, line);
        let node = resolver.resolve(a, at)?;
        let class: usize = b.parse().map_err(|_| DataError::Malformed {
            at: at(),
            message: format!("class id `{b}` is not a non-negative integer"),
        })?;
        if class >= num_classes {
            return Err(DataError::UnknownClass {
                at: at(),
                class,
                num_classes,
            });
        }
        if labels[node].replace(class).is_some() {
            return Err(DataError::DuplicateLabel { at: at(), node });
        }
    }
    Ok(labels)
}

fn read_features(path: &Path, num_nodes: usize, feature_dim: usize) -> Result<Matrix, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|source| DataError::Csv {
            at: Location::file(path),
            source,
        })?;
    let mut data = Vec::with_capacity(num_nodes * feature_dim);
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|source| DataError::Csv {
            at: Location::file(path),
            source,
        })?;
        let line = record.position().map_or(rows as u64 + 1, |p| p.line());
        if record.len() != feature_dim {
            return Err(DataError::DimensionMismatch {
                at: Location::line(path, line),
                what: "feature columns",
                declared: feature_dim,
                found: record.len(),
            });
        }
        for field in record.iter() {
            let value: f64 = field.trim().parse().map_err(|_| DataError::Malformed {
                at: Location::line(path, line),
                message: format!("`{field}` is not a number"),
            })?;
            data.push(value);
        }
        rows += 1;
    }
    if rows != num_nodes {
        return Err(DataError::DimensionMismatch {
            at: Location::file(path),
            what: "feature rows",
            declared: num_nodes,
            found: rows,
        });
    }
    Ok(Matrix::from_vec(rows, feature_dim, data))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitsFile {
    #[serde(default)]
    train: Vec<usize>,
    #[serde(default)]
    val: Vec<usize>,
    #[serde(default)]
    test: Vec<usize>,
}

/// Line of every integer inside each top-level array of a splits file, in order.
fn split_entry_lines(text: &str) -> HashMap<String, Vec<u64>> {
    let mut out: HashMap<String, Vec<u64>> = HashMap::new();
    let mut line = 1;
    let mut key = String::new();
    let mut in_array = false;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\n' => line += 1,
            '"' => {
                let mut s = String::new();
                for c in chars.by_ref() {
                    if c == '"' {
                        break;
                    }
                    s.push(c);
                }
                if !in_array {
                    key = s;
                }
            }
            '[' => in_array = true,
            ']' => in_array = false,
            '0'..='9' if in_array => {
                while chars.peek().is_some_and(|c| c.is_ascii_digit()) {
                    chars.next();
                }
                out.entry(key.clone()).or_default().push(line);
            }
            _ => {}
        }
    }
    out
}

fn read_splits(path: &Path, labels: &[Option<usize>]) -> Result<Splits, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: SplitsFile = serde_json::from_str(&text).map_err(|source| DataError::Json {
        at: Location::line(path, source.line() as u64),
        source,
    })?;
    let lines = split_entry_lines(&text);
    let n = labels.len();
    let mut owner: Vec<Option<SplitName>> = vec![None; n];
    for (split, nodes) in [
        (SplitName::Train, &file.train),
        (SplitName::Val, &file.val),
        (SplitName::Test, &file.test),
    ] {
        let entry_lines = lines.get(split.as_str());
        for (pos, &node) in nodes.iter().enumerate() {
            let at = match entry_lines.and_then(|l| l.get(pos)) {
                Some(&line) => Location::line(path, line),
                None => Location::file(path),
            };
            if node >= n {
                return Err(DataError::SplitIndexOutOfRange {
                    at,
                    split,
                    node,
                    num_nodes: n,
                });
            }
            match owner[node] {
                Some(first) if first == split => return Err(DataError::DuplicateInSplit { at, split, node }),
                Some(first) => {
                    return Err(DataError::OverlappingSplits {
                        at,
                        node,
                        first,
                        second: split,
                    })
                }
                None => owner[node] = Some(split),
            }
            if split == SplitName::Train && labels[node].is_none() {
                return Err(DataError::UnlabeledTrainNode { at, node });
            }
        }
    }
    Ok(Splits {
        train: file.train,
        val: file.val,
        test: file.test,
    })
}

/// Writes `graph` and `dataset` into `dir` and returns the manifest path. The same
/// inputs always produce the same bytes.
pub fn export_dataset(graph: &Graph, dataset: &Dataset, dir: &Path) -> Result<PathBuf, DataError> {
    export_with_ids(graph, dataset, None, dir)
}

/// Like [`export_dataset`], with edges and labels written against external node ids.
pub fn export_with_ids(
    graph: &Graph,
    dataset: &Dataset,
    node_ids: Option<&[String]>,
    dir: &Path,
) -> Result<PathBuf, DataError> {
    assert_eq!(graph.num_nodes(), dataset.num_nodes(), "graph and dataset node counts differ");
    if let Some(ids) = node_ids {
        assert_eq!(ids.len(), dataset.num_nodes(), "one external id per node");
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = |i: usize| -> String {
        match node_ids {
            Some(ids) => ids[i].clone(),
            None => i.to_string(),
        }
    };

    let path = dir.join(EDGES_FILE);
    write_file(&path, |w| {
        writeln!(w, "# {} nodes, {} undirected edges", graph.num_nodes(), graph.num_edges())?;
        for (u, v) in graph.edges() {
            writeln!(w, "{}\t{}", name(u), name(v))?;
        }
        Ok(())
    })?;

    let path = dir.join(FEATURES_FILE);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    for row in dataset.features().row_iter() {
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(|source| DataError::Csv {
                at: Location::file(&path),
                source,
            })?;
    }
    writer.flush().map_err(io_err(&path))?;

    let path = dir.join(LABELS_FILE);
    write_file(&path, |w| {
        for (i, label) in dataset.labels().iter().enumerate() {
            if let Some(class) = label {
                writeln!(w, "{}\t{}", name(i), class)?;
            }
        }
        Ok(())
    })?;

    let path = dir.join(SPLITS_FILE);
    let splits = dataset.splits();
    let file = SplitsFile {
        train: splits.train.clone(),
        val: splits.val.clone(),
        test: splits.test.clone(),
    };
    write_json(&path, &file)?;

    if let Some(ids) = node_ids {
        let path = dir.join(NODE_IDS_FILE);
        write_file(&path, |w| ids.iter().try_for_each(|id| writeln!(w, "{id}")))?;
    }

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        num_nodes: dataset.num_nodes(),
        feature_dim: dataset.feature_dim(),
        num_classes: dataset.num_classes(),
        edges: EDGES_FILE.into(),
        features: FEATURES_FILE.into(),
        labels: LABELS_FILE.into(),
        splits: SPLITS_FILE.into(),
        node_ids: node_ids.map(|_| NODE_IDS_FILE.into()),
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| DataError::Json {
        at: Location::file(path),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| DataError::Json {
        at: Location::line(path, source.line() as u64),
        source,
    })
}
