//! Importer for the tab-separated citation-network distribution of Cora and
//! Citeseer: a `.content` file of `id<TAB>features...<TAB>class` rows and a
//! `.cites` file of `cited<TAB>citing` pairs.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use sas_core::dataset::Splits;
use sas_core::{build_graph, Dataset, Graph, Matrix};

use crate::dataio::{DataError, Location};

#[derive(Debug, Clone)]
pub struct Imported {
    pub graph: Graph,
    /// Every node labeled, no splits.
    pub dataset: Dataset,
    pub node_ids: Vec<String>,
    /// Class names in index order (sorted).
    pub class_names: Vec<String>,
    /// Citation lines naming a paper missing from the content file.
    pub dangling_citations: usize,
}

pub fn import(content: &Path, cites: &Path) -> Result<Imported, DataError> {
    let text = fs::read_to_string(content).map_err(|source| DataError::Io {
        at: Location {
            path: content.to_path_buf(),
            line: None,
        },
        source,
    })?;
    let at = |line: usize| Location {
        path: content.to_path_buf(),
        line: Some(line as u64 + 1),
    };

    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut classes = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(DataError::Malformed {
                at: at(i),
                message: "expected an id, features and a class".into(),
            });
        }
        let features = &fields[1..fields.len() - 1];
        if *width.get_or_insert(features.len()) != features.len() {
            return Err(DataError::DimensionMismatch {
                at: at(i),
                what: "feature columns",
                declared: width.unwrap_or(0),
                found: features.len(),
            });
        }
        let row = features
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| DataError::Malformed {
                    at: at(i),
                    message: format!("`{f}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        ids.push(fields[0].to_string());
        rows.push(row);
        classes.push(fields[fields.len() - 1].to_string());
    }

    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    if index.len() != ids.len() {
        return Err(DataError::Malformed {
            at: Location {
                path: content.to_path_buf(),
                line: None,
            },
            message: "duplicate paper id".into(),
        });
    }
    let class_names: Vec<String> = classes.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let class_index: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let labels = classes.iter().map(|c| Some(class_index[c.as_str()])).collect();

    let cites_text = fs::read_to_string(cites).map_err(|source| DataError::Io {
        at: Location {
            path: cites.to_path_buf(),
            line: None,
        },
        source,
    })?;
    let mut edges = Vec::new();
    let mut dangling = 0;
    for (i, line) in cites_text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        match (fields.next(), fields.next(), fields.next()) {
            (None, ..) => continue,
            (Some(a), Some(b), None) => match (index.get(a), index.get(b)) {
                (Some(&u), Some(&v)) => edges.push((u, v)),
                _ => dangling += 1,
            },
            _ => {
                return Err(DataError::Malformed {
                    at: Location {
                        path: cites.to_path_buf(),
                        line: Some(i as u64 + 1),
                    },
                    message: format!("expected two paper ids, got `{line}`"),
                })
            }
        }
    }

    let n = ids.len();
    let graph = build_graph(&edges, n).expect("endpoints come from the id index");
    let features = Matrix::from_rows(&rows);
    let dataset = Dataset::new(features, labels, class_names.len().max(1), Splits::default()).map_err(|source| {
        DataError::Dataset {
            at: Location {
                path: content.to_path_buf(),
                line: None,
            },
            source,
        }
    })?;
    Ok(Imported {
        graph,
        dataset,
        node_ids: ids,
        class_names,
        dangling_citations: dangling,
    })
}

/// Fractions of nodes assigned to train, val and test by [`fractional_splits`].
pub const PLANETOID_FRACTIONS: (f64, f64, f64) = (0.05, 0.18, 0.37);

/// Seeded random split with the given fractions of all labeled nodes.
pub fn fractional_splits(dataset: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Splits {
    let labeled: Vec<usize> = (0..dataset.num_nodes()).filter(|&i| dataset.labels()[i].is_some()).collect();
    let n = labeled.len() as f64;
    let count = |f: f64| (f * n).round() as usize;
    Splits::random(&labeled, count(fractions.0), count(fractions.1), count(fractions.2), seed)
        .expect("fractions sum to at most one")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imports_tiny_network() {
        let dir = tempfile::tempdir().unwrap();
        let content = dir.path().join("x.content");
        let cites = dir.path().join("x.cites");
        fs::write(&content, "p1\t0\t1\tB\np2\t1\t0\tA\np3\t1\t1\tB\n").unwrap();
        fs::write(&cites, "p1\tp2\np2\tp1\np3\tp1\np9\tp1\n").unwrap();
        let imported = import(&content, &cites).unwrap();
        assert_eq!(imported.class_names, ["A", "B"]);
        assert_eq!(imported.dataset.labels(), &[Some(1), Some(0), Some(1)]);
        assert_eq!(imported.graph.num_edges(), 2);
        assert_eq!(imported.dangling_citations, 1);
        assert_eq!(imported.dataset.features().row(2), &[1.0, 1.0]);
    }

    #[test]
    fn ragged_content_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let content = dir.path().join("x.content");
        let cites = dir.path().join("x.cites");
        fs::write(&content, "p1\t0\t1\tB\np2\t1\tA\n").unwrap();
        fs::write(&cites, "").unwrap();
        let err = import(&content, &cites).unwrap_err();
        assert!(matches!(err, DataError::DimensionMismatch { .. }));
        assert!(err.to_string().contains("x.content:2"));
    }
}
