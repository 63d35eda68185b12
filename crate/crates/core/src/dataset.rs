//! Validated in-memory node-classification datasets.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::Matrix;
use crate::synth::SynthDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl core::fmt::Display for SplitName {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("{labels} labels for {rows} feature rows")]
    LabelCountMismatch { rows: usize, labels: usize },
    #[error("node {node} has class {class}, expected < {num_classes}")]
    ClassOutOfRange {
        node: usize,
        class: usize,
        num_classes: usize,
    },
    #[error("{split} split references node {node}, but there are {num_nodes} nodes")]
    SplitIndexOutOfRange {
        split: SplitName,
        node: usize,
        num_nodes: usize,
    },
    #[error("node {node} appears in both the {first} and {second} splits")]
    OverlappingSplits {
        node: usize,
        first: SplitName,
        second: SplitName,
    },
    #[error("node {node} is listed twice in the {split} split")]
    DuplicateInSplit { split: SplitName, node: usize },
    #[error("training node {0} has no label")]
    UnlabeledTrainNode(usize),
    #[error("class count must be at least 1")]
    NoClasses,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Shuffles `candidates` with `seed` and cuts consecutive train, val and test
    /// blocks of the requested sizes. `None` if there are too few candidates.
    pub fn random(candidates: &[usize], train: usize, val: usize, test: usize, seed: u64) -> Option<Self> {
        if train + val + test > candidates.len() {
            return None;
        }
        let mut order = candidates.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(4);
        order.shuffle(&mut rng);
        let mut take = |n: usize| -> Vec<usize> {
            let mut part: Vec<usize> = order.drain(..n).collect();
            part.sort_unstable();
            part
        };
        Some(Self {
            train: take(train),
            val: take(val),
            test: take(test),
        })
    }

    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Features `N × D`, optional labels, class count and disjoint splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    splits: Splits,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self, DatasetError> {
        let n = features.rows();
        if labels.len() != n {
            return Err(DatasetError::LabelCountMismatch {
                rows: n,
                labels: labels.len(),
            });
        }
        if num_classes == 0 {
            return Err(DatasetError::NoClasses);
        }
        for (node, label) in labels.iter().enumerate() {
            if let Some(class) = *label {
                if class >= num_classes {
                    return Err(DatasetError::ClassOutOfRange {
                        node,
                        class,
                        num_classes,
                    });
                }
            }
        }
        let mut owner: Vec<Option<SplitName>> = vec![None; n];
        for split in [SplitName::Train, SplitName::Val, SplitName::Test] {
            for &node in splits.get(split) {
                if node >= n {
                    return Err(DatasetError::SplitIndexOutOfRange {
                        split,
                        node,
                        num_nodes: n,
                    });
                }
                match owner[node] {
                    Some(first) if first == split => {
                        return Err(DatasetError::DuplicateInSplit { split, node });
                    }
                    Some(first) => {
                        return Err(DatasetError::OverlappingSplits {
                            node,
                            first,
                            second: split,
                        });
                    }
                    None => owner[node] = Some(split),
                }
            }
        }
        if let Some(&node) = splits.train.iter().find(|&&i| labels[i].is_none()) {
            return Err(DatasetError::UnlabeledTrainNode(node));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn split(&self, name: SplitName) -> &[usize] {
        self.splits.get(name)
    }

    /// Same features and labels with different splits.
    pub fn with_splits(&self, splits: Splits) -> Result<Self, DatasetError> {
        Self::new(self.features.clone(), self.labels.clone(), self.num_classes, splits)
    }
}

impl From<&SynthDataset> for Dataset {
    fn from(ds: &SynthDataset) -> Self {
        Dataset {
            features: ds.features.clone(),
            labels: ds.labels.iter().copied().map(Some).collect(),
            num_classes: 2,
            splits: Splits {
                train: ds.train.clone(),
                val: Vec::new(),
                test: ds.test.clone(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(n: usize) -> Matrix {
        Matrix::zeros(n, 2)
    }

    #[test]
    fn valid_dataset() {
        let ds = Dataset::new(
            features(4),
            vec![Some(0), Some(1), None, Some(1)],
            2,
            Splits {
                train: vec![0, 1],
                val: vec![3],
                test: vec![2],
            },
        )
        .unwrap();
        assert_eq!(ds.num_nodes(), 4);
        assert_eq!(ds.split(SplitName::Val), &[3]);
    }

    #[test]
    fn rejects_overlap() {
        let err = Dataset::new(
            features(3),
            vec![Some(0); 3],
            1,
            Splits {
                train: vec![0, 1],
                val: vec![1],
                test: vec![],
            },
        )
        .unwrap_err();
        assert_eq!(
            err,
            DatasetError::OverlappingSplits {
                node: 1,
                first: SplitName::Train,
                second: SplitName::Val
            }
        );
    }

    #[test]
    fn rejects_bad_class_and_unlabeled_train() {
        let err = Dataset::new(features(2), vec![Some(0), Some(3)], 2, Splits::default()).unwrap_err();
        assert!(matches!(err, DatasetError::ClassOutOfRange { node: 1, class: 3, .. }));
        let err = Dataset::new(
            features(2),
            vec![Some(0), None],
            2,
            Splits {
                train: vec![1],
                ..Splits::default()
            },
        )
        .unwrap_err();
        assert_eq!(err, DatasetError::UnlabeledTrainNode(1));
    }

    #[test]
    fn random_splits_are_disjoint_and_seeded() {
        let candidates: Vec<usize> = (0..50).collect();
        let a = Splits::random(&candidates, 5, 10, 20, 3).unwrap();
        assert_eq!(a, Splits::random(&candidates, 5, 10, 20, 3).unwrap());
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (5, 10, 20));
        let ds = Dataset::new(features(50), vec![Some(0); 50], 1, a);
        assert!(ds.is_ok());
        assert!(Splits::random(&candidates, 30, 30, 0, 3).is_none());
    }

    #[test]
    fn rejects_out_of_range_and_duplicates() {
        let splits = Splits {
            test: vec![5],
            ..Splits::default()
        };
        let err = Dataset::new(features(2), vec![None, None], 2, splits).unwrap_err();
        assert!(matches!(err, DatasetError::SplitIndexOutOfRange { node: 5, .. }));
        let splits = Splits {
            test: vec![1, 1],
            ..Splits::default()
        };
        let err = Dataset::new(features(2), vec![None, None], 2, splits).unwrap_err();
        assert_eq!(
            err,
            DatasetError::DuplicateInSplit {
                split: SplitName::Test,
                node: 1
            }
        );
    }
}
