//! Split-restricted accuracy, micro-F1 and confusion matrices.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("evaluation subset is empty")]
    EmptySubset,
    #[error("node {0} in evaluation subset has no known label")]
    UnknownTruth(usize),
    #[error("node {index} out of range for {len} predictions")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("class {class} at node {node} is outside 0..{num_classes}")]
    ClassOutOfRange {
        node: usize,
        class: usize,
        num_classes: usize,
    },
}

/// Rows are the true class, columns the predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn compute(
        pred: &[usize],
        truth: &[Option<usize>],
        subset: &[usize],
        num_classes: usize,
    ) -> Result<Self, MetricsError> {
        let mut cm = Self::new(num_classes);
        for_each_pair(pred, truth, subset, |node, p, t| {
            for class in [p, t] {
                if class >= num_classes {
                    return Err(MetricsError::ClassOutOfRange {
                        node,
                        class,
                        num_classes,
                    });
                }
            }
            cm.counts[t * num_classes + p] += 1;
            Ok(())
        })?;
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.num_classes)
            .filter(|&t| t != class)
            .map(|t| self.get(t, class))
            .sum()
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.num_classes)
            .filter(|&p| p != class)
            .map(|p| self.get(class, p))
            .sum()
    }

    /// Micro-averaged F1: pooled TP/FP/FN over classes.
    pub fn micro_f1(&self) -> f64 {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for c in 0..self.num_classes {
            tp += self.true_positives(c);
            fp += self.false_positives(c);
            fn_ += self.false_negatives(c);
        }
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * tp) as f64 / denom as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }
}

fn for_each_pair(
    pred: &[usize],
    truth: &[Option<usize>],
    subset: &[usize],
    mut f: impl FnMut(usize, usize, usize) -> Result<(), MetricsError>,
) -> Result<(), MetricsError> {
    if subset.is_empty() {
        return Err(MetricsError::EmptySubset);
    }
    for &node in subset {
        let len = pred.len().min(truth.len());
        if node >= len {
            return Err(MetricsError::IndexOutOfRange { index: node, len });
        }
        let t = truth[node].ok_or(MetricsError::UnknownTruth(node))?;
        f(node, pred[node], t)?;
    }
    Ok(())
}

/// Fraction of `subset` nodes whose prediction matches the known label.
pub fn accuracy(pred: &[usize], truth: &[Option<usize>], subset: &[usize]) -> Result<f64, MetricsError> {
    let mut hits = 0usize;
    for_each_pair(pred, truth, subset, |_, p, t| {
        hits += usize::from(p == t);
        Ok(())
    })?;
    Ok(hits as f64 / subset.len() as f64)
}

/// Micro-averaged F1 over all classes present in `pred` or `truth`.
pub fn micro_f1(pred: &[usize], truth: &[Option<usize>], subset: &[usize]) -> Result<f64, MetricsError> {
    let mut num_classes = 0;
    for_each_pair(pred, truth, subset, |_, p, t| {
        num_classes = num_classes.max(p + 1).max(t + 1);
        Ok(())
    })?;
    Ok(ConfusionMatrix::compute(pred, truth, subset, num_classes)?.micro_f1())
}
