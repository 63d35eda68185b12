//! Post-classifier aggregation of predicted label vectors:
//! `P(k) = Λ P(0) + (I − Λ) S P(k−1)` with `Λ = 0` or `Λ = αI`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{argmax, Matrix};
use crate::graph::CouplingMatrix;
use crate::metrics::{accuracy, MetricsError};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_MAX_K: usize = 20;
pub const DEFAULT_PATIENCE: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropagationError {
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("invalid propagation config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropagationMode {
    /// `Λ = 0`: plain repeated smoothing.
    NoResidual,
    /// `Λ = αI`: mixes `α` of the initial predictions back in at every step.
    Residual { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KSelection {
    Fixed { k: usize },
    /// Pick `k` in `0..=max_k` by validation accuracy.
    Auto { max_k: usize, patience: usize },
}

impl KSelection {
    pub fn auto() -> Self {
        KSelection::Auto {
            max_k: DEFAULT_MAX_K,
            patience: DEFAULT_PATIENCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub mode: PropagationMode,
    pub k: KSelection,
}

impl PropagationConfig {
    pub fn no_residual(k: usize) -> Self {
        Self {
            mode: PropagationMode::NoResidual,
            k: KSelection::Fixed { k },
        }
    }

    pub fn residual(alpha: f64, k: usize) -> Self {
        Self {
            mode: PropagationMode::Residual { alpha },
            k: KSelection::Fixed { k },
        }
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        if let PropagationMode::Residual { alpha } = self.mode {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(PropagationError::InvalidConfig("alpha must lie in (0, 1]"));
            }
        }
        match self.k {
            KSelection::Fixed { k: 0 } => Err(PropagationError::InvalidConfig("fixed K must be at least 1")),
            KSelection::Auto { max_k: 0, .. } => Err(PropagationError::InvalidConfig("max_k must be at least 1")),
            _ => Ok(()),
        }
    }
}

/// Per-node class-score rows tagged with the aggregation step that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    pub scores: Matrix,
    pub step: usize,
}

impl PredictionMatrix {
    pub fn initial(scores: Matrix) -> Self {
        Self { scores, step: 0 }
    }

    pub fn num_nodes(&self) -> usize {
        self.scores.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.scores.cols()
    }
}

/// One update `Λ P0 + (I − Λ) S P_prev`.
///
/// Panics if the shapes of `prev`, `initial` and `coupling` disagree.
pub fn aggregate_once(
    prev: &PredictionMatrix,
    initial: &PredictionMatrix,
    coupling: &CouplingMatrix,
    mode: PropagationMode,
) -> PredictionMatrix {
    assert_eq!(
        prev.scores.shape(),
        initial.scores.shape(),
        "aggregate_once: previous and initial predictions differ in shape"
    );
    let mut scores = coupling.spmm(&prev.scores);
    if let PropagationMode::Residual { alpha } = mode {
        for (s, &p0) in scores.as_mut_slice().iter_mut().zip(initial.scores.as_slice()) {
            *s = alpha * p0 + (1.0 - alpha) * *s;
        }
    }
    PredictionMatrix {
        scores,
        step: prev.step + 1,
    }
}

/// `k` updates, each anchored to the same `initial` predictions.
pub fn propagate(
    initial: &PredictionMatrix,
    coupling: &CouplingMatrix,
    mode: PropagationMode,
    k: usize,
) -> PredictionMatrix {
    let mut current = initial.clone();
    for _ in 0..k {
        current = aggregate_once(&current, initial, coupling, mode);
    }
    current
}

/// Row-wise argmax, lowest index on ties.
pub fn final_labels(predictions: &PredictionMatrix) -> Vec<usize> {
    predictions
        .scores
        .row_iter()
        .map(|row| argmax(row).unwrap_or(0))
        .collect()
}

/// Tracks the best validation score over increasing `k` and decides when to stop.
#[derive(Debug, Clone)]
pub struct KSearch {
    patience: usize,
    best_k: usize,
    best_score: f64,
    since_improved: usize,
    trace: Vec<f64>,
}

impl KSearch {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_k: 0,
            best_score: f64::NEG_INFINITY,
            since_improved: 0,
            trace: Vec::new(),
        }
    }

    /// Records the score for the next `k` (starting at 0). Returns `false` once the
    /// search should stop.
    pub fn observe(&mut self, score: f64) -> bool {
        let k = self.trace.len();
        self.trace.push(score);
        if score > self.best_score {
            self.best_score = score;
            self.best_k = k;
            self.since_improved = 0;
        } else {
            self.since_improved += 1;
        }
        self.since_improved < self.patience.max(1)
    }

    pub fn best_k(&self) -> usize {
        self.best_k
    }

    pub fn best_score(&self) -> f64 {
        self.best_score
    }

    pub fn trace(&self) -> &[f64] {
        &self.trace
    }
}

/// Best `k` for a precomputed accuracy trace (index = k).
pub fn best_k_from_trace(trace: &[f64], patience: usize) -> usize {
    let mut search = KSearch::new(patience);
    for &score in trace {
        if !search.observe(score) {
            break;
        }
    }
    search.best_k()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionOutcome {
    pub best_k: usize,
    pub predictions: PredictionMatrix,
    /// Validation accuracy for `k = 0, 1, ...` up to where the search stopped.
    pub trace: Vec<f64>,
}

/// Sweeps `k = 0..=max_k`, one sparse product per candidate, and returns the `k`
/// with the highest validation accuracy (smallest `k` on ties).
pub fn select_k(
    initial: &PredictionMatrix,
    coupling: &CouplingMatrix,
    mode: PropagationMode,
    max_k: usize,
    patience: usize,
    labels: &[Option<usize>],
    val_indices: &[usize],
) -> Result<KSelectionOutcome, PropagationError> {
    if val_indices.is_empty() {
        return Err(PropagationError::EmptyValidation);
    }
    if max_k == 0 {
        return Err(PropagationError::InvalidConfig("max_k must be at least 1"));
    }
    let mut search = KSearch::new(patience);
    let mut current = initial.clone();
    let mut best = initial.clone();
    loop {
        let acc = accuracy(&final_labels(&current), labels, val_indices)?;
        let improved = acc > search.best_score();
        let keep_going = search.observe(acc);
        if improved {
            best = current.clone();
        }
        if !keep_going || current.step == max_k {
            break;
        }
        current = aggregate_once(&current, initial, coupling, mode);
    }
    Ok(KSelectionOutcome {
        best_k: search.best_k(),
        predictions: best,
        trace: search.trace,
    })
}
