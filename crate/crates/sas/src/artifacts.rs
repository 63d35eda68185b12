//! Model checkpoints, result files and experiment manifests.

use std::io;
use std::path::Path;

use sas_core::pipeline::{OrderingStudy, StageTimings};
use sas_core::{ExperimentResult, MlpModel, PipelineSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{read_json, write_json, DataError};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const RESULT_VERSION: u32 = 1;
pub const EXPERIMENT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: unsupported format version {found}")]
    UnsupportedVersion { path: String, found: u32 },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

/// A trained model together with everything needed to apply it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    pub pipeline: PipelineSpec,
    /// Propagation steps applied after the transforms.
    pub post_k: usize,
    /// Layer shapes and row-major weights.
    pub model: MlpModel,
}

impl Checkpoint {
    pub fn new(pipeline: PipelineSpec, post_k: usize, model: MlpModel) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            seed: pipeline.train.seed,
            pipeline,
            post_k,
            model,
        }
    }

    fn check(&self) -> Result<(), String> {
        let layers = self.model.layers();
        if layers.is_empty() {
            return Err("model has no layers".into());
        }
        if layers.len() != self.pipeline.mlp.num_layers {
            return Err(format!(
                "{} layers stored, pipeline expects {}",
                layers.len(),
                self.pipeline.mlp.num_layers
            ));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (rows, cols) = layer.weight.shape();
            if layer.weight.as_slice().len() != rows * cols {
                return Err(format!("layer {i}: {} weights for shape {rows}x{cols}", layer.weight.as_slice().len()));
            }
            if layer.bias.len() != cols {
                return Err(format!("layer {i}: bias length {} for width {cols}", layer.bias.len()));
            }
            if i > 0 && layers[i - 1].output_dim() != rows {
                return Err(format!("layer {i}: input width {rows} does not follow the previous layer"));
            }
        }
        if !self.model.is_finite() {
            return Err("non-finite weights".into());
        }
        self.pipeline.validate().map_err(|e| e.to_string())
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), ArtifactError> {
    Ok(write_json(path, checkpoint)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ArtifactError> {
    let checkpoint: Checkpoint = read_json(path)?;
    if checkpoint.format_version != CHECKPOINT_VERSION {
        return Err(ArtifactError::UnsupportedVersion {
            path: path.display().to_string(),
            found: checkpoint.format_version,
        });
    }
    checkpoint.check().map_err(|message| ArtifactError::Invalid {
        path: path.display().to_string(),
        message,
    })?;
    Ok(checkpoint)
}

/// Result JSON. The payload is a pure function of the inputs; wall-clock timings
/// sit beside it and can be left out entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile<T> {
    pub format_version: u32,
    pub payload: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<serde_json::Value>,
}

impl<T: Serialize> ResultFile<T> {
    pub fn new<S: Serialize>(payload: T, timing: Option<S>) -> Self {
        Self {
            format_version: RESULT_VERSION,
            payload,
            timing: timing.map(|t| serde_json::to_value(t).expect("timings serialize")),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        write_json(path, self)
    }
}

/// One CSV row per run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRow {
    pub dataset: String,
    pub pipeline: String,
    pub seed: u64,
    pub train_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub test_micro_f1: Option<f64>,
    pub chosen_k: Option<usize>,
    pub train_ms: Option<f64>,
    pub aggregate_ms: Option<f64>,
    pub inference_ms: Option<f64>,
}

impl CellRow {
    pub fn new(dataset: &str, result: &ExperimentResult, timing: Option<&StageTimings>) -> Self {
        let m = &result.metrics;
        Self {
            dataset: dataset.to_string(),
            pipeline: result.pipeline.clone(),
            seed: result.seed,
            train_accuracy: m.train.map(|s| s.accuracy),
            val_accuracy: m.val.map(|s| s.accuracy),
            test_accuracy: m.test.map(|s| s.accuracy),
            test_micro_f1: m.test.map(|s| s.micro_f1),
            chosen_k: result.chosen_k,
            train_ms: timing.map(|t| t.train_ms),
            aggregate_ms: timing.map(|t| t.aggregate_ms),
            inference_ms: timing.map(|t| t.inference_ms),
        }
    }
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), DataError> {
    let csv_err = |source| DataError::Csv {
        at: crate::dataio::Location {
            path: path.to_path_buf(),
            line: None,
        },
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source: io::Error| DataError::Io {
        at: crate::dataio::Location {
            path: path.to_path_buf(),
            line: None,
        },
        source,
    })
}

/// Specs and seeds to run against one dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub format_version: u32,
    /// Dataset manifest path, relative to this file.
    pub dataset: String,
    pub pipelines: Vec<PipelineSpec>,
    pub seeds: Vec<u64>,
}

/// Configuration echo of an ordering study run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub format_version: u32,
    pub studies: Vec<OrderingStudy>,
    pub pipelines: Vec<String>,
    pub seeds: Vec<u64>,
}

pub fn read_experiment(path: &Path) -> Result<ExperimentManifest, ArtifactError> {
    let manifest: ExperimentManifest = read_json(path)?;
    if manifest.format_version != EXPERIMENT_VERSION {
        return Err(ArtifactError::UnsupportedVersion {
            path: path.display().to_string(),
            found: manifest.format_version,
        });
    }
    if manifest.pipelines.is_empty() || manifest.seeds.is_empty() {
        return Err(ArtifactError::Invalid {
            path: path.display().to_string(),
            message: "needs at least one pipeline and one seed".into(),
        });
    }
    Ok(manifest)
}
