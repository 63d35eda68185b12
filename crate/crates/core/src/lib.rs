//! Node classification by training a feature-only classifier first and
//! propagating its predicted label vectors over the graph afterwards.
//!
//! The crate is `no_std` (with `alloc`). File formats, the CLI and wall-clock
//! timing live in the `sas` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dense;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod dataset;
pub mod pipeline;
pub mod propagation;
pub mod synth;

pub use dataset::{Dataset, DatasetError, SplitName, Splits};
pub use dense::Matrix;
pub use graph::{build_graph, normalized_coupling, CouplingMatrix, Graph, GraphError};
pub use nn::{MlpConfig, MlpModel, TrainConfig, TrainError};
pub use pipeline::{ExperimentResult, PipelineError, PipelineSpec, Preset, Step, Task};
pub use propagation::{KSelection, PredictionMatrix, PropagationConfig, PropagationMode};
pub use synth::{SynthConfig, SynthDataset, SynthKind};
