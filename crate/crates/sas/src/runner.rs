//! Parallel execution of independent runs. Every cell is deterministic on its own
//! and results are collected in configuration order.

use std::time::Instant;

use rayon::prelude::*;
use sas_core::metrics::accuracy;
use sas_core::pipeline::{
    run_pipeline_detailed, Clock, MeanStd, OrderingStudy, StageTimings, SweepCell, SweepTable, STUDY_SEEDS,
};
use sas_core::synth::{bayes_oracle, generate, random_guesses};
use sas_core::{Dataset, ExperimentResult, Graph, PipelineError, PipelineSpec, SynthConfig, SynthKind};
use serde::{Deserialize, Serialize};

/// Milliseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct InstantClock(Instant);

impl InstantClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Default for InstantClock {
    fn default() -> Self {
        Self::start()
    }
}

impl Clock for InstantClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

/// Every spec under every seed, run in parallel and merged in `(spec, seed)` order.
pub fn parallel_sweep(
    specs: &[PipelineSpec],
    dataset: &Dataset,
    graph: &Graph,
    seeds: &[u64],
) -> Result<(SweepTable, Vec<StageTimings>), PipelineError> {
    if specs.is_empty() || seeds.is_empty() {
        return Err(PipelineError::InvalidSpec("sweep needs at least one spec and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..specs.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let runs: Vec<(SweepCell, StageTimings)> = jobs
        .par_iter()
        .map(|&(spec_index, seed)| {
            let run = run_pipeline_detailed(&specs[spec_index].with_seed(seed), dataset, graph, &InstantClock::start())?;
            let timing = run.result.timing;
            Ok((
                SweepCell {
                    spec_index,
                    seed,
                    result: run.result,
                },
                timing,
            ))
        })
        .collect::<Result<_, PipelineError>>()?;
    let (cells, timings): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok((SweepTable::from_cells(specs, cells), timings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub dataset: SynthKind,
    pub pipeline: String,
    pub seed: u64,
    pub result: ExperimentResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub pipeline: String,
    pub model: String,
    /// One entry per study, in study order.
    pub test_accuracy: Vec<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub datasets: Vec<SynthKind>,
    pub seeds: Vec<u64>,
    pub rows: Vec<StudyRow>,
    /// Uniform random guessing on the test split.
    pub random: Vec<MeanStd>,
    /// Bayes-optimal feature-only rule on the test split.
    pub optimal: Vec<MeanStd>,
    pub cells: Vec<StudyCell>,
}

impl StudyTable {
    /// Test-accuracy mean of `pipeline` in the study for `kind`.
    pub fn mean(&self, kind: SynthKind, pipeline: &str) -> Option<f64> {
        let col = self.datasets.iter().position(|&k| k == kind)?;
        let row = self.rows.iter().find(|r| r.pipeline == pipeline)?;
        Some(row.test_accuracy[col].mean)
    }
}

pub fn default_seeds() -> Vec<u64> {
    STUDY_SEEDS.to_vec()
}

fn baselines(config: &SynthConfig) -> Result<(f64, f64), PipelineError> {
    let ds = generate(config)?;
    let truth: Vec<Option<usize>> = ds.labels.iter().copied().map(Some).collect();
    let random = accuracy(&random_guesses(ds.labels.len(), config.seed), &truth, &ds.test)?;
    let optimal = accuracy(&bayes_oracle(config.kind, &ds.features), &truth, &ds.test)?;
    Ok((random, optimal))
}

/// Each pipeline of `pipelines` under each study and seed, in parallel.
pub fn run_ordering_study(
    studies: &[OrderingStudy],
    pipelines: &[(&str, &str)],
    seeds: &[u64],
) -> Result<StudyTable, PipelineError> {
    if studies.is_empty() || pipelines.is_empty() || seeds.is_empty() {
        return Err(PipelineError::InvalidSpec("ordering study needs studies, pipelines and seeds".into()));
    }
    let mut jobs = Vec::new();
    for (s, _) in studies.iter().enumerate() {
        for (p, _) in pipelines.iter().enumerate() {
            for &seed in seeds {
                jobs.push((s, p, seed));
            }
        }
    }
    let cells: Vec<StudyCell> = jobs
        .par_iter()
        .map(|&(s, p, seed)| {
            let result = studies[s].run_cell(pipelines[p].0, seed)?;
            Ok(StudyCell {
                dataset: studies[s].synth.kind,
                pipeline: result.pipeline.clone(),
                seed,
                result,
            })
        })
        .collect::<Result<_, PipelineError>>()?;

    let per_seed: Vec<Vec<(f64, f64)>> = studies
        .iter()
        .map(|study| {
            seeds
                .par_iter()
                .map(|&seed| baselines(&SynthConfig { seed, ..study.synth }))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let cells_per_study = pipelines.len() * seeds.len();
    let rows = pipelines
        .iter()
        .enumerate()
        .map(|(p, &(steps, model))| StudyRow {
            pipeline: steps.to_string(),
            model: model.to_string(),
            test_accuracy: (0..studies.len())
                .map(|s| {
                    let start = s * cells_per_study + p * seeds.len();
                    let accs: Vec<f64> = cells[start..start + seeds.len()]
                        .iter()
                        .filter_map(|c| c.result.metrics.test.map(|m| m.accuracy))
                        .collect();
                    MeanStd::of(&accs)
                })
                .collect(),
        })
        .collect();
    let column = |pick: fn(&(f64, f64)) -> f64| -> Vec<MeanStd> {
        per_seed
            .iter()
            .map(|v| MeanStd::of(&v.iter().map(pick).collect::<Vec<_>>()))
            .collect()
    };
    Ok(StudyTable {
        datasets: studies.iter().map(|s| s.synth.kind).collect(),
        seeds: seeds.to_vec(),
        rows,
        random: column(|b| b.0),
        optimal: column(|b| b.1),
        cells,
    })
}
