//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sas_core::dataset::SplitName;
use sas_core::pipeline::{
    evaluate_model, k_sweep, parse_steps, preset, run_inductive_detailed, run_pipeline_detailed, OrderingStudy,
    SplitReport, ORDERING_PIPELINES,
};
use sas_core::propagation::{DEFAULT_ALPHA, DEFAULT_MAX_K, DEFAULT_PATIENCE};
use sas_core::synth::generate;
use sas_core::{
    Dataset, KSelection, MlpConfig, PipelineError, PipelineSpec, Preset, PropagationMode, SynthConfig, SynthKind,
    Task, TrainConfig,
};
use serde::Serialize;
use thiserror::Error;

use crate::artifacts::{
    load_checkpoint, read_experiment, save_checkpoint, write_csv, ArtifactError, CellRow, Checkpoint, ResultFile,
    StudyManifest, EXPERIMENT_VERSION,
};
use crate::dataio::{export_dataset, export_with_ids, load_dataset, write_json, DataError, LoadedDataset};
use crate::linqs;
use crate::runner::{parallel_sweep, run_ordering_study, InstantClock, StudyTable};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "SAS_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "sas", version, about = "Train-then-propagate node classification experiments")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV, default_value = "sas-out")]
    pub out: PathBuf,
    /// Leave wall-clock timings out of result files.
    #[arg(long, global = true)]
    pub no_timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and export it.
    Synth(SynthArgs),
    /// Train a pipeline on a dataset and evaluate it.
    Train(TrainArgs),
    /// Evaluate a saved model on a dataset.
    Eval(EvalArgs),
    /// Accuracy against the number of propagation steps.
    SweepK(SweepKArgs),
    /// Six step orderings on the two synthetic datasets.
    Table5(Table5Args),
    /// Train on one graph, evaluate on another.
    Inductive(InductiveArgs),
    /// Run every pipeline and seed of an experiment manifest.
    Sweep(SweepArgs),
    /// Convert a `.content`/`.cites` citation network into a dataset directory.
    ImportLinqs(ImportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Xor,
    Gaussian,
}

impl From<KindArg> for SynthKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Xor => SynthKind::Xor,
            KindArg::Gaussian => SynthKind::Gaussian,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 100)]
    pub n_train: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    /// Homophily ratio of the generated graph.
    #[arg(long, default_value_t = 0.8)]
    pub rho: f64,
    /// Mean degree of the intra-class random graphs.
    #[arg(long, default_value_t = 3.0)]
    pub intra_degree: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    NoResidual,
    Residual,
}

/// Pipeline shape and hyperparameters shared by the training commands.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Named pipeline: sas-a, sas-b, sgc, gfnn or mlp.
    #[arg(long, conflicts_with = "steps")]
    pub preset: Option<String>,
    /// Explicit step word such as T-T-A-A.
    #[arg(long)]
    pub steps: Option<String>,
    /// MLP depth for presets.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Propagation steps: a count, or `auto` to choose on held-out labels.
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_K)]
    pub max_k: usize,
    #[arg(long, default_value_t = DEFAULT_PATIENCE)]
    pub patience: usize,
    /// Propagation mode for `--steps`; presets fix their own.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Mini-batch size; 0 trains full-batch.
    #[arg(long, default_value_t = 0)]
    pub batch_size: usize,
    /// Stop after this many epochs without a lower validation loss.
    #[arg(long)]
    pub early_stop: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

enum KArg {
    Auto,
    Fixed(usize),
}

fn parse_k(text: &str) -> Result<KArg, CliError> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(KArg::Auto);
    }
    match text.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(KArg::Fixed(k)),
        _ => Err(CliError::Input(format!("--k expects `auto` or a positive count, got `{text}`"))),
    }
}

impl PipelineArgs {
    pub fn spec(&self) -> Result<PipelineSpec, CliError> {
        let mlp = MlpConfig {
            num_layers: self.layers,
            hidden_dim: self.hidden,
            dropout: self.dropout,
            weight_decay: self.weight_decay,
        };
        let train = TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            patience: self.early_stop,
            ..TrainConfig::default()
        };
        let k = self.k.as_deref().map(parse_k).transpose()?;
        let spec = match (&self.preset, &self.steps) {
            (Some(name), None) => {
                let which: Preset = name.parse()?;
                let count = match k {
                    Some(KArg::Fixed(k)) => k,
                    _ => 2,
                };
                let mut spec = preset(which, self.layers, count, mlp, train)?;
                if let PropagationMode::Residual { .. } = spec.propagation.mode {
                    spec.propagation.mode = PropagationMode::Residual { alpha: self.alpha };
                }
                if matches!(k, Some(KArg::Auto)) {
                    spec = spec.with_auto_k(self.max_k, self.patience)?;
                }
                spec
            }
            (None, Some(steps)) => {
                let mode = match self.mode {
                    Some(ModeArg::Residual) => PropagationMode::Residual { alpha: self.alpha },
                    _ => PropagationMode::NoResidual,
                };
                let spec = PipelineSpec::new(parse_steps(steps)?, mlp, train, mode, Task::Transductive)?;
                match k {
                    None => spec,
                    Some(KArg::Auto) => spec.with_auto_k(self.max_k, self.patience)?,
                    Some(KArg::Fixed(_)) => {
                        return Err(CliError::Input(
                            "--k with --steps: write the aggregation steps out or use --k auto".into(),
                        ))
                    }
                }
            }
            _ => return Err(CliError::Input("give exactly one of --preset or --steps".into())),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepKArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value_t = DEFAULT_MAX_K)]
    pub k_max: usize,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Val => SplitName::Val,
            SplitArg::Test => SplitName::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct Table5Args {
    /// Number of seeds.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1)]
    pub first_seed: u64,
    /// Override the study's MLP width.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Override the intra-class degree of the synthetic graphs.
    #[arg(long)]
    pub intra_degree: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InductiveArgs {
    /// Dataset holding the training labels.
    #[arg(long)]
    pub train_data: PathBuf,
    /// Separate graph to evaluate on; must not carry a train split.
    #[arg(long)]
    pub test_data: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment manifest.
    #[arg(long)]
    pub experiment: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub cites: PathBuf,
    /// Seed of the random train/val/test split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let out = cli.out.as_path();
    fs::create_dir_all(out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
    let ctx = Ctx {
        out,
        timing: !cli.no_timing,
    };
    match &cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::SweepK(a) => cmd_sweep_k(&ctx, a),
        Command::Table5(a) => cmd_table5(&ctx, a),
        Command::Inductive(a) => cmd_inductive(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::ImportLinqs(a) => cmd_import(&ctx, a),
    }
}

struct Ctx<'a> {
    out: &'a Path,
    timing: bool,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn cmd_synth(ctx: &Ctx<'_>, a: &SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        n_train: a.n_train,
        n_test: a.n_test,
        homophily_ratio: a.rho,
        intra_avg_degree: a.intra_degree,
        ..SynthConfig::new(a.kind.into(), a.seed)
    };
    let ds = generate(&config).map_err(PipelineError::from)?;
    let manifest = export_dataset(&ds.graph, &Dataset::from(&ds), ctx.out)?;
    println!("{}", manifest.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunPayload<'a> {
    dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_dataset: Option<String>,
    result: &'a sas_core::ExperimentResult,
}

fn load(path: &Path) -> Result<LoadedDataset, CliError> {
    Ok(load_dataset(path)?)
}

fn summary(result: &sas_core::ExperimentResult) -> String {
    let acc = |m: Option<sas_core::pipeline::SplitMetrics>| m.map_or("-".to_string(), |m| format!("{:.4}", m.accuracy));
    let k = result.chosen_k.map_or(String::new(), |k| format!(" K={k}"));
    format!(
        "{}{}: train {} val {} test {}",
        result.pipeline,
        k,
        acc(result.metrics.train),
        acc(result.metrics.val),
        acc(result.metrics.test)
    )
}

fn write_run(
    ctx: &Ctx<'_>,
    payload: RunPayload<'_>,
    checkpoint: Option<Checkpoint>,
) -> Result<(), CliError> {
    let result = payload.result;
    let timing = ctx.timing.then_some(result.timing);
    ResultFile::new(&payload, timing).write(&ctx.path("result.json"))?;
    write_csv(&ctx.path("result.csv"), &[CellRow::new(&payload.dataset, result, timing.as_ref())])?;
    if let Some(checkpoint) = checkpoint {
        save_checkpoint(&ctx.path("model.json"), &checkpoint)?;
    }
    println!("{}", summary(result));
    Ok(())
}

fn cmd_train(ctx: &Ctx<'_>, a: &TrainArgs) -> Result<(), CliError> {
    let spec = a.pipeline.spec()?;
    let data = load(&a.data)?;
    let run = run_pipeline_detailed(&spec, &data.dataset, &data.graph, &InstantClock::start())?;
    let post_k = run.result.chosen_k.unwrap_or(0);
    let checkpoint = Checkpoint::new(spec, post_k, run.model.clone());
    let payload = RunPayload {
        dataset: a.data.display().to_string(),
        test_dataset: None,
        result: &run.result,
    };
    write_run(ctx, payload, Some(checkpoint))
}

fn cmd_inductive(ctx: &Ctx<'_>, a: &InductiveArgs) -> Result<(), CliError> {
    let mut spec = a.pipeline.spec()?;
    spec.task = Task::Inductive;
    let train = load(&a.train_data)?;
    let test = load(&a.test_data)?;
    let result = run_inductive_detailed(
        &spec,
        &train.dataset,
        &train.graph,
        &test.dataset,
        &test.graph,
        &InstantClock::start(),
    )?;
    let payload = RunPayload {
        dataset: a.train_data.display().to_string(),
        test_dataset: Some(a.test_data.display().to_string()),
        result: &result,
    };
    write_run(ctx, payload, None)
}

#[derive(Debug, Serialize)]
struct EvalPayload<'a> {
    dataset: String,
    model: String,
    pipeline: String,
    post_k: usize,
    metrics: &'a SplitReport,
}

fn cmd_eval(ctx: &Ctx<'_>, a: &EvalArgs) -> Result<(), CliError> {
    let checkpoint = load_checkpoint(&a.model)?;
    let data = load(&a.data)?;
    let (metrics, _) = evaluate_model(
        &checkpoint.pipeline,
        &checkpoint.model,
        checkpoint.post_k,
        &data.dataset,
        &data.graph,
    )?;
    let payload = EvalPayload {
        dataset: a.data.display().to_string(),
        model: a.model.display().to_string(),
        pipeline: checkpoint.pipeline.steps_string(),
        post_k: checkpoint.post_k,
        metrics: &metrics,
    };
    ResultFile::new(&payload, None::<()>).write(&ctx.path("eval.json"))?;
    for split in [SplitName::Train, SplitName::Val, SplitName::Test] {
        if let Some(m) = metrics.get(split) {
            println!("{split}: accuracy {:.4} micro-F1 {:.4} ({} nodes)", m.accuracy, m.micro_f1, m.count);
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct KRow {
    seed: u64,
    k: usize,
    accuracy: f64,
}

fn cmd_sweep_k(ctx: &Ctx<'_>, a: &SweepKArgs) -> Result<(), CliError> {
    if a.k_max == 0 {
        return Err(CliError::Input("--k-max must be at least 1".into()));
    }
    if a.seeds.is_empty() {
        return Err(CliError::Input("--seeds needs at least one seed".into()));
    }
    let spec = a.pipeline.spec()?;
    if spec.layout()?.post_aggregations == 0 {
        return Err(CliError::Input("sweep-k needs a pipeline with aggregation steps after the transforms".into()));
    }
    let data = load(&a.data)?;
    let mut rows = Vec::new();
    for &seed in &a.seeds {
        let trace = k_sweep(&spec.with_seed(seed), &data.dataset, &data.graph, a.k_max, a.split.into())?;
        rows.extend(trace.into_iter().enumerate().map(|(k, accuracy)| KRow { seed, k, accuracy }));
    }
    write_csv(&ctx.path("sweep_k.csv"), &rows)?;
    for row in &rows {
        println!("seed {} k {:>2} accuracy {:.4}", row.seed, row.k, row.accuracy);
    }
    Ok(())
}

fn study_for(kind: SynthKind, a: &Table5Args) -> OrderingStudy {
    let mut study = OrderingStudy::new(kind);
    if let Some(h) = a.hidden {
        study.mlp.hidden_dim = h;
    }
    if let Some(e) = a.epochs {
        study.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        study.train.learning_rate = lr;
    }
    if let Some(wd) = a.weight_decay {
        study.mlp.weight_decay = wd;
    }
    if let Some(d) = a.intra_degree {
        study.synth.intra_avg_degree = d;
    }
    study
}

/// Mean and std per dataset column, with the two baseline rows at the bottom.
fn grid_records(table: &StudyTable) -> Vec<Vec<String>> {
    let mut header = vec!["pipeline".to_string(), "model".to_string()];
    for kind in &table.datasets {
        header.push(format!("{}_mean", kind.name()));
        header.push(format!("{}_std", kind.name()));
    }
    let mut records = vec![header];
    let cells = |values: &[sas_core::pipeline::MeanStd]| -> Vec<String> {
        values
            .iter()
            .flat_map(|m| [format!("{:.4}", m.mean), format!("{:.4}", m.std)])
            .collect()
    };
    for row in &table.rows {
        let mut r = vec![row.pipeline.clone(), row.model.clone()];
        r.extend(cells(&row.test_accuracy));
        records.push(r);
    }
    for (name, values) in [("Random", &table.random), ("Optimal", &table.optimal)] {
        let mut r = vec!["-".to_string(), name.to_string()];
        r.extend(cells(values));
        records.push(r);
    }
    records
}

fn write_records(path: &Path, records: &[Vec<String>]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in records {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_table5(ctx: &Ctx<'_>, a: &Table5Args) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(CliError::Input("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (a.first_seed..a.first_seed + a.seeds).collect();
    let studies = [study_for(SynthKind::Xor, a), study_for(SynthKind::Gaussian, a)];
    let clock = InstantClock::start();
    let table = run_ordering_study(&studies, &ORDERING_PIPELINES, &seeds)?;
    let elapsed = sas_core::pipeline::Clock::now_ms(&clock);

    write_json(
        &ctx.path("experiment.json"),
        &StudyManifest {
            format_version: EXPERIMENT_VERSION,
            studies: studies.to_vec(),
            pipelines: ORDERING_PIPELINES.iter().map(|p| p.0.to_string()).collect(),
            seeds: seeds.clone(),
        },
    )?;
    let records = grid_records(&table);
    write_records(&ctx.path("table5.csv"), &records)?;
    let rows: Vec<CellRow> = table
        .cells
        .iter()
        .map(|c| CellRow::new(c.dataset.name(), &c.result, None))
        .collect();
    write_csv(&ctx.path("table5_cells.csv"), &rows)?;
    let timing = ctx.timing.then_some(serde_json::json!({ "total_ms": elapsed }));
    ResultFile::new(&table, timing).write(&ctx.path("table5.json"))?;

    for r in &records {
        println!("{}", r.join("\t"));
    }
    Ok(())
}

fn cmd_sweep(ctx: &Ctx<'_>, a: &SweepArgs) -> Result<(), CliError> {
    let experiment = read_experiment(&a.experiment)?;
    for spec in &experiment.pipelines {
        spec.validate()?;
    }
    let base = a.experiment.parent().unwrap_or_else(|| Path::new("."));
    let data_path = base.join(&experiment.dataset);
    let data = load(&data_path)?;
    let (table, timings) = parallel_sweep(&experiment.pipelines, &data.dataset, &data.graph, &experiment.seeds)?;
    let rows: Vec<CellRow> = table
        .cells
        .iter()
        .zip(&timings)
        .map(|(c, t)| CellRow::new(&experiment.dataset, &c.result, ctx.timing.then_some(t)))
        .collect();
    write_csv(&ctx.path("sweep.csv"), &rows)?;
    ResultFile::new(&table, ctx.timing.then_some(&timings)).write(&ctx.path("sweep.json"))?;
    for row in &table.rows {
        println!(
            "{}\t{:.4} ± {:.4} ({} runs)",
            row.pipeline, row.test_accuracy.mean, row.test_accuracy.std, row.runs
        );
    }
    Ok(())
}

fn cmd_import(ctx: &Ctx<'_>, a: &ImportArgs) -> Result<(), CliError> {
    let imported = linqs::import(&a.content, &a.cites)?;
    let splits = linqs::fractional_splits(&imported.dataset, linqs::PLANETOID_FRACTIONS, a.split_seed);
    let dataset = imported
        .dataset
        .with_splits(splits)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let manifest = export_with_ids(&imported.graph, &dataset, Some(&imported.node_ids), ctx.out)?;
    write_json(&ctx.path("classes.json"), &imported.class_names)?;
    eprintln!(
        "{} nodes, {} edges, {} classes, {} dangling citations",
        dataset.num_nodes(),
        imported.graph.num_edges(),
        dataset.num_classes(),
        imported.dangling_citations
    );
    println!("{}", manifest.display());
    Ok(())
}

/// The propagation count of a spec with a fixed `K`.
pub fn fixed_k(spec: &PipelineSpec) -> Option<usize> {
    match spec.propagation.k {
        KSelection::Fixed { k } => Some(k),
        KSelection::Auto { .. } => None,
    }
}
