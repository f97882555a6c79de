//! The `gdc` command line.
//!
//! Exit codes: 0 when the result file was written, 1 for invalid arguments
//! or inputs, 2 when the pipeline fails at run time. Messages go to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::calibrate::{CovMode, GdcConfig};
use crate::classify::TrainRecipe;
use crate::dataset::{load_features, write_features, FeatureDataset, FileFormat, Split};
use crate::episodes::{evaluate, sample_task, task_seed, with_workers, EpisodeSpec, EvalSpec, Pipeline, QueryLabels};
use crate::sampling::augment_task;
use crate::search::{confirm_top, tune, MetricKind, SearchSpace, SpacePreset, TrialSpec, TrialStatus, TuneSettings};
use crate::stats::{compute_split_stats, save_stats_cache, DistanceMetric};
use crate::synth::{generate, CovarianceFamily, SynthSpec};
use crate::transforms::apply_transform;

pub const WORKERS_ENV: &str = "GDC_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "gdc", version, about = "Generalized distribution calibration for few-shot classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a config on N-way K-shot tasks and write a JSON result.
    Evaluate(EvaluateArgs),
    /// Random search with median pruning, then confirmation on the novel split.
    Tune(TuneArgs),
    /// Generate a synthetic Gaussian dataset with known class distributions.
    GenSynth(GenSynthArgs),
    /// Write per-class statistics of one split in transformed space.
    Stats(StatsArgs),
    /// Write the augmented support set of one task.
    DumpSamples(DumpSamplesArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Feature file (binary, or CSV when the extension is .csv).
    #[arg(long)]
    pub features: PathBuf,
    /// Split manifest JSON.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Override the format guessed from the extension.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Binary,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Base,
    Validation,
    Novel,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Base => Split::Base,
            SplitArg::Validation => Split::Validation,
            SplitArg::Novel => Split::Novel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    SquaredEuclidean,
    MahalanobisLog,
    SquaredDelta,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CovModeArg {
    WeightedAverage,
    IndependentSum,
}

#[derive(Debug, Args)]
pub struct EpisodeArgs {
    #[arg(long, default_value_t = 5)]
    pub way: usize,
    #[arg(long, default_value_t = 1)]
    pub shot: usize,
    /// Query points per class.
    #[arg(long, default_value_t = 15)]
    pub queries: usize,
}

impl EpisodeArgs {
    fn spec(&self) -> EpisodeSpec {
        EpisodeSpec { way: self.way, shot: self.shot, queries: self.queries }
    }
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub m: f64,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 3000.0)]
    pub alpha1: f64,
    /// Absolute alpha2.
    #[arg(long, conflicts_with = "alpha2_mult")]
    pub alpha2: Option<f64>,
    /// alpha2 as a multiple of alpha1 (default 10).
    #[arg(long)]
    pub alpha2_mult: Option<f64>,
    /// Samples drawn per support point.
    #[arg(long = "n", default_value_t = 750)]
    pub n_samples: usize,
    #[arg(long, value_enum, default_value = "squared-euclidean")]
    pub metric: MetricArg,
    /// δ of the squared-delta metric.
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, value_enum, default_value = "weighted-average")]
    pub cov_mode: CovModeArg,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.08)]
    pub learning_rate: f64,
}

impl ConfigArgs {
    fn config(&self, seed: u64) -> GdcConfig {
        let alpha2 = match (self.alpha2, self.alpha2_mult) {
            (Some(a), _) => a,
            (None, Some(mult)) => mult * self.alpha1,
            (None, None) => 10.0 * self.alpha1,
        };
        GdcConfig {
            beta: self.beta,
            m: self.m,
            k: self.k,
            alpha1: self.alpha1,
            alpha2,
            n_samples: self.n_samples,
            metric: metric(self.metric, self.delta),
            cov_mode: match self.cov_mode {
                CovModeArg::WeightedAverage => CovMode::WeightedAverage,
                CovModeArg::IndependentSum => CovMode::IndependentSum,
            },
            seed,
            recipe: TrainRecipe {
                batch_size: self.batch_size,
                epochs: self.epochs,
                learning_rate: self.learning_rate,
                shuffle_seed: seed,
            },
        }
    }
}

fn metric(m: MetricArg, delta: f64) -> DistanceMetric {
    match m {
        MetricArg::SquaredEuclidean => DistanceMetric::SquaredEuclidean,
        MetricArg::MahalanobisLog => DistanceMetric::MahalanobisLog,
        MetricArg::SquaredDelta => DistanceMetric::SquaredDelta { delta },
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "novel")]
    pub split: SplitArg,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long, default_value_t = 600)]
    pub tasks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Worker threads; GDC_WORKERS takes precedence.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Result JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Include every task accuracy in the result.
    #[arg(long)]
    pub per_task: bool,
    /// Permute query labels within each task (chance-level control).
    #[arg(long)]
    pub shuffle_query_labels: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PresetArg {
    MiniImagenet,
    StanfordDogs,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long, value_enum, default_value = "mini-imagenet")]
    pub preset: PresetArg,
    /// Search space JSON; replaces the preset.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Metrics searched over (preset only).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub metrics: Vec<MetricArg>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub tasks_per_trial: usize,
    #[arg(long, default_value_t = 100)]
    pub checkpoint: usize,
    /// Completed trials confirmed on the novel split; 0 skips confirmation.
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    #[arg(long, default_value_t = 5000)]
    pub novel_tasks: usize,
    /// Append-only trial log; an existing log is resumed.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "weighted-average")]
    pub cov_mode: CovModeArg,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FamilyArg {
    Spherical,
    Diagonal,
    RandomSpd,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Directory receiving features.gdcf (or .csv), manifest.json and ground_truth.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub num_base: usize,
    #[arg(long, default_value_t = 5)]
    pub num_validation: usize,
    #[arg(long, default_value_t = 5)]
    pub num_novel: usize,
    #[arg(long, default_value_t = 200)]
    pub points_per_class: usize,
    /// Distance of held-out means from their parent, in parent standard deviations.
    #[arg(long, default_value_t = 0.5)]
    pub offset: f64,
    #[arg(long, value_enum, default_value = "spherical")]
    pub family: FamilyArg,
    #[arg(long, default_value_t = 0.15)]
    pub mean_spread: f64,
    #[arg(long, default_value_t = 0.2)]
    pub class_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "base")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub beta: f64,
    /// Stats cache path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DumpSamplesArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "novel")]
    pub split: SplitArg,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Which task of the `--seed` sequence to dump.
    #[arg(long, default_value_t = 0)]
    pub task: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output feature file; each record carries an origin byte (0 support, 1 sampled).
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Tune(a) => cmd_tune(&a),
        Command::GenSynth(a) => cmd_gen_synth(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::DumpSamples(a) => cmd_dump_samples(&a),
    }
}

/// `GDC_WORKERS` when set, otherwise the flag.
fn resolve_workers(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| invalid(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        _ => flag,
    };
    if workers == Some(0) {
        return Err(invalid("worker count must be positive"));
    }
    Ok(workers)
}

fn load(data: &DataArgs) -> Result<FeatureDataset, CliError> {
    for p in [&data.features, &data.manifest] {
        if !p.exists() {
            return Err(invalid(format!("{} does not exist", p.display())));
        }
    }
    let format = match data.format {
        Some(FormatArg::Binary) => FileFormat::Binary,
        Some(FormatArg::Csv) => FileFormat::Csv,
        None => FileFormat::from_path(&data.features),
    };
    load_features(&data.features, &data.manifest, format).map_err(invalid)
}

/// Checks that `split` can supply `episode`-shaped tasks.
fn check_split(dataset: &FeatureDataset, split: Split, episode: EpisodeSpec) -> Result<(), CliError> {
    episode.validate().map_err(invalid)?;
    let part = dataset.partition(split);
    if part.num_classes() < episode.way {
        return Err(invalid(format!(
            "{split} split has {} classes, {}-way tasks need {}",
            part.num_classes(),
            episode.way,
            episode.way
        )));
    }
    let needed = episode.shot + episode.queries;
    if let Some((c, rows)) = part.iter().find(|(_, rows)| rows.len() < needed) {
        return Err(invalid(format!("class {c} has {} points, tasks need {needed}", rows.len())));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| runtime(format!("writing {}: {e}", path.display())))
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let workers = resolve_workers(a.workers)?;
    let dataset = load(&a.data)?;
    let split: Split = a.split.into();
    let episode = a.episode.spec();
    if a.tasks == 0 {
        return Err(invalid("--tasks must be at least 1"));
    }
    check_split(&dataset, split, episode)?;
    let config = a.config.config(a.seed);
    let num_base = dataset.partition(Split::Base).num_classes();
    config.validate(num_base).map_err(invalid)?;

    let spec = EvalSpec {
        episode,
        num_tasks: a.tasks,
        base_seed: a.seed,
        query_labels: if a.shuffle_query_labels { QueryLabels::Shuffled } else { QueryLabels::Intact },
    };
    let result = with_workers(workers, || {
        let pipeline = Pipeline::prepare(&dataset, config.beta)?;
        evaluate(&dataset, &pipeline, split, &config, &spec)
    })
    .map_err(runtime)?
    .map_err(runtime)?;

    let mut out = json!({
        "mean": result.mean,
        "ci95": result.ci95,
        "num_tasks": a.tasks,
        "split": split,
        "episode": episode,
        "base_seed": a.seed,
        "query_labels": spec.query_labels,
        "config": config,
    });
    if a.per_task {
        out["per_task"] = json!(result.per_task_accuracy);
    }
    write_json(&a.out, &out)?;
    println!(
        "{split} {}-way {}-shot: {:.2} ± {:.2}% over {} tasks",
        episode.way,
        episode.shot,
        100.0 * result.mean,
        100.0 * result.ci95,
        a.tasks
    );
    Ok(())
}

pub fn cmd_tune(a: &TuneArgs) -> Result<(), CliError> {
    let workers = resolve_workers(a.workers)?;
    let dataset = load(&a.data)?;
    let episode = a.episode.spec();
    check_split(&dataset, Split::Validation, episode)?;
    if a.top > 0 {
        check_split(&dataset, Split::Novel, episode)?;
    }
    let num_base = dataset.partition(Split::Base).num_classes();
    let space = match &a.space {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<SearchSpace>(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => {
            let preset = match a.preset {
                PresetArg::MiniImagenet => SpacePreset::MiniImagenet,
                PresetArg::StanfordDogs => SpacePreset::StanfordDogs,
            };
            let mut space = SearchSpace::preset(preset, num_base);
            if !a.metrics.is_empty() {
                space.metrics = a
                    .metrics
                    .iter()
                    .map(|m| match m {
                        MetricArg::SquaredEuclidean => MetricKind::SquaredEuclidean,
                        MetricArg::MahalanobisLog => MetricKind::MahalanobisLog,
                        MetricArg::SquaredDelta => MetricKind::SquaredDelta,
                    })
                    .collect();
            }
            space
        }
    };
    space.validate().map_err(invalid)?;
    if space.k.values().iter().any(|&k| k as usize > num_base) {
        return Err(invalid(format!("search space allows k above the {num_base} base classes")));
    }
    let template = GdcConfig {
        cov_mode: match a.cov_mode {
            CovModeArg::WeightedAverage => CovMode::WeightedAverage,
            CovModeArg::IndependentSum => CovMode::IndependentSum,
        },
        seed: a.seed,
        recipe: TrainRecipe { shuffle_seed: a.seed, ..TrainRecipe::default() },
        ..GdcConfig::default()
    };
    let settings = TuneSettings {
        space,
        template,
        trials: a.trials,
        master_seed: a.seed,
        trial_spec: TrialSpec {
            episode,
            tasks_per_trial: a.tasks_per_trial,
            checkpoint: a.checkpoint,
            validation_seed: a.seed,
        },
    };
    settings.trial_spec.validate().map_err(invalid)?;
    if a.top > a.trials {
        return Err(invalid(format!("--top {} exceeds --trials {}", a.top, a.trials)));
    }

    let (records, confirmed) = with_workers(workers, || -> Result<_, CliError> {
        let records = tune(&dataset, &settings, a.log.as_deref()).map_err(runtime)?;
        let confirmed = if a.top > 0 {
            confirm_top(&dataset, &records, a.top, a.novel_tasks, episode, a.seed).map_err(runtime)?
        } else {
            Vec::new()
        };
        Ok((records, confirmed))
    })
    .map_err(runtime)??;

    let count = |s: TrialStatus| records.iter().filter(|r| r.status == s).count();
    let out = json!({
        "trials": records.len(),
        "completed": count(TrialStatus::Complete),
        "pruned": count(TrialStatus::Pruned),
        "validation_tasks": records.iter().map(|r| r.accuracies.len()).sum::<usize>(),
        "confirmed": confirmed,
    });
    write_json(&a.out, &out)?;
    println!(
        "{} trials: {} completed, {} pruned",
        records.len(),
        count(TrialStatus::Complete),
        count(TrialStatus::Pruned)
    );
    for (rank, c) in confirmed.iter().enumerate() {
        println!(
            "#{} trial {}: novel {:.2} ± {:.2}% (validation {:.2}%)",
            rank + 1,
            c.trial,
            100.0 * c.novel_mean,
            100.0 * c.novel_ci95,
            100.0 * c.validation_mean
        );
    }
    Ok(())
}

pub fn cmd_gen_synth(a: &GenSynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        dim: a.dim,
        num_base: a.num_base,
        num_validation: a.num_validation,
        num_novel: a.num_novel,
        points_per_class: a.points_per_class,
        novel_offset_scale: a.offset,
        covariance_family: match a.family {
            FamilyArg::Spherical => CovarianceFamily::Spherical,
            FamilyArg::Diagonal => CovarianceFamily::Diagonal,
            FamilyArg::RandomSpd => CovarianceFamily::RandomSpd,
        },
        seed: a.seed,
        mean_spread: a.mean_spread,
        class_scale: a.class_scale,
    };
    spec.validate().map_err(invalid)?;
    let world = generate(&spec).map_err(runtime)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| runtime(format!("{}: {e}", a.out_dir.display())))?;
    let (name, format) = match a.format {
        FormatArg::Binary => ("features.gdcf", FileFormat::Binary),
        FormatArg::Csv => ("features.csv", FileFormat::Csv),
    };
    let features = a.out_dir.join(name);
    write_features(&world.dataset, &features, &a.out_dir.join("manifest.json"), format).map_err(runtime)?;
    write_json(&a.out_dir.join("ground_truth.json"), &world.ground_truth)?;
    println!(
        "wrote {} points of dimension {} in {} classes to {}",
        world.dataset.len(),
        spec.dim,
        spec.num_classes(),
        a.out_dir.display()
    );
    Ok(())
}

pub fn cmd_stats(a: &StatsArgs) -> Result<(), CliError> {
    let dataset = load(&a.data)?;
    if !a.beta.is_finite() {
        return Err(invalid("--beta must be finite"));
    }
    let split: Split = a.split.into();
    let pipeline = Pipeline::prepare(&dataset, a.beta).map_err(runtime)?;
    let stats = if split == Split::Base {
        pipeline.base.classes().to_vec()
    } else {
        let transformed = apply_transform(&dataset, pipeline.transform).map_err(runtime)?;
        compute_split_stats(&transformed, split)
    };
    save_stats_cache(&a.out, &stats).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "{} {split} classes, dimension {}, transform {:?} with beta {}",
        stats.len(),
        dataset.dim(),
        pipeline.transform.kind,
        pipeline.transform.beta
    );
    Ok(())
}

pub fn cmd_dump_samples(a: &DumpSamplesArgs) -> Result<(), CliError> {
    let dataset = load(&a.data)?;
    let split: Split = a.split.into();
    let episode = a.episode.spec();
    check_split(&dataset, split, episode)?;
    let config = a.config.config(a.seed);
    let num_base = dataset.partition(Split::Base).num_classes();
    config.validate(num_base).map_err(invalid)?;

    let pipeline = Pipeline::prepare(&dataset, config.beta).map_err(runtime)?;
    let ts = task_seed(a.seed, a.task);
    let task = sample_task(&dataset, &dataset.partition(split), episode, ts).map_err(runtime)?;
    let support = pipeline.transform_points(&task.support).map_err(runtime)?;
    let set = augment_task(&support, &pipeline.base, &config, ts).map_err(runtime)?;
    set.write(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    println!("wrote {} points ({} support) to {}", set.len(), support.len(), a.out.display());
    Ok(())
}
