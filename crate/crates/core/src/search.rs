//! Random search over discretized hyperparameter grids with median pruning.
//!
//! Each trial draws a config uniformly from the grids and evaluates it on a
//! fixed sequence of validation tasks. After the checkpoint (100 tasks by
//! default) the running mean is compared with the median checkpoint mean of
//! every earlier finished trial. Trials below that median are pruned.
//! Survivors run to the end (200 tasks) and the best few are re-evaluated
//! on the novel split.
//!
//! Trials run one after another; tasks inside a trial run in parallel. The
//! log is append-only JSON lines, one [`TrialRecord`] per finished trial, so
//! an interrupted search resumes by replaying it.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::GdcConfig;
use crate::dataset::{FeatureDataset, Split};
use crate::episodes::{
    evaluate, mean_ci95, task_accuracies, EpisodeError, EpisodeResult, EpisodeSpec, EvalSpec, Pipeline,
};
use crate::rng;
use crate::stats::DistanceMetric;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid search settings: {0}")]
    InvalidSettings(String),
    #[error("need {needed} completed trials, have {available}")]
    NotEnoughCompleted { needed: usize, available: usize },
    #[error("trial log {path}: {message}")]
    Log { path: PathBuf, message: String },
    #[error("trial {trial}: {source}")]
    Trial { trial: usize, source: EpisodeError },
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

/// One discretized hyperparameter axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// `low + j·step` for every `j ≥ 0` with the value `≤ high`.
    Grid { low: f64, high: f64, step: f64 },
    /// An explicit list of values.
    Set(Vec<f64>),
}

impl Axis {
    pub fn grid(low: f64, high: f64, step: f64) -> Self {
        Axis::Grid { low, high, step }
    }

    pub fn fixed(v: f64) -> Self {
        Axis::Set(vec![v])
    }

    pub fn validate(&self, name: &str) -> Result<(), SearchError> {
        match *self {
            Axis::Grid { low, high, step } => {
                if !(step > 0.0 && step.is_finite() && low.is_finite() && high.is_finite()) {
                    return Err(SearchError::InvalidSpace(format!("{name}: step must be positive and bounds finite")));
                }
                if high < low {
                    return Err(SearchError::InvalidSpace(format!("{name}: empty range [{low}, {high}]")));
                }
            }
            Axis::Set(ref v) => {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(SearchError::InvalidSpace(format!("{name}: set must be non-empty and finite")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match *self {
            // tolerance keeps `high` on the grid despite rounding in the division
            Axis::Grid { low, high, step } => ((high - low) / step + 1e-9).floor() as usize + 1,
            Axis::Set(ref v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, j: usize) -> f64 {
        match *self {
            Axis::Grid { low, step, .. } => low + j as f64 * step,
            Axis::Set(ref v) => v[j],
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.value(j)).collect()
    }

    /// Whether `x` is one of the axis values.
    pub fn contains(&self, x: f64) -> bool {
        (0..self.len()).any(|j| self.value(j) == x)
    }

    fn draw(&self, r: &mut impl Rng) -> f64 {
        self.value(r.random_range(0..self.len()))
    }
}

/// How alpha2 is read from its axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alpha2Mode {
    /// `alpha2 = value · alpha1`
    Multiplier,
    /// `alpha2 = value`
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    SquaredEuclidean,
    MahalanobisLog,
    SquaredDelta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacePreset {
    /// alpha1 in 0..=10000 step 1000, alpha2 = {0, 0.1, 1, 10, 100} × alpha1.
    MiniImagenet,
    /// alpha1 in 0..=1000 step 100, alpha2 = (0..=1000 step 100) × alpha1.
    StanfordDogs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub beta: Axis,
    pub m: Axis,
    pub k: Axis,
    pub n_samples: Axis,
    pub alpha1: Axis,
    pub alpha2: Axis,
    pub alpha2_mode: Alpha2Mode,
    pub metrics: Vec<MetricKind>,
    /// Only read when the drawn metric is `SquaredDelta`.
    pub delta: Axis,
}

impl SearchSpace {
    /// Shared beta, m, k and n grids plus the preset's alpha grids.
    pub fn preset(preset: SpacePreset, num_base_classes: usize) -> Self {
        let (alpha1, alpha2) = match preset {
            SpacePreset::MiniImagenet => {
                (Axis::grid(0.0, 10000.0, 1000.0), Axis::Set(vec![0.0, 0.1, 1.0, 10.0, 100.0]))
            }
            SpacePreset::StanfordDogs => (Axis::grid(0.0, 1000.0, 100.0), Axis::grid(0.0, 1000.0, 100.0)),
        };
        Self {
            beta: Axis::grid(0.0, 10.0, 0.25),
            m: Axis::grid(0.0, 3.0, 0.25),
            k: Axis::grid(2.0, num_base_classes as f64, 2.0),
            n_samples: Axis::grid(100.0, 1000.0, 50.0),
            alpha1,
            alpha2,
            alpha2_mode: Alpha2Mode::Multiplier,
            metrics: vec![MetricKind::SquaredEuclidean],
            delta: Axis::grid(0.25, 2.0, 0.25),
        }
    }

    /// A space containing exactly `config`.
    pub fn single_point(config: &GdcConfig) -> Self {
        let (metric, delta) = match config.metric {
            DistanceMetric::SquaredEuclidean => (MetricKind::SquaredEuclidean, 1.0),
            DistanceMetric::MahalanobisLog => (MetricKind::MahalanobisLog, 1.0),
            DistanceMetric::SquaredDelta { delta } => (MetricKind::SquaredDelta, delta),
        };
        Self {
            beta: Axis::fixed(config.beta),
            m: Axis::fixed(config.m),
            k: Axis::fixed(config.k as f64),
            n_samples: Axis::fixed(config.n_samples as f64),
            alpha1: Axis::fixed(config.alpha1),
            alpha2: Axis::fixed(config.alpha2),
            alpha2_mode: Alpha2Mode::Absolute,
            metrics: vec![metric],
            delta: Axis::fixed(delta),
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        for (name, axis) in [
            ("beta", &self.beta),
            ("m", &self.m),
            ("k", &self.k),
            ("n_samples", &self.n_samples),
            ("alpha1", &self.alpha1),
            ("alpha2", &self.alpha2),
            ("delta", &self.delta),
        ] {
            axis.validate(name)?;
        }
        if self.metrics.is_empty() {
            return Err(SearchError::InvalidSpace("metrics: at least one metric required".into()));
        }
        let integral = |a: &Axis| a.values().iter().all(|v| *v >= 0.0 && v.fract() == 0.0);
        if !integral(&self.k) || self.k.values().contains(&0.0) || !integral(&self.n_samples) {
            return Err(SearchError::InvalidSpace(
                "k must be positive integers and n_samples non-negative integers".into(),
            ));
        }
        let nonneg = |a: &Axis| a.values().iter().all(|v| *v >= 0.0);
        if !nonneg(&self.m) || !nonneg(&self.alpha1) || !nonneg(&self.alpha2) {
            return Err(SearchError::InvalidSpace("m, alpha1 and alpha2 must be non-negative".into()));
        }
        if self.metrics.contains(&MetricKind::SquaredDelta) && self.delta.values().iter().any(|v| *v <= 0.0) {
            return Err(SearchError::InvalidSpace("delta values must be positive".into()));
        }
        Ok(())
    }

    /// Number of distinct configs (as a float, since it can be huge).
    pub fn cardinality(&self) -> f64 {
        let metric_count: f64 = self
            .metrics
            .iter()
            .map(|m| if *m == MetricKind::SquaredDelta { self.delta.len() as f64 } else { 1.0 })
            .sum();
        [&self.beta, &self.m, &self.k, &self.n_samples, &self.alpha1, &self.alpha2]
            .iter()
            .map(|a| a.len() as f64)
            .product::<f64>()
            * metric_count
    }

    /// Whether every searched field of `config` lies on its axis.
    pub fn contains(&self, config: &GdcConfig) -> bool {
        let alpha2_ok = match self.alpha2_mode {
            Alpha2Mode::Absolute => self.alpha2.contains(config.alpha2),
            Alpha2Mode::Multiplier => self.alpha2.values().iter().any(|mult| mult * config.alpha1 == config.alpha2),
        };
        let metric_ok = match config.metric {
            DistanceMetric::SquaredEuclidean => self.metrics.contains(&MetricKind::SquaredEuclidean),
            DistanceMetric::MahalanobisLog => self.metrics.contains(&MetricKind::MahalanobisLog),
            DistanceMetric::SquaredDelta { delta } => {
                self.metrics.contains(&MetricKind::SquaredDelta) && self.delta.contains(delta)
            }
        };
        self.beta.contains(config.beta)
            && self.m.contains(config.m)
            && self.k.contains(config.k as f64)
            && self.n_samples.contains(config.n_samples as f64)
            && self.alpha1.contains(config.alpha1)
            && alpha2_ok
            && metric_ok
    }
}

/// Draws one config; fields not searched (cov mode, seed, recipe) come from `template`.
///
/// Every axis is drawn in a fixed order, so a trial seed always maps to the
/// same config.
pub fn sample_config(space: &SearchSpace, trial_seed: u64, template: &GdcConfig) -> GdcConfig {
    let mut r = rng::stream(&[trial_seed, 0x7a1a]);
    let beta = space.beta.draw(&mut r);
    let m = space.m.draw(&mut r);
    let k = space.k.draw(&mut r) as usize;
    let n_samples = space.n_samples.draw(&mut r) as usize;
    let alpha1 = space.alpha1.draw(&mut r);
    let a2 = space.alpha2.draw(&mut r);
    let alpha2 = match space.alpha2_mode {
        Alpha2Mode::Multiplier => a2 * alpha1,
        Alpha2Mode::Absolute => a2,
    };
    let kind = space.metrics[r.random_range(0..space.metrics.len())];
    let delta = space.delta.draw(&mut r);
    let metric = match kind {
        MetricKind::SquaredEuclidean => DistanceMetric::SquaredEuclidean,
        MetricKind::MahalanobisLog => DistanceMetric::MahalanobisLog,
        MetricKind::SquaredDelta => DistanceMetric::SquaredDelta { delta },
    };
    GdcConfig { beta, m, k, alpha1, alpha2, n_samples, metric, ..template.clone() }
}

pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    rng::derive_seed(&[master_seed, 0x7121a1, trial as u64])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Pruned,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub trial_seed: u64,
    pub config: GdcConfig,
    pub status: TrialStatus,
    pub accuracies: Vec<f64>,
    /// Mean of the first `checkpoint` accuracies.
    pub checkpoint_mean: Option<f64>,
    /// Median the checkpoint mean was compared against; absent when no
    /// earlier trial had finished.
    pub prune_median: Option<f64>,
    pub final_validation_mean: Option<f64>,
}

/// Median of the checkpoint means of finished trials.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MedianPruner {
    checkpoint_means: Vec<f64>,
}

impl MedianPruner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds the pruner from logged trials.
    pub fn from_records(records: &[TrialRecord]) -> Self {
        Self { checkpoint_means: records.iter().filter_map(|r| r.checkpoint_mean).collect() }
    }

    pub fn record(&mut self, checkpoint_mean: f64) {
        self.checkpoint_means.push(checkpoint_mean);
    }

    /// Average of the two middle values for an even count; `None` when empty.
    pub fn median(&self) -> Option<f64> {
        if self.checkpoint_means.is_empty() {
            return None;
        }
        let mut v = self.checkpoint_means.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }

    pub fn should_prune(&self, running_mean: f64) -> (bool, Option<f64>) {
        match self.median() {
            Some(med) => (running_mean < med, Some(med)),
            None => (false, None),
        }
    }
}

/// Validation protocol shared by every trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub episode: EpisodeSpec,
    pub tasks_per_trial: usize,
    pub checkpoint: usize,
    /// Every trial sees the same validation tasks.
    pub validation_seed: u64,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self { episode: EpisodeSpec::default(), tasks_per_trial: 200, checkpoint: 100, validation_seed: 0 }
    }
}

impl TrialSpec {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.checkpoint == 0 || self.checkpoint > self.tasks_per_trial {
            return Err(SearchError::InvalidSettings(format!(
                "checkpoint {} must lie in [1, tasks_per_trial = {}]",
                self.checkpoint, self.tasks_per_trial
            )));
        }
        Ok(())
    }
}

/// Runs one trial on the validation split.
///
/// `prune_hook` receives the checkpoint mean and answers whether to prune,
/// along with the median it compared against.
pub fn run_trial(
    dataset: &FeatureDataset,
    pipeline: &Pipeline,
    config: &GdcConfig,
    spec: &TrialSpec,
    prune_hook: impl FnOnce(f64) -> (bool, Option<f64>),
) -> Result<(TrialStatus, Vec<f64>, f64, Option<f64>), EpisodeError> {
    let eval = EvalSpec::new(spec.episode, spec.tasks_per_trial, spec.validation_seed);
    let mut acc = task_accuracies(dataset, pipeline, Split::Validation, config, &eval, 0..spec.checkpoint)?;
    let checkpoint_mean = mean_ci95(&acc).0;
    let (prune, median) = prune_hook(checkpoint_mean);
    if prune {
        return Ok((TrialStatus::Pruned, acc, checkpoint_mean, median));
    }
    acc.extend(task_accuracies(
        dataset,
        pipeline,
        Split::Validation,
        config,
        &eval,
        spec.checkpoint..spec.tasks_per_trial,
    )?);
    Ok((TrialStatus::Complete, acc, checkpoint_mean, median))
}

/// Settings of a whole search.
#[derive(Clone, Debug, PartialEq)]
pub struct TuneSettings {
    pub space: SearchSpace,
    /// Source of the fields that are not searched.
    pub template: GdcConfig,
    pub trials: usize,
    pub master_seed: u64,
    pub trial_spec: TrialSpec,
}

/// Pipelines keyed by beta, built on first use.
#[derive(Default)]
pub struct PipelineCache {
    pipelines: HashMap<u64, Pipeline>,
}

impl PipelineCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, dataset: &FeatureDataset, beta: f64) -> Result<&Pipeline, EpisodeError> {
        match self.pipelines.entry(beta.to_bits()) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => Ok(e.insert(Pipeline::prepare(dataset, beta)?)),
        }
    }
}

fn log_error(path: &Path, message: impl Into<String>) -> SearchError {
    SearchError::Log { path: path.to_path_buf(), message: message.into() }
}

pub fn read_trial_log(path: &Path) -> Result<Vec<TrialRecord>, SearchError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(log_error(path, e.to_string())),
    };
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| log_error(path, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrialRecord =
            serde_json::from_str(&line).map_err(|e| log_error(path, format!("line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

fn append_record(path: &Path, record: &TrialRecord) -> Result<(), SearchError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| log_error(path, e.to_string()))?;
    let mut line = serde_json::to_string(record).map_err(|e| log_error(path, e.to_string()))?;
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| log_error(path, e.to_string()))
}

/// Runs (or resumes) a search; returns every trial record in order.
///
/// With a `log` path, records already in the file are replayed instead of
/// re-run and new ones are appended as they finish. Logged trials must
/// match what the settings would draw.
pub fn tune(
    dataset: &FeatureDataset,
    settings: &TuneSettings,
    log: Option<&Path>,
) -> Result<Vec<TrialRecord>, SearchError> {
    settings.space.validate()?;
    settings.trial_spec.validate()?;
    settings.trial_spec.episode.validate()?;
    let mut records = match log {
        Some(p) => read_trial_log(p)?,
        None => Vec::new(),
    };
    for (i, rec) in records.iter().enumerate() {
        let seed = trial_seed(settings.master_seed, i);
        if rec.trial != i
            || rec.trial_seed != seed
            || rec.config != sample_config(&settings.space, seed, &settings.template)
        {
            let path = log.expect("records come from a log");
            return Err(log_error(path, format!("record {i} does not match these search settings")));
        }
    }
    records.truncate(settings.trials);

    let mut pruner = MedianPruner::from_records(&records);
    let mut cache = PipelineCache::new();
    for trial in records.len()..settings.trials {
        let seed = trial_seed(settings.master_seed, trial);
        let config = sample_config(&settings.space, seed, &settings.template);
        let mut run = || -> Result<TrialRecord, EpisodeError> {
            let pipeline = cache.get(dataset, config.beta)?;
            let (status, accuracies, checkpoint_mean, prune_median) =
                run_trial(dataset, pipeline, &config, &settings.trial_spec, |mean| pruner.should_prune(mean))?;
            let final_validation_mean = (status == TrialStatus::Complete).then(|| mean_ci95(&accuracies).0);
            Ok(TrialRecord {
                trial,
                trial_seed: seed,
                config: config.clone(),
                status,
                accuracies,
                checkpoint_mean: Some(checkpoint_mean),
                prune_median,
                final_validation_mean,
            })
        };
        let record = run().map_err(|source| SearchError::Trial { trial, source })?;
        pruner.record(record.checkpoint_mean.expect("set above"));
        if let Some(p) = log {
            append_record(p, &record)?;
        }
        records.push(record);
    }
    Ok(records)
}

/// Completed trials by validation mean, best first; ties keep trial order.
pub fn ranked_completed(trials: &[TrialRecord]) -> Vec<&TrialRecord> {
    let mut done: Vec<&TrialRecord> = trials.iter().filter(|t| t.status == TrialStatus::Complete).collect();
    done.sort_by(|a, b| {
        let (x, y) = (a.final_validation_mean.unwrap_or(f64::NAN), b.final_validation_mean.unwrap_or(f64::NAN));
        y.total_cmp(&x).then(a.trial.cmp(&b.trial))
    });
    done
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confirmed {
    pub trial: usize,
    pub config: GdcConfig,
    pub validation_mean: f64,
    pub novel_mean: f64,
    pub novel_ci95: f64,
}

/// Re-evaluates the `top_n` best completed trials on `novel_tasks` novel
/// tasks; returned by novel mean, best first.
pub fn confirm_top(
    dataset: &FeatureDataset,
    trials: &[TrialRecord],
    top_n: usize,
    novel_tasks: usize,
    episode: EpisodeSpec,
    novel_seed: u64,
) -> Result<Vec<Confirmed>, SearchError> {
    let ranked = ranked_completed(trials);
    if ranked.len() < top_n {
        return Err(SearchError::NotEnoughCompleted { needed: top_n, available: ranked.len() });
    }
    let mut cache = PipelineCache::new();
    let mut out = Vec::with_capacity(top_n);
    for t in ranked.into_iter().take(top_n) {
        let pipeline = cache.get(dataset, t.config.beta)?;
        let spec = EvalSpec::new(episode, novel_tasks, novel_seed);
        let EpisodeResult { mean, ci95, .. } = evaluate(dataset, pipeline, Split::Novel, &t.config, &spec)
            .map_err(|source| SearchError::Trial { trial: t.trial, source })?;
        out.push(Confirmed {
            trial: t.trial,
            config: t.config.clone(),
            validation_mean: t.final_validation_mean.expect("completed trial has a mean"),
            novel_mean: mean,
            novel_ci95: ci95,
        });
    }
    out.sort_by(|a, b| b.novel_mean.total_cmp(&a.novel_mean).then(a.trial.cmp(&b.trial)));
    Ok(out)
}
