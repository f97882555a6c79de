//! N-way K-shot episodes: task sampling, the per-task pipeline and
//! aggregate accuracy with a normal-approximation 95% interval.

use std::ops::Range;

use rand::seq::index;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{CalibrationError, GdcConfig};
use crate::classify::{accuracy, train, ClassifyError};
use crate::dataset::{ClassId, FeatureDataset, LabeledPoint, Partition, Split};
use crate::rng;
use crate::sampling::{augment_task, SamplingError};
use crate::stats::{BaseStats, ClassStats, StatsError};
use crate::transforms::{select_transform, TransformChoice, TransformError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpisodeError {
    #[error("split {split} has {available} classes, a {way}-way task needs {way}")]
    NotEnoughClasses { split: Split, available: usize, way: usize },
    #[error("class {class_id} has {available} points, a task needs {needed}")]
    NotEnoughPoints { class_id: ClassId, available: usize, needed: usize },
    #[error("invalid episode spec: {0}")]
    InvalidSpec(String),
    #[error("task {task}: {source}")]
    Task { task: usize, source: Box<EpisodeError> },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Shape of one episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self { way: 5, shot: 1, queries: 15 }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        if self.way < 2 {
            return Err(EpisodeError::InvalidSpec(format!("way must be at least 2, got {}", self.way)));
        }
        if self.shot == 0 || self.queries == 0 {
            return Err(EpisodeError::InvalidSpec("shot and queries must be positive".into()));
        }
        Ok(())
    }
}

/// Support and query points of one episode, in raw (untransformed) features.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub support: Vec<LabeledPoint>,
    pub query: Vec<LabeledPoint>,
    /// Dataset row of each support point.
    pub support_rows: Vec<usize>,
    /// Dataset row of each query point.
    pub query_rows: Vec<usize>,
    pub task_seed: u64,
}

impl Task {
    /// Replaces query labels by a seeded permutation of themselves.
    pub fn shuffle_query_labels(&mut self) {
        let mut labels: Vec<ClassId> = self.query.iter().map(|q| q.class_id).collect();
        let mut r = rng::stream(&[self.task_seed, 0x5eed_1abe1]);
        labels.shuffle(&mut r);
        for (q, c) in self.query.iter_mut().zip(labels) {
            q.class_id = c;
        }
    }
}

fn row_f64(dataset: &FeatureDataset, row: usize) -> Vec<f64> {
    dataset.point(row).iter().map(|&v| f64::from(v)).collect()
}

/// `way` classes uniformly, then `shot + queries` distinct points from each.
pub fn sample_task(
    dataset: &FeatureDataset,
    partition: &Partition,
    spec: EpisodeSpec,
    task_seed: u64,
) -> Result<Task, EpisodeError> {
    spec.validate()?;
    let classes: Vec<ClassId> = partition.class_ids().collect();
    if classes.len() < spec.way {
        return Err(EpisodeError::NotEnoughClasses { split: partition.split, available: classes.len(), way: spec.way });
    }
    let needed = spec.shot + spec.queries;
    let mut r = rng::stream(&[task_seed]);
    let chosen = index::sample(&mut r, classes.len(), spec.way);
    let mut task = Task {
        way: spec.way,
        shot: spec.shot,
        queries_per_class: spec.queries,
        support: Vec::with_capacity(spec.way * spec.shot),
        query: Vec::with_capacity(spec.way * spec.queries),
        support_rows: Vec::new(),
        query_rows: Vec::new(),
        task_seed,
    };
    for ci in chosen.iter() {
        let class_id = classes[ci];
        let rows = partition.indices(class_id);
        if rows.len() < needed {
            return Err(EpisodeError::NotEnoughPoints { class_id, available: rows.len(), needed });
        }
        let picked = index::sample(&mut r, rows.len(), needed);
        for (n, p) in picked.iter().enumerate() {
            let row = rows[p];
            let point = LabeledPoint { class_id, features: row_f64(dataset, row) };
            if n < spec.shot {
                task.support.push(point);
                task.support_rows.push(row);
            } else {
                task.query.push(point);
                task.query_rows.push(row);
            }
        }
    }
    Ok(task)
}

/// Transform choice plus the base statistics computed in transformed space.
#[derive(Debug)]
pub struct Pipeline {
    pub transform: TransformChoice,
    pub base: BaseStats,
}

impl Pipeline {
    /// Selects the transform from the whole dataset and computes base moments.
    pub fn prepare(dataset: &FeatureDataset, beta: f64) -> Result<Self, EpisodeError> {
        let transform = TransformChoice::new(select_transform(dataset)?, beta);
        let partition = dataset.partition(Split::Base);
        let dim = dataset.dim();
        let classes = partition
            .iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(class_id, rows)| {
                let mut values = Vec::with_capacity(rows.len() * dim);
                for &r in rows {
                    values.extend(dataset.point(r).iter().map(|&v| f64::from(v)));
                }
                transform.apply_in_place(&mut values)?;
                Ok(ClassStats::from_rows(class_id, dim, values.chunks_exact(dim)))
            })
            .collect::<Result<Vec<_>, TransformError>>()?;
        Ok(Self { transform, base: BaseStats::new(classes)? })
    }

    pub fn transform_points(&self, points: &[LabeledPoint]) -> Result<Vec<LabeledPoint>, TransformError> {
        points
            .iter()
            .map(|p| Ok(LabeledPoint { class_id: p.class_id, features: self.transform.apply(&p.features)? }))
            .collect()
    }
}

/// Shuffle seed of the classifier for one task.
pub fn task_shuffle_seed(config: &GdcConfig, task_seed: u64) -> u64 {
    rng::derive_seed(&[config.recipe.shuffle_seed, task_seed])
}

/// Transform, calibrate and augment the support set, train, score the query set.
pub fn run_episode(task: &Task, pipeline: &Pipeline, config: &GdcConfig) -> Result<f64, EpisodeError> {
    config.validate(pipeline.base.len())?;
    let support = pipeline.transform_points(&task.support)?;
    let query = pipeline.transform_points(&task.query)?;
    let augmented = augment_task(&support, &pipeline.base, config, task.task_seed)?;
    let mut recipe = config.recipe;
    recipe.shuffle_seed = task_shuffle_seed(config, task.task_seed);
    let model = train(&augmented, &recipe)?;
    Ok(accuracy(&model, &query)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryLabels {
    #[default]
    Intact,
    /// Query labels permuted within each task; accuracy then measures chance.
    Shuffled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub episode: EpisodeSpec,
    pub num_tasks: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub query_labels: QueryLabels,
}

impl EvalSpec {
    pub fn new(episode: EpisodeSpec, num_tasks: usize, base_seed: u64) -> Self {
        Self { episode, num_tasks, base_seed, query_labels: QueryLabels::Intact }
    }
}

pub fn task_seed(base_seed: u64, task_index: usize) -> u64 {
    rng::derive_seed(&[base_seed, task_index as u64])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub per_task_accuracy: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

impl EpisodeResult {
    /// `ci95 = 1.96 · std / √T` with the population standard deviation.
    pub fn from_accuracies(per_task_accuracy: Vec<f64>) -> Self {
        let (mean, ci95) = mean_ci95(&per_task_accuracy);
        Self { per_task_accuracy, mean, ci95 }
    }
}

pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let t = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / t;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t;
    (mean, 1.96 * var.sqrt() / t.sqrt())
}

/// Accuracies of tasks `range` of an evaluation; task `i` depends only on
/// `(spec.base_seed, i)`, so ranges compose.
pub fn task_accuracies(
    dataset: &FeatureDataset,
    pipeline: &Pipeline,
    split: Split,
    config: &GdcConfig,
    spec: &EvalSpec,
    range: Range<usize>,
) -> Result<Vec<f64>, EpisodeError> {
    config.validate(pipeline.base.len())?;
    spec.episode.validate()?;
    let partition = dataset.partition(split);
    range
        .into_par_iter()
        .map(|i| {
            let run = || {
                let mut task = sample_task(dataset, &partition, spec.episode, task_seed(spec.base_seed, i))?;
                if spec.query_labels == QueryLabels::Shuffled {
                    task.shuffle_query_labels();
                }
                run_episode(&task, pipeline, config)
            };
            run().map_err(|e| EpisodeError::Task { task: i, source: Box::new(e) })
        })
        .collect()
}

/// Runs `f` on a dedicated pool of `workers` threads, or the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, EpisodeError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| EpisodeError::Pool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Evaluates `spec.num_tasks` tasks from `split`; any task failure aborts.
pub fn evaluate(
    dataset: &FeatureDataset,
    pipeline: &Pipeline,
    split: Split,
    config: &GdcConfig,
    spec: &EvalSpec,
) -> Result<EpisodeResult, EpisodeError> {
    if spec.num_tasks == 0 {
        return Err(EpisodeError::InvalidSpec("num_tasks must be at least 1".into()));
    }
    let acc = task_accuracies(dataset, pipeline, split, config, spec, 0..spec.num_tasks)?;
    Ok(EpisodeResult::from_accuracies(acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SplitManifest;
    use std::collections::BTreeSet;

    fn grid_dataset(classes: u32, per_class: usize) -> FeatureDataset {
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                labels.push(c);
                values.extend([c as f32, i as f32 * 0.01]);
            }
        }
        let m = SplitManifest::new(0..2, 2..3, 3..classes);
        FeatureDataset::new(2, labels, values, m).unwrap()
    }

    #[test]
    fn task_shape_and_disjointness() {
        let ds = grid_dataset(10, 20);
        let part = ds.partition(Split::Novel);
        let spec = EpisodeSpec { way: 5, shot: 1, queries: 15 };
        let task = sample_task(&ds, &part, spec, 11).unwrap();
        assert_eq!(task.support.len(), 5);
        assert_eq!(task.query.len(), 75);
        let classes: BTreeSet<_> = task.support.iter().map(|p| p.class_id).collect();
        assert_eq!(classes.len(), 5);
        for c in &classes {
            assert_eq!(task.query.iter().filter(|q| q.class_id == *c).count(), 15);
        }
        let s: BTreeSet<_> = task.support_rows.iter().collect();
        assert!(task.query_rows.iter().all(|r| !s.contains(r)));
        assert_eq!(sample_task(&ds, &part, spec, 11).unwrap(), task);
        assert_ne!(sample_task(&ds, &part, spec, 12).unwrap(), task);
    }

    #[test]
    fn task_uses_every_class_when_way_equals_split() {
        let ds = grid_dataset(8, 6);
        let part = ds.partition(Split::Novel);
        let spec = EpisodeSpec { way: 5, shot: 2, queries: 3 };
        let task = sample_task(&ds, &part, spec, 0).unwrap();
        let classes: BTreeSet<_> = task.support.iter().map(|p| p.class_id).collect();
        assert_eq!(classes, (3..8).collect());
    }

    #[test]
    fn insufficient_data() {
        let ds = grid_dataset(6, 4);
        let part = ds.partition(Split::Novel);
        assert!(matches!(
            sample_task(&ds, &part, EpisodeSpec::default(), 0),
            Err(EpisodeError::NotEnoughClasses { available: 3, .. })
        ));
        let spec = EpisodeSpec { way: 3, shot: 1, queries: 15 };
        assert!(matches!(
            sample_task(&ds, &part, spec, 0),
            Err(EpisodeError::NotEnoughPoints { available: 4, needed: 16, .. })
        ));
    }

    #[test]
    fn ci_of_single_task_is_zero() {
        let r = EpisodeResult::from_accuracies(vec![0.6]);
        assert_eq!((r.mean, r.ci95), (0.6, 0.0));
        let (m, ci) = mean_ci95(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!((ci - 1.96 * 0.5 / 2f64.sqrt()).abs() < 1e-15);
    }
}
