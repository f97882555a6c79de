//! Generalized distribution calibration for few-shot classification.
//!
//! Given precomputed feature embeddings split into base, validation and
//! novel classes, each support point of an N-way K-shot task is turned into
//! a Gaussian estimated from its nearest base classes. Points sampled from
//! those Gaussians augment the support set before a logistic-regression
//! classifier is trained on it.
//!
//! The modules follow the pipeline:
//!
//! - [`dataset`]: feature files, split manifests, partitions
//! - [`transforms`]: Tukey / Yeo-Johnson Gaussianization
//! - [`stats`]: base-class moments, distances, nearest classes
//! - [`calibrate`]: weights, calibrated moments, covariance shrinkage
//! - [`sampling`]: multivariate normal draws and the augmented set
//! - [`classify`]: logistic regression by mini-batch SGD
//! - [`episodes`]: task sampling and aggregate evaluation
//! - [`search`]: hyperparameter search with median pruning
//! - [`synth`]: synthetic Gaussian worlds and the Gaussian KL divergence
//! - [`cli`]: the `gdc` command-line front end

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod classify;
pub mod cli;
pub mod dataset;
pub mod episodes;
pub mod rng;
pub mod sampling;
pub mod search;
pub mod stats;
pub mod synth;
pub mod transforms;

pub use calibrate::{CalibratedDistribution, CovMode, GdcConfig};
pub use classify::{LogRegModel, TrainRecipe};
pub use dataset::{ClassId, FeatureDataset, LabeledPoint, Split, SplitManifest};
pub use episodes::{EpisodeResult, EpisodeSpec, EvalSpec, Pipeline, Task};
pub use sampling::AugmentedSet;
pub use stats::{BaseStats, ClassStats, DistanceMetric};
pub use transforms::{TransformChoice, TransformKind};
