//! Multinomial logistic regression trained by plain mini-batch SGD.
//!
//! The recipe is fixed: batch size 1024, 200 epochs, learning rate 0.08,
//! mean cross-entropy, no regularization, no schedule. Weights and bias
//! start at zero and the last partial batch of each epoch is kept.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassId, LabeledPoint};
use crate::rng;
use crate::sampling::AugmentedSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("training data needs at least two classes, found {found}")]
    TooFewClasses { found: usize },
    #[error("training data is empty")]
    EmptyTrainingSet,
    #[error("non-finite feature in training row {row}")]
    NonFiniteInput { row: usize },
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("feature has dimension {actual}, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("query set is empty")]
    EmptyQuery,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecipe {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        Self { batch_size: 1024, epochs: 200, learning_rate: 0.08, shuffle_seed: 0 }
    }
}

impl TrainRecipe {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRegModel {
    /// `N × d`, one row per class.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// Class id of each row, ascending.
    pub classes: Vec<ClassId>,
}

impl LogRegModel {
    pub fn zeros(classes: Vec<ClassId>, dim: usize) -> Self {
        let n = classes.len();
        Self { weights: DMatrix::zeros(n, dim), bias: DVector::zeros(n), classes }
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, features: &[f64]) -> Result<DVector<f64>, ClassifyError> {
        if features.len() != self.dim() {
            return Err(ClassifyError::DimensionMismatch { expected: self.dim(), actual: features.len() });
        }
        Ok(&self.weights * DVector::from_column_slice(features) + &self.bias)
    }
}

/// Mean cross-entropy over the rows of `x` and its gradient in `(W, b)`.
pub fn loss_and_gradient(
    model: &LogRegModel,
    x: &DMatrix<f64>,
    targets: &[usize],
) -> (f64, DMatrix<f64>, DVector<f64>) {
    let (b, d) = x.shape();
    let n = model.classes.len();
    let rows: Vec<f64> = x.transpose().as_slice().to_vec();
    let idx: Vec<usize> = (0..b).collect();
    let mut g = Params::zeros(n, d);
    let loss = batch_gradient(&Params::from_model(model), &mut g, &rows, &idx, targets, &mut vec![0.0; n]);
    (loss, DMatrix::from_row_slice(n, d, &g.weights), DVector::from_vec(g.bias))
}

/// Row-major weights and bias.
struct Params {
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Params {
    fn zeros(classes: usize, dim: usize) -> Self {
        Self { dim, weights: vec![0.0; classes * dim], bias: vec![0.0; classes] }
    }

    fn from_model(model: &LogRegModel) -> Self {
        Self {
            dim: model.dim(),
            weights: model.weights.transpose().as_slice().to_vec(),
            bias: model.bias.as_slice().to_vec(),
        }
    }
}

/// Mean loss over the rows `idx` of row-major `rows`; the mean gradient
/// lands in `grad`.
fn batch_gradient(
    params: &Params,
    grad: &mut Params,
    rows: &[f64],
    idx: &[usize],
    targets: &[usize],
    probs: &mut [f64],
) -> f64 {
    let d = params.dim;
    grad.weights.fill(0.0);
    grad.bias.fill(0.0);
    let mut loss = 0.0;
    for &i in idx {
        let x = &rows[i * d..(i + 1) * d];
        let t = targets[i];
        for ((p, w), b) in probs.iter_mut().zip(params.weights.chunks_exact(d)).zip(&params.bias) {
            *p = b + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted_target = probs[t] - max;
        let mut sum = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            sum += *p;
        }
        loss += sum.ln() - shifted_target;
        for p in probs.iter_mut() {
            *p /= sum;
        }
        probs[t] -= 1.0;
        for ((p, g), gb) in probs.iter().zip(grad.weights.chunks_exact_mut(d)).zip(grad.bias.iter_mut()) {
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += p * xj;
            }
            *gb += p;
        }
    }
    let scale = 1.0 / idx.len() as f64;
    grad.weights.iter_mut().for_each(|g| *g *= scale);
    grad.bias.iter_mut().for_each(|g| *g *= scale);
    loss * scale
}

pub fn train(data: &AugmentedSet, recipe: &TrainRecipe) -> Result<LogRegModel, ClassifyError> {
    train_on(data.dim, &data.labels, &data.values, recipe)
}

/// Trains on row-major `values` (`labels.len() × dim`).
pub fn train_on(
    dim: usize,
    labels: &[ClassId],
    values: &[f64],
    recipe: &TrainRecipe,
) -> Result<LogRegModel, ClassifyError> {
    if labels.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    if values.len() != labels.len() * dim {
        return Err(ClassifyError::DimensionMismatch { expected: labels.len() * dim, actual: values.len() });
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(ClassifyError::NonFiniteInput { row: pos / dim });
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(ClassifyError::TooFewClasses { found: classes.len() });
    }
    let targets: Vec<usize> =
        labels.iter().map(|c| classes.binary_search(c).expect("label is among classes")).collect();

    let n = labels.len();
    let k = classes.len();
    let mut params = Params::zeros(k, dim);
    let mut grad = Params::zeros(k, dim);
    let mut probs = vec![0.0; k];
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffler = rng::stream(&[recipe.shuffle_seed]);
    let batch = recipe.batch_size.max(1);
    let lr = recipe.learning_rate;

    for epoch in 0..recipe.epochs {
        order.shuffle(&mut shuffler);
        for (step, chunk) in order.chunks(batch).enumerate() {
            let loss = batch_gradient(&params, &mut grad, values, chunk, &targets, &mut probs);
            if !loss.is_finite() {
                return Err(ClassifyError::NonFiniteLoss { epoch, step });
            }
            params.weights.iter_mut().zip(&grad.weights).for_each(|(w, g)| *w -= lr * g);
            params.bias.iter_mut().zip(&grad.bias).for_each(|(b, g)| *b -= lr * g);
        }
    }
    Ok(LogRegModel {
        weights: DMatrix::from_row_slice(k, dim, &params.weights),
        bias: DVector::from_vec(params.bias),
        classes,
    })
}

/// Predicted class and the softmax probabilities; ties go to the first class.
pub fn predict(model: &LogRegModel, features: &[f64]) -> Result<(ClassId, Vec<f64>), ClassifyError> {
    let logits = model.logits(features)?;
    let max = logits.max();
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let probs: Vec<f64> = exp.iter().map(|v| v / sum).collect();
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    Ok((model.classes[best], probs))
}

pub fn accuracy(model: &LogRegModel, query: &[LabeledPoint]) -> Result<f64, ClassifyError> {
    if query.is_empty() {
        return Err(ClassifyError::EmptyQuery);
    }
    let mut correct = 0usize;
    for q in query {
        if predict(model, &q.features)?.0 == q.class_id {
            correct += 1;
        }
    }
    Ok(correct as f64 / query.len() as f64)
}
