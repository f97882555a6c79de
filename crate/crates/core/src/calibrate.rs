//! Calibrated Gaussian for a single support point.
//!
//! The support point `x̃` is combined with its `k` nearest base classes
//! into the weighted variable `X' = (x̃ + Σ wᵢ Xᵢ) / (1 + Σ wᵢ)` with
//! `wᵢ = 1 / (1 + dᵢᵐ)`. Its covariance is then shrunk toward
//! `α₁σ₁I + α₂σ₂(𝟙 − I)`, where σ₁ and σ₂ are the mean diagonal and mean
//! off-diagonal entries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::TrainRecipe;
use crate::dataset::ClassId;
use crate::stats::{BaseStats, ClassStats, DistanceMetric, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("no base classes selected")]
    EmptySelection,
    #[error("{stats} class statistics but {weights} weights")]
    LengthMismatch { stats: usize, weights: usize },
    #[error("support point has dimension {actual}, base statistics {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// How the covariance of the weighted variable is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMode {
    /// `Σ wᵢΣᵢ / Σ wᵢ`
    #[default]
    WeightedAverage,
    /// `Σ wᵢ²Σᵢ / (1 + Σ wᵢ)²`, exact for independent base variables.
    IndependentSum,
}

/// All hyperparameters of one calibration + classification run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdcConfig {
    pub beta: f64,
    pub m: f64,
    pub k: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub n_samples: usize,
    #[serde(default)]
    pub metric: DistanceMetric,
    #[serde(default)]
    pub cov_mode: CovMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub recipe: TrainRecipe,
}

impl Default for GdcConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            m: 1.0,
            k: 8,
            alpha1: 3000.0,
            alpha2: 30000.0,
            n_samples: 750,
            metric: DistanceMetric::SquaredEuclidean,
            cov_mode: CovMode::WeightedAverage,
            seed: 0,
            recipe: TrainRecipe::default(),
        }
    }
}

impl GdcConfig {
    pub fn validate(&self, num_base_classes: usize) -> Result<(), CalibrationError> {
        let bad = |msg: String| Err(CalibrationError::InvalidConfig(msg));
        if !self.beta.is_finite() {
            return bad(format!("beta must be finite, got {}", self.beta));
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return bad(format!("m must be a finite non-negative number, got {}", self.m));
        }
        if self.k == 0 || self.k > num_base_classes {
            return bad(format!("k = {} must lie in [1, {num_base_classes}]", self.k));
        }
        if !(self.alpha1 >= 0.0) || !(self.alpha2 >= 0.0) {
            return bad(format!("alpha1 = {} and alpha2 = {} must be non-negative", self.alpha1, self.alpha2));
        }
        self.metric.validate()?;
        self.recipe.validate().map_err(CalibrationError::InvalidConfig)
    }
}

/// Calibrated moments of one support point.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedDistribution {
    pub mu_prime: DVector<f64>,
    pub sigma_prime_s: DMatrix<f64>,
    pub source_support_index: usize,
    pub weights: Vec<(ClassId, f64)>,
}

/// `wᵢ = 1 / (1 + dᵢᵐ)`, with `0⁰ = 1`.
pub fn weights(distances: &[f64], m: f64) -> Vec<f64> {
    distances.iter().map(|&d| 1.0 / (1.0 + d.powf(m))).collect()
}

pub fn calibrated_moments(
    x_tilde: &[f64],
    selected: &[&ClassStats],
    w: &[f64],
    cov_mode: CovMode,
) -> Result<(DVector<f64>, DMatrix<f64>), CalibrationError> {
    if selected.is_empty() {
        return Err(CalibrationError::EmptySelection);
    }
    if selected.len() != w.len() {
        return Err(CalibrationError::LengthMismatch { stats: selected.len(), weights: w.len() });
    }
    let dim = selected[0].dim();
    if x_tilde.len() != dim {
        return Err(CalibrationError::DimensionMismatch { expected: dim, actual: x_tilde.len() });
    }
    if let Some(s) = selected.iter().find(|s| s.dim() != dim) {
        return Err(CalibrationError::DimensionMismatch { expected: dim, actual: s.dim() });
    }

    let w_sum: f64 = w.iter().sum();
    let mut mu = DVector::from_column_slice(x_tilde);
    for (s, &wi) in selected.iter().zip(w) {
        mu.axpy(wi, &s.mu, 1.0);
    }
    mu /= 1.0 + w_sum;

    let mut sigma = DMatrix::zeros(dim, dim);
    match cov_mode {
        CovMode::WeightedAverage => {
            for (s, &wi) in selected.iter().zip(w) {
                sigma += &s.sigma * wi;
            }
            sigma /= w_sum;
        }
        CovMode::IndependentSum => {
            for (s, &wi) in selected.iter().zip(w) {
                sigma += &s.sigma * (wi * wi);
            }
            sigma /= (1.0 + w_sum) * (1.0 + w_sum);
        }
    }
    Ok((mu, sigma))
}

/// Mean diagonal and mean off-diagonal entry; σ₂ is 0 for a 1×1 matrix.
pub fn diagonal_and_offdiagonal_means(sigma: &DMatrix<f64>) -> (f64, f64) {
    let d = sigma.nrows();
    let trace = sigma.trace();
    let sigma1 = trace / d as f64;
    let sigma2 = if d > 1 { (sigma.sum() - trace) / (d * d - d) as f64 } else { 0.0 };
    (sigma1, sigma2)
}

/// `Σ' + α₁σ₁I + α₂σ₂(𝟙 − I)`.
pub fn shrink(sigma_prime: &DMatrix<f64>, alpha1: f64, alpha2: f64) -> DMatrix<f64> {
    let (sigma1, sigma2) = diagonal_and_offdiagonal_means(sigma_prime);
    let diag = alpha1 * sigma1;
    let off = alpha2 * sigma2;
    let mut out = sigma_prime.clone();
    let d = out.nrows();
    for j in 0..d {
        for i in 0..d {
            out[(i, j)] += if i == j { diag } else { off };
        }
    }
    out
}

/// Nearest classes, weights, weighted moments, then shrinkage.
pub fn calibrate_support_point(
    x_tilde: &[f64],
    base: &BaseStats,
    config: &GdcConfig,
    source_support_index: usize,
) -> Result<CalibratedDistribution, CalibrationError> {
    let neighbors = base.top_k(x_tilde, config.k, config.metric)?;
    let d: Vec<f64> = neighbors.iter().map(|n| n.distance.max(0.0)).collect();
    let w = weights(&d, config.m);
    let selected: Vec<&ClassStats> = neighbors.iter().map(|n| &base.classes()[n.index]).collect();
    let (mu_prime, sigma_prime) = calibrated_moments(x_tilde, &selected, &w, config.cov_mode)?;
    let sigma_prime_s = shrink(&sigma_prime, config.alpha1, config.alpha2);
    Ok(CalibratedDistribution {
        mu_prime,
        sigma_prime_s,
        source_support_index,
        weights: neighbors.iter().map(|n| n.class_id).zip(w).collect(),
    })
}
