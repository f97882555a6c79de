//! Synthetic support points drawn from calibrated Gaussians.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::calibrate::{calibrate_support_point, CalibratedDistribution, CalibrationError, GdcConfig};
use crate::dataset::{write_binary, ClassId, LabeledPoint};
use crate::rng::{self, NormalStream};
use crate::stats::BaseStats;

/// First jitter factor tried when a covariance fails to factor; grows by 10×.
pub const JITTER_START: f64 = 1e-8;
/// Largest jitter factor tried before giving up.
pub const JITTER_MAX: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error(
        "covariance is not positive definite after jitter up to {JITTER_MAX:e}·σ₁ \
         (smallest eigenvalue ≈ {min_eigenvalue:e})"
    )]
    Factorization { min_eigenvalue: f64 },
    #[error("mean has dimension {mean} but covariance is {rows}x{cols}")]
    Shape { mean: usize, rows: usize, cols: usize },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

/// Lower factor `L` with `L Lᵀ = Σ` (after jitter repair if needed).
///
/// The all-zero matrix factors as `L = 0`.
pub fn factor_covariance(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>, SamplingError> {
    if let Some(c) = sigma.clone().cholesky() {
        return Ok(c.unpack());
    }
    if sigma.iter().all(|&v| v == 0.0) {
        return Ok(sigma.clone());
    }
    let d = sigma.nrows();
    let sigma1 = (sigma.trace() / d as f64).abs();
    let mut eps = JITTER_START;
    while eps <= JITTER_MAX * (1.0 + 1e-12) {
        let mut repaired = sigma.clone();
        for i in 0..d {
            repaired[(i, i)] += eps * sigma1;
        }
        if let Some(c) = repaired.cholesky() {
            return Ok(c.unpack());
        }
        eps *= 10.0;
    }
    let min_eigenvalue = sigma.clone().symmetric_eigenvalues().min();
    Err(SamplingError::Factorization { min_eigenvalue })
}

/// `n` draws of `mu + L z` as the rows of an `n × d` matrix.
///
/// Normals are consumed sample by sample, coordinate by coordinate.
pub fn sample_mvn<R: RngCore>(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    n: usize,
    normals: &mut NormalStream<R>,
) -> Result<DMatrix<f64>, SamplingError> {
    let d = mu.len();
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(SamplingError::Shape { mean: d, rows: sigma.nrows(), cols: sigma.ncols() });
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, d));
    }
    let l = factor_covariance(sigma)?;
    let mut z = DMatrix::zeros(d, n);
    normals.fill(z.as_mut_slice());
    let mut x = l * z;
    for mut col in x.column_iter_mut() {
        col += mu;
    }
    Ok(x.transpose())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Origin {
    Support = 0,
    Sampled = 1,
}

/// Support set followed by the points sampled for each support point.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSet {
    pub dim: usize,
    pub labels: Vec<ClassId>,
    /// Row-major, `labels.len() * dim` entries.
    pub values: Vec<f64>,
    pub origins: Vec<Origin>,
}

impl AugmentedSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    pub fn from_support(dim: usize, support: &[LabeledPoint]) -> Self {
        let mut set = Self { dim, labels: Vec::new(), values: Vec::new(), origins: Vec::new() };
        for p in support {
            set.push(p.class_id, &p.features, Origin::Support);
        }
        set
    }

    fn push(&mut self, class_id: ClassId, features: &[f64], origin: Origin) {
        debug_assert_eq!(features.len(), self.dim);
        self.labels.push(class_id);
        self.values.extend_from_slice(features);
        self.origins.push(origin);
    }

    /// Writes the set as a version-2 feature file (f32 values plus an origin byte).
    pub fn write(&self, path: &Path) -> io::Result<()> {
        let values: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        let origins: Vec<u8> = self.origins.iter().map(|&o| o as u8).collect();
        let mut w = BufWriter::new(File::create(path)?);
        write_binary(&mut w, self.dim, &self.labels, &values, Some(&origins))?;
        w.flush()
    }
}

/// Stream key of the sampler for support point `support_index` of a task.
pub fn support_stream_key(seed: u64, task_seed: u64, support_index: usize) -> [u64; 3] {
    [seed, task_seed, support_index as u64]
}

/// Calibrated distribution of every support point, in support order.
pub fn calibrate_task(
    support: &[LabeledPoint],
    base: &BaseStats,
    config: &GdcConfig,
) -> Result<Vec<CalibratedDistribution>, CalibrationError> {
    support.par_iter().enumerate().map(|(j, p)| calibrate_support_point(&p.features, base, config, j)).collect()
}

/// Calibrates every support point and appends `n_samples` draws for each.
///
/// Output is independent of the rayon schedule: each support point samples
/// from its own stream keyed by `(config.seed, task_seed, index)`.
pub fn augment_task(
    support: &[LabeledPoint],
    base: &BaseStats,
    config: &GdcConfig,
    task_seed: u64,
) -> Result<AugmentedSet, SamplingError> {
    let dim = base.dim();
    if let Some(p) = support.iter().find(|p| p.features.len() != dim) {
        return Err(CalibrationError::DimensionMismatch { expected: dim, actual: p.features.len() }.into());
    }
    let mut set = AugmentedSet::from_support(dim, support);
    if config.n_samples == 0 {
        return Ok(set);
    }
    let draws: Vec<DMatrix<f64>> = support
        .par_iter()
        .enumerate()
        .map(|(j, p)| {
            let cal = calibrate_support_point(&p.features, base, config, j)?;
            let mut normals = NormalStream::new(rng::stream(&support_stream_key(config.seed, task_seed, j)));
            sample_mvn(&cal.mu_prime, &cal.sigma_prime_s, config.n_samples, &mut normals)
        })
        .collect::<Result<_, _>>()?;
    for (p, x) in support.iter().zip(&draws) {
        for row in x.row_iter() {
            let features: Vec<f64> = row.iter().copied().collect();
            set.push(p.class_id, &features, Origin::Sampled);
        }
    }
    Ok(set)
}
