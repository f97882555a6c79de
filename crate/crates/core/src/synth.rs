//! Synthetic Gaussian worlds with known class distributions.
//!
//! Base classes get random means and covariances. Every validation and novel
//! class is attached to a distinct parent base class: it shares the parent's
//! covariance and its mean is the parent mean shifted by
//! `novel_offset_scale · L u`, where `L Lᵀ` is the parent covariance and `u`
//! is a uniformly random unit vector. The Mahalanobis distance between a
//! held-out mean and its parent mean is therefore exactly
//! `novel_offset_scale`. Small offsets make held-out classes look like their
//! parents, which is the situation calibration exploits.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassId, DatasetError, FeatureDataset, SplitManifest};
use crate::rng::{self, unit_f64, NormalStream};
use crate::sampling::{factor_covariance, sample_mvn, SamplingError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("second covariance is singular")]
    SingularCovariance,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceFamily {
    /// `s² I`, one random scale per class.
    Spherical,
    /// Independent random variance per coordinate.
    Diagonal,
    /// `A Aᵀ / d + 0.1 I` with standard-normal `A`.
    RandomSpd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dim: usize,
    pub num_base: usize,
    pub num_validation: usize,
    pub num_novel: usize,
    pub points_per_class: usize,
    pub novel_offset_scale: f64,
    pub covariance_family: CovarianceFamily,
    pub seed: u64,
    /// Per-coordinate standard deviation of the base means.
    pub mean_spread: f64,
    /// Typical per-coordinate standard deviation inside a class.
    pub class_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            num_base: 20,
            num_validation: 5,
            num_novel: 5,
            points_per_class: 200,
            novel_offset_scale: 0.5,
            covariance_family: CovarianceFamily::Spherical,
            seed: 0,
            mean_spread: 0.15,
            class_scale: 0.2,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.dim == 0 || self.num_base == 0 || self.num_validation == 0 || self.num_novel == 0 {
            return bad("dimension and every class count must be positive");
        }
        if self.points_per_class == 0 {
            return bad("points_per_class must be positive");
        }
        if !(self.novel_offset_scale >= 0.0) {
            return bad("novel_offset_scale must be non-negative");
        }
        if !(self.mean_spread >= 0.0) || !(self.class_scale > 0.0) {
            return bad("mean_spread must be non-negative and class_scale positive");
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_base + self.num_validation + self.num_novel
    }
}

/// True distribution of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl GaussianParams {
    pub fn from_nalgebra(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Self {
        Self {
            mu: mu.iter().copied().collect(),
            sigma: sigma.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn mu_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let d = self.mu.len();
        DMatrix::from_fn(d, d, |i, j| self.sigma[i][j])
    }
}

/// Generated world: the dataset, its true class distributions and the
/// parent base class of every held-out class.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub dataset: FeatureDataset,
    pub ground_truth: BTreeMap<ClassId, GaussianParams>,
    pub parents: BTreeMap<ClassId, ClassId>,
}

fn uniform(r: &mut impl rand::RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(r)
}

fn base_covariance(
    family: CovarianceFamily,
    dim: usize,
    scale: f64,
    normals: &mut NormalStream<rand_chacha::ChaCha8Rng>,
    r: &mut rand_chacha::ChaCha8Rng,
) -> DMatrix<f64> {
    let s2 = scale * scale;
    match family {
        CovarianceFamily::Spherical => DMatrix::identity(dim, dim) * (s2 * uniform(r, 0.5, 1.5)),
        CovarianceFamily::Diagonal => DMatrix::from_diagonal(&DVector::from_fn(dim, |_, _| s2 * uniform(r, 0.5, 1.5))),
        CovarianceFamily::RandomSpd => {
            let mut a = DMatrix::zeros(dim, dim);
            normals.fill(a.as_mut_slice());
            let mut c = &a * a.transpose() / dim as f64;
            for i in 0..dim {
                c[(i, i)] += 0.1;
            }
            // scale so the mean variance is about s2
            let mean_var = c.trace() / dim as f64;
            let c = c * (s2 / mean_var);
            (&c + c.transpose()) * 0.5
        }
    }
}

/// Generates the world described by `spec`; deterministic in `spec.seed`.
///
/// Class ids are `0..num_base` for base classes, then validation, then novel.
pub fn generate(spec: &SynthSpec) -> Result<SyntheticWorld, SynthError> {
    spec.validate()?;
    let d = spec.dim;
    let mut r = rng::stream(&[spec.seed, 0x5717]);
    let mut normals = NormalStream::new(rng::stream(&[spec.seed, 0x6a05]));

    let mut means: Vec<DVector<f64>> = Vec::with_capacity(spec.num_classes());
    let mut covs: Vec<DMatrix<f64>> = Vec::with_capacity(spec.num_classes());
    for _ in 0..spec.num_base {
        let mut mu = DVector::zeros(d);
        normals.fill(mu.as_mut_slice());
        means.push(mu * spec.mean_spread);
        covs.push(base_covariance(spec.covariance_family, d, spec.class_scale, &mut normals, &mut r));
    }

    let mut parents = BTreeMap::new();
    let mut next_id = spec.num_base;
    for count in [spec.num_validation, spec.num_novel] {
        // distinct parents within a split while base classes last
        let mut picks: Vec<usize> = Vec::with_capacity(count);
        while picks.len() < count {
            let take = (count - picks.len()).min(spec.num_base);
            picks.extend(index::sample(&mut r, spec.num_base, take).iter());
        }
        for parent in picks {
            let l = factor_covariance(&covs[parent])?;
            let mut z = DVector::zeros(d);
            normals.fill(z.as_mut_slice());
            let u = z.normalize();
            let mu = &means[parent] + l * u * spec.novel_offset_scale;
            means.push(mu);
            covs.push(covs[parent].clone());
            parents.insert(next_id as ClassId, parent as ClassId);
            next_id += 1;
        }
    }

    let mut labels = Vec::with_capacity(spec.num_classes() * spec.points_per_class);
    let mut values = Vec::with_capacity(labels.capacity() * d);
    let mut ground_truth = BTreeMap::new();
    for (c, (mu, sigma)) in means.iter().zip(&covs).enumerate() {
        let mut class_normals = NormalStream::new(rng::stream(&[spec.seed, 0xc1a55, c as u64]));
        let x = sample_mvn(mu, sigma, spec.points_per_class, &mut class_normals)?;
        for row in x.row_iter() {
            labels.push(c as ClassId);
            values.extend(row.iter().map(|&v| v as f32));
        }
        ground_truth.insert(c as ClassId, GaussianParams::from_nalgebra(mu, sigma));
    }

    let nb = spec.num_base as ClassId;
    let nv = spec.num_validation as ClassId;
    let nn = spec.num_novel as ClassId;
    let manifest = SplitManifest::new(0..nb, nb..nb + nv, nb + nv..nb + nv + nn);
    let dataset = FeatureDataset::new(d, labels, values, manifest)?;
    Ok(SyntheticWorld { dataset, ground_truth, parents })
}

/// `KL(N(mu1, sigma1) ‖ N(mu2, sigma2))` in closed form.
///
/// Returns `+∞` when `sigma1` is singular.
pub fn kl_gaussian(
    mu1: &DVector<f64>,
    sigma1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    sigma2: &DMatrix<f64>,
) -> Result<f64, SynthError> {
    let d = mu1.len();
    for m in [sigma1, sigma2] {
        if m.nrows() != d || m.ncols() != d {
            return Err(SynthError::DimensionMismatch { expected: d, actual: m.nrows() });
        }
    }
    if mu2.len() != d {
        return Err(SynthError::DimensionMismatch { expected: d, actual: mu2.len() });
    }
    let c2 = sigma2.clone().cholesky().ok_or(SynthError::SingularCovariance)?;
    let logdet2 = 2.0 * c2.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let Some(c1) = sigma1.clone().cholesky() else {
        return Ok(f64::INFINITY);
    };
    let logdet1 = 2.0 * c1.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace = c2.solve(sigma1).trace();
    let diff = mu2 - mu1;
    let quad = diff.dot(&c2.solve(&diff));
    Ok(0.5 * (trace + quad - d as f64 + logdet2 - logdet1))
}
