//! Per-class moments, support-to-class distances and nearest-class selection.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassId, Split};
use crate::transforms::TransformedDataset;

pub const STATS_MAGIC: [u8; 4] = *b"GDCS";
pub const STATS_VERSION: u32 = 1;

/// Relative ridge added to a singular covariance before a Mahalanobis solve.
pub const MAHALANOBIS_RIDGE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("covariance of class {class_id} is singular even after ridge repair")]
    SingularCovariance { class_id: ClassId },
    #[error("k = {k} is out of range for {available} base classes")]
    KOutOfRange { k: usize, available: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("delta must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("no base classes")]
    NoClasses,
    #[error("stats cache: {0}")]
    Cache(String),
}

/// Mean and unbiased covariance of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    pub class_id: ClassId,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub count: usize,
}

impl ClassStats {
    /// Two-pass mean/covariance over `rows`; divisor `count - 1`, zero for a single point.
    pub fn from_rows<'a, I>(class_id: ClassId, dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
        I::IntoIter: Clone,
    {
        let rows = rows.into_iter();
        let mut mu = DVector::zeros(dim);
        let mut count = 0usize;
        for r in rows.clone() {
            for (m, v) in mu.iter_mut().zip(r) {
                *m += v;
            }
            count += 1;
        }
        assert!(count > 0, "class {class_id} has no points");
        mu /= count as f64;

        let mut sigma = DMatrix::zeros(dim, dim);
        if count > 1 {
            let mut centered = DMatrix::zeros(count, dim);
            for (i, r) in rows.enumerate() {
                for j in 0..dim {
                    centered[(i, j)] = r[j] - mu[j];
                }
            }
            sigma = centered.tr_mul(&centered) / (count - 1) as f64;
            // exact symmetry regardless of the gemm kernel
            for i in 0..dim {
                for j in 0..i {
                    let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
                    sigma[(i, j)] = v;
                    sigma[(j, i)] = v;
                }
            }
        }
        Self { class_id, mu, sigma, count }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Moments of every class in `split`, ascending class id.
pub fn compute_split_stats(data: &TransformedDataset, split: Split) -> Vec<ClassStats> {
    use rayon::prelude::*;
    let partition = data.partition(split);
    let classes: Vec<(ClassId, &[usize])> = partition.iter().collect();
    classes
        .par_iter()
        .map(|&(c, idx)| ClassStats::from_rows(c, data.dim(), idx.iter().map(|&i| data.point(i))))
        .collect()
}

pub fn compute_base_stats(data: &TransformedDataset) -> Vec<ClassStats> {
    compute_split_stats(data, Split::Base)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    SquaredEuclidean,
    MahalanobisLog,
    SquaredDelta {
        delta: f64,
    },
}

impl DistanceMetric {
    pub fn validate(&self) -> Result<(), StatsError> {
        match *self {
            DistanceMetric::SquaredDelta { delta } if !(delta > 0.0) => Err(StatsError::InvalidDelta(delta)),
            _ => Ok(()),
        }
    }
}

/// Cholesky factor and log-determinant of a (possibly ridge-repaired) covariance.
#[derive(Clone, Debug)]
pub struct MahalanobisFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_det: f64,
}

impl MahalanobisFactor {
    pub fn new(stats: &ClassStats) -> Result<Self, StatsError> {
        let chol = match stats.sigma.clone().cholesky() {
            Some(c) => c,
            None => {
                let d = stats.dim();
                let mean_diag = stats.sigma.diagonal().sum() / d as f64;
                let ridge = MAHALANOBIS_RIDGE * mean_diag;
                let mut repaired = stats.sigma.clone();
                for i in 0..d {
                    repaired[(i, i)] += ridge;
                }
                repaired.cholesky().ok_or(StatsError::SingularCovariance { class_id: stats.class_id })?
            }
        };
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(StatsError::SingularCovariance { class_id: stats.class_id });
        }
        Ok(Self { chol, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `ln|Σ| + (x-μ)ᵀ Σ⁻¹ (x-μ)` given `diff = x - μ`.
    pub fn distance(&self, diff: &DVector<f64>) -> f64 {
        let mut z = diff.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut z);
        self.log_det + z.norm_squared()
    }
}

fn check_dim(x: &[f64], stats: &ClassStats) -> Result<(), StatsError> {
    if x.len() != stats.dim() {
        return Err(StatsError::DimensionMismatch { expected: stats.dim(), actual: x.len() });
    }
    Ok(())
}

fn squared_delta(x: &[f64], mu: &DVector<f64>, delta: f64) -> f64 {
    x.iter().zip(mu.iter()).map(|(a, m)| (a - delta * m).powi(2)).sum()
}

pub fn distance(x_tilde: &[f64], stats: &ClassStats, metric: DistanceMetric) -> Result<f64, StatsError> {
    check_dim(x_tilde, stats)?;
    metric.validate()?;
    match metric {
        DistanceMetric::SquaredEuclidean => Ok(squared_delta(x_tilde, &stats.mu, 1.0)),
        DistanceMetric::SquaredDelta { delta } => Ok(squared_delta(x_tilde, &stats.mu, delta)),
        DistanceMetric::MahalanobisLog => {
            let factor = MahalanobisFactor::new(stats)?;
            let diff = DVector::from_iterator(stats.dim(), x_tilde.iter().zip(stats.mu.iter()).map(|(a, m)| a - m));
            Ok(factor.distance(&diff))
        }
    }
}

/// One selected base class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Position in the stats list the selection was made from.
    pub index: usize,
    pub class_id: ClassId,
    pub distance: f64,
}

fn select_k(mut all: Vec<Neighbor>, k: usize) -> Vec<Neighbor> {
    all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.class_id.cmp(&b.class_id)));
    all.truncate(k);
    all
}

/// The `k` nearest classes, ascending distance, ties by ascending class id.
pub fn top_k(
    x_tilde: &[f64],
    all_stats: &[ClassStats],
    k: usize,
    metric: DistanceMetric,
) -> Result<Vec<Neighbor>, StatsError> {
    if k == 0 || k > all_stats.len() {
        return Err(StatsError::KOutOfRange { k, available: all_stats.len() });
    }
    let all = all_stats
        .iter()
        .enumerate()
        .map(|(index, s)| Ok(Neighbor { index, class_id: s.class_id, distance: distance(x_tilde, s, metric)? }))
        .collect::<Result<Vec<_>, StatsError>>()?;
    Ok(select_k(all, k))
}

/// Base-class statistics with lazily factored covariances.
///
/// Shared read-only across tasks; the Mahalanobis factors are computed on
/// first use.
#[derive(Debug)]
pub struct BaseStats {
    classes: Vec<ClassStats>,
    factors: OnceLock<Result<Vec<MahalanobisFactor>, StatsError>>,
}

impl BaseStats {
    pub fn new(classes: Vec<ClassStats>) -> Result<Self, StatsError> {
        let Some(first) = classes.first() else {
            return Err(StatsError::NoClasses);
        };
        let dim = first.dim();
        if let Some(bad) = classes.iter().find(|c| c.dim() != dim) {
            return Err(StatsError::DimensionMismatch { expected: dim, actual: bad.dim() });
        }
        Ok(Self { classes, factors: OnceLock::new() })
    }

    pub fn from_dataset(data: &TransformedDataset) -> Result<Self, StatsError> {
        Self::new(compute_base_stats(data))
    }

    pub fn classes(&self) -> &[ClassStats] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.classes[0].dim()
    }

    fn factors(&self) -> Result<&[MahalanobisFactor], StatsError> {
        self.factors
            .get_or_init(|| self.classes.iter().map(MahalanobisFactor::new).collect())
            .as_deref()
            .map_err(Clone::clone)
    }

    pub fn distances(&self, x_tilde: &[f64], metric: DistanceMetric) -> Result<Vec<f64>, StatsError> {
        metric.validate()?;
        if x_tilde.len() != self.dim() {
            return Err(StatsError::DimensionMismatch { expected: self.dim(), actual: x_tilde.len() });
        }
        match metric {
            DistanceMetric::SquaredEuclidean => {
                Ok(self.classes.iter().map(|s| squared_delta(x_tilde, &s.mu, 1.0)).collect())
            }
            DistanceMetric::SquaredDelta { delta } => {
                Ok(self.classes.iter().map(|s| squared_delta(x_tilde, &s.mu, delta)).collect())
            }
            DistanceMetric::MahalanobisLog => {
                let factors = self.factors()?;
                Ok(self
                    .classes
                    .iter()
                    .zip(factors)
                    .map(|(s, f)| {
                        let diff = DVector::from_iterator(s.dim(), x_tilde.iter().zip(s.mu.iter()).map(|(a, m)| a - m));
                        f.distance(&diff)
                    })
                    .collect())
            }
        }
    }

    pub fn top_k(&self, x_tilde: &[f64], k: usize, metric: DistanceMetric) -> Result<Vec<Neighbor>, StatsError> {
        if k == 0 || k > self.classes.len() {
            return Err(StatsError::KOutOfRange { k, available: self.classes.len() });
        }
        let d = self.distances(x_tilde, metric)?;
        let all = self
            .classes
            .iter()
            .zip(d)
            .enumerate()
            .map(|(index, (s, distance))| Neighbor { index, class_id: s.class_id, distance })
            .collect();
        Ok(select_k(all, k))
    }
}

/// Writes the `GDCS` stats cache: header as in feature files, then per class
/// `class_id u32, count u32, mu d x f64, lower triangle of sigma (row-major) x f64`.
pub fn write_stats_cache<W: Write>(w: &mut W, stats: &[ClassStats]) -> io::Result<()> {
    let dim = stats.first().map_or(0, ClassStats::dim);
    w.write_all(&STATS_MAGIC)?;
    w.write_all(&STATS_VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(stats.len() as u64).to_le_bytes())?;
    for s in stats {
        w.write_all(&s.class_id.to_le_bytes())?;
        w.write_all(&(s.count as u32).to_le_bytes())?;
        for v in s.mu.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for i in 0..dim {
            for j in 0..=i {
                w.write_all(&s.sigma[(i, j)].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_stats_cache<R: Read>(r: &mut R) -> Result<Vec<ClassStats>, StatsError> {
    fn take<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N], StatsError> {
        let mut b = [0u8; N];
        r.read_exact(&mut b).map_err(|e| StatsError::Cache(format!("reading {what}: {e}")))?;
        Ok(b)
    }
    let magic: [u8; 4] = take(r, "magic")?;
    if magic != STATS_MAGIC {
        return Err(StatsError::Cache(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(take(r, "version")?);
    if version != STATS_VERSION {
        return Err(StatsError::Cache(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(take(r, "dim")?) as usize;
    let n = u64::from_le_bytes(take(r, "class count")?);
    let mut out = Vec::new();
    for _ in 0..n {
        let class_id = u32::from_le_bytes(take(r, "class id")?);
        let count = u32::from_le_bytes(take(r, "count")?) as usize;
        let mut mu = DVector::zeros(dim);
        for v in mu.iter_mut() {
            *v = f64::from_le_bytes(take(r, "mean")?);
        }
        let mut sigma = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..=i {
                let v = f64::from_le_bytes(take(r, "covariance")?);
                sigma[(i, j)] = v;
                sigma[(j, i)] = v;
            }
        }
        out.push(ClassStats { class_id, mu, sigma, count });
    }
    Ok(out)
}

pub fn save_stats_cache(path: &Path, stats: &[ClassStats]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stats_cache(&mut w, stats)?;
    w.flush()
}

pub fn load_stats_cache(path: &Path) -> Result<Vec<ClassStats>, StatsError> {
    let f = File::open(path).map_err(|e| StatsError::Cache(format!("{}: {e}", path.display())))?;
    read_stats_cache(&mut BufReader::new(f))
}
