//! Brute-force reference implementations shared by the integration tests.
//!
//! Everything here is written with plain loops over `Vec`s and avoids the
//! library's numerical code, so agreement between the two is evidence
//! rather than tautology. Task sampling and the seeded streams are reused
//! from the library where a test needs identical tasks or identical draws.
#![allow(dead_code, clippy::needless_range_loop)]

use gdc::dataset::{ClassId, FeatureDataset, LabeledPoint, Split};
use gdc::episodes::Task;
use gdc::rng::NormalStream;
use gdc::synth::{generate, SynthSpec, SyntheticWorld};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- protocol shared by the synthetic end-to-end checks and their oracle run

pub const WORLD_SEED: u64 = 0;
pub const VALIDATION_SEED: u64 = 101;
pub const NOVEL_SEED: u64 = 202;
pub const TUNE_TASKS: usize = 100;
pub const EVAL_TASKS: usize = 500;
pub const N_SAMPLES: usize = 200;
pub const M_GRID: [f64; 3] = [0.5, 1.0, 2.0];
pub const K_GRID: [usize; 3] = [2, 4, 8];
pub const ALPHA1_GRID: [f64; 2] = [0.0, 1.0];
/// Tasks whose support points feed the KL comparison.
pub const KL_TASKS: usize = 100;

pub fn acceptance_world() -> SyntheticWorld {
    generate(&SynthSpec {
        dim: 16,
        num_base: 20,
        num_validation: 5,
        num_novel: 5,
        points_per_class: 200,
        novel_offset_scale: 0.5,
        covariance_family: gdc::synth::CovarianceFamily::Spherical,
        seed: WORLD_SEED,
        ..SynthSpec::default()
    })
    .expect("acceptance world")
}

// ---- transforms

pub fn yeo_johnson(x: f64, b: f64) -> f64 {
    if x >= 0.0 {
        if b == 0.0 {
            (x + 1.0).ln()
        } else {
            ((x + 1.0).powf(b) - 1.0) / b
        }
    } else if b == 2.0 {
        -(1.0 - x).ln()
    } else {
        -((1.0 - x).powf(2.0 - b) - 1.0) / (2.0 - b)
    }
}

pub fn tukey(x: f64, b: f64) -> f64 {
    if b == 0.0 {
        (x + 1e-12).ln()
    } else {
        x.powf(b)
    }
}

// ---- moments, distances, calibration

#[derive(Clone, Debug)]
pub struct RefClass {
    pub id: ClassId,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

/// Two-pass mean and unbiased covariance; zero covariance for one row.
pub fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mu = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mu[j] += r[j];
        }
    }
    for v in mu.iter_mut() {
        *v /= n as f64;
    }
    let mut sigma = vec![vec![0.0; d]; d];
    if n > 1 {
        for r in rows {
            for i in 0..d {
                for j in 0..d {
                    sigma[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]);
                }
            }
        }
        for row in sigma.iter_mut() {
            for v in row.iter_mut() {
                *v /= (n - 1) as f64;
            }
        }
    }
    (mu, sigma)
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest classes by full sort on (distance, class id).
pub fn top_k(x: &[f64], classes: &[RefClass], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = classes.iter().enumerate().map(|(i, c)| (i, sq_dist(x, &c.mu))).collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(classes[a.0].id.cmp(&classes[b.0].id)));
    all.truncate(k);
    all
}

pub fn weight(d: f64, m: f64) -> f64 {
    1.0 / (1.0 + d.powf(m))
}

/// Calibrated mean and shrunk weighted-average covariance under squared Euclidean distance.
pub fn calibrate(
    x: &[f64],
    classes: &[RefClass],
    k: usize,
    m: f64,
    alpha1: f64,
    alpha2: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = x.len();
    let near = top_k(x, classes, k);
    let w: Vec<f64> = near.iter().map(|&(_, dist)| weight(dist, m)).collect();
    let wsum: f64 = w.iter().sum();
    let mut mu = x.to_vec();
    let mut sigma = vec![vec![0.0; d]; d];
    for (&(i, _), &wi) in near.iter().zip(&w) {
        for a in 0..d {
            mu[a] += wi * classes[i].mu[a];
            for b in 0..d {
                sigma[a][b] += wi * classes[i].sigma[a][b];
            }
        }
    }
    for a in 0..d {
        mu[a] /= 1.0 + wsum;
        for b in 0..d {
            sigma[a][b] /= wsum;
        }
    }
    (mu, shrink(&sigma, alpha1, alpha2))
}

pub fn shrink(s: &[Vec<f64>], alpha1: f64, alpha2: f64) -> Vec<Vec<f64>> {
    let d = s.len();
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i == j {
                diag += s[i][j];
            } else {
                off += s[i][j];
            }
        }
    }
    let s1 = diag / d as f64;
    let s2 = if d > 1 { off / (d * d - d) as f64 } else { 0.0 };
    let mut out = s.to_vec();
    for i in 0..d {
        for j in 0..d {
            out[i][j] += if i == j { alpha1 * s1 } else { alpha2 * s2 };
        }
    }
    out
}

// ---- linear algebra

pub fn to_matrix(a: &[Vec<f64>]) -> DMatrix<f64> {
    let d = a.len();
    DMatrix::from_fn(d, d, |i, j| a[i][j])
}

pub fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Textbook Cholesky–Banachiewicz; `None` unless positive definite.
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if v <= 0.0 {
                    return None;
                }
                l[i][j] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn solve_lower(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    y
}

/// Closed-form Gaussian KL through a hand-rolled Cholesky of `s2` and `s1`.
pub fn kl(mu1: &[f64], s1: &[Vec<f64>], mu2: &[f64], s2: &[Vec<f64>]) -> f64 {
    let d = mu1.len();
    let l2 = cholesky(s2).expect("s2 positive definite");
    let l1 = cholesky(s1).expect("s1 positive definite");
    let logdet = |l: &[Vec<f64>]| 2.0 * (0..d).map(|i| l[i][i].ln()).sum::<f64>();
    // tr(S2⁻¹ S1) = ‖L2⁻¹ L1‖_F²
    let mut trace = 0.0;
    for j in 0..d {
        let col: Vec<f64> = (0..d).map(|i| l1[i][j]).collect();
        trace += solve_lower(&l2, &col).iter().map(|v| v * v).sum::<f64>();
    }
    let diff: Vec<f64> = (0..d).map(|i| mu2[i] - mu1[i]).collect();
    let quad: f64 = solve_lower(&l2, &diff).iter().map(|v| v * v).sum();
    0.5 * (trace + quad - d as f64 + logdet(&l2) - logdet(&l1))
}

// ---- sampling

/// Marsaglia polar method.
pub fn polar_normal(r: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = r.random::<f64>() * 2.0 - 1.0;
        let v: f64 = r.random::<f64>() * 2.0 - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// `mu + V Λ^½ z`: an eigendecomposition route independent of the library's Cholesky path.
pub fn sample_eigen(mu: &[f64], sigma: &[Vec<f64>], n: usize, r: &mut impl Rng) -> Vec<Vec<f64>> {
    let d = mu.len();
    let eig = SymmetricEigen::new(to_matrix(sigma));
    let root = DVector::from_iterator(d, eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
    let a = &eig.eigenvectors * DMatrix::from_diagonal(&root);
    (0..n)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| polar_normal(r));
            let x = &a * z;
            (0..d).map(|i| mu[i] + x[i]).collect()
        })
        .collect()
}

/// `mu + L z` with the library's documented normal stream and a hand-rolled
/// Cholesky; reproduces the library draws up to rounding.
pub fn sample_canonical(mu: &[f64], sigma: &[Vec<f64>], n: usize, key: &[u64]) -> Vec<Vec<f64>> {
    let d = mu.len();
    let l = cholesky(sigma).expect("positive definite");
    let mut normals = NormalStream::new(gdc::rng::stream(key));
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| normals.next_normal()).collect();
            (0..d).map(|i| mu[i] + (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>()).collect()
        })
        .collect()
}

pub fn sample_moments_ok(rows: &[Vec<f64>], mu: &[f64], sigma: &[Vec<f64>], z: f64) -> Result<(), String> {
    let n = rows.len() as f64;
    let (m, s) = moments(rows);
    let d = mu.len();
    for i in 0..d {
        let se = (sigma[i][i] / n).sqrt();
        if (m[i] - mu[i]).abs() > z * se {
            return Err(format!("mean[{i}] = {} vs {} (se {se})", m[i], mu[i]));
        }
        for j in 0..d {
            let se = ((sigma[i][i] * sigma[j][j] + sigma[i][j] * sigma[i][j]) / n).sqrt();
            if (s[i][j] - sigma[i][j]).abs() > z * se {
                return Err(format!("cov[{i}][{j}] = {} vs {} (se {se})", s[i][j], sigma[i][j]));
            }
        }
    }
    Ok(())
}

// ---- classifier

pub struct RefModel {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl RefModel {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (c, (w, b)) in self.w.iter().zip(&self.b).enumerate() {
            let v = b + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            if v > best_v {
                best = c;
                best_v = v;
            }
        }
        best
    }
}

/// Softmax regression by mini-batch SGD from zero, mean cross-entropy.
/// `shuffle(epoch, order)` reorders the indices at the start of each epoch.
pub fn logreg(
    xs: &[Vec<f64>],
    ys: &[usize],
    classes: usize,
    epochs: usize,
    lr: f64,
    batch: usize,
    mut shuffle: impl FnMut(&mut Vec<usize>),
) -> RefModel {
    let d = xs[0].len();
    let mut model = RefModel { w: vec![vec![0.0; d]; classes], b: vec![0.0; classes] };
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for _ in 0..epochs {
        shuffle(&mut order);
        for chunk in order.chunks(batch) {
            let mut gw = vec![vec![0.0; d]; classes];
            let mut gb = vec![0.0; classes];
            for &i in chunk {
                let logits: Vec<f64> =
                    (0..classes).map(|c| model.b[c] + (0..d).map(|j| model.w[c][j] * xs[i][j]).sum::<f64>()).collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                for c in 0..classes {
                    let p = (logits[c] - max).exp() / z - if c == ys[i] { 1.0 } else { 0.0 };
                    for j in 0..d {
                        gw[c][j] += p * xs[i][j];
                    }
                    gb[c] += p;
                }
            }
            let s = lr / chunk.len() as f64;
            for c in 0..classes {
                for j in 0..d {
                    model.w[c][j] -= s * gw[c][j];
                }
                model.b[c] -= s * gb[c];
            }
        }
    }
    model
}

// ---- whole pipeline

/// Base statistics of a dataset after Yeo-Johnson with `beta`.
pub fn base_classes(ds: &FeatureDataset, beta: f64) -> Vec<RefClass> {
    let part = ds.partition(Split::Base);
    part.iter()
        .map(|(id, rows)| {
            let pts: Vec<Vec<f64>> =
                rows.iter().map(|&r| ds.point(r).iter().map(|&v| yeo_johnson(f64::from(v), beta)).collect()).collect();
            let (mu, sigma) = moments(&pts);
            RefClass { id, mu, sigma }
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct RefConfig {
    pub beta: f64,
    pub m: f64,
    pub k: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub n_samples: usize,
}

fn transform(p: &LabeledPoint, beta: f64) -> Vec<f64> {
    p.features.iter().map(|&v| yeo_johnson(v, beta)).collect()
}

/// Accuracy of the full pipeline on one task with independent randomness: eigen
/// sampler and a polar-normal / ChaCha shuffle unrelated to the library streams.
pub fn episode_accuracy(task: &Task, base: &[RefClass], cfg: &RefConfig) -> f64 {
    let mut class_ids: Vec<ClassId> = task.support.iter().map(|p| p.class_id).collect();
    class_ids.sort_unstable();
    class_ids.dedup();
    let label = |c: ClassId| class_ids.binary_search(&c).unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in &task.support {
        xs.push(transform(p, cfg.beta));
        ys.push(label(p.class_id));
    }
    let mut r = ChaCha8Rng::seed_from_u64(task.task_seed ^ 0x9e37_79b9_7f4a_7c15);
    if cfg.n_samples > 0 {
        for p in &task.support {
            let x = transform(p, cfg.beta);
            let (mu, sigma) = calibrate(&x, base, cfg.k, cfg.m, cfg.alpha1, cfg.alpha2);
            for s in sample_eigen(&mu, &sigma, cfg.n_samples, &mut r) {
                xs.push(s);
                ys.push(label(p.class_id));
            }
        }
    }
    let model = logreg(&xs, &ys, class_ids.len(), 200, 0.08, 1024, |o| o.shuffle(&mut r));
    let correct = task.query.iter().filter(|q| model.predict(&transform(q, cfg.beta)) == label(q.class_id)).count();
    correct as f64 / task.query.len() as f64
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
