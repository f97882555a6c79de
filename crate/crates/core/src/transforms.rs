//! Gaussianizing power transforms.
//!
//! Tukey's ladder of powers is used when every feature value in the dataset
//! is non-negative; otherwise the four-branch Yeo-Johnson transform, which is
//! defined on the whole real line. A single exponent `beta` is shared by all
//! features.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassId, FeatureDataset, Partition, Split, SplitManifest};

/// Offset applied to exact zeros under the `beta = 0` log branch of Tukey.
pub const TUKEY_LOG_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("tukey transform requires non-negative input, found {value} at index {index}")]
    NegativeInput { index: usize, value: f64 },
    #[error("cannot select a transform for an empty dataset")]
    EmptyDataset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Tukey,
    YeoJohnson,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformChoice {
    pub kind: TransformKind,
    pub beta: f64,
}

impl TransformChoice {
    pub fn new(kind: TransformKind, beta: f64) -> Self {
        Self { kind, beta }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, TransformError> {
        match self.kind {
            TransformKind::Tukey => tukey(x, self.beta),
            TransformKind::YeoJohnson => Ok(yeo_johnson(x, self.beta)),
        }
    }

    /// In-place variant of [`apply`](Self::apply); `x` is untouched on error.
    pub fn apply_in_place(&self, x: &mut [f64]) -> Result<(), TransformError> {
        match self.kind {
            TransformKind::Tukey => {
                check_non_negative(x)?;
                for v in x.iter_mut() {
                    *v = tukey_scalar(*v, self.beta);
                }
            }
            TransformKind::YeoJohnson => {
                for v in x.iter_mut() {
                    *v = yeo_johnson_scalar(*v, self.beta);
                }
            }
        }
        Ok(())
    }
}

/// Tukey iff no value in any split is negative.
pub fn select_transform(dataset: &FeatureDataset) -> Result<TransformKind, TransformError> {
    if dataset.is_empty() {
        return Err(TransformError::EmptyDataset);
    }
    if dataset.values().iter().all(|&v| v >= 0.0) {
        Ok(TransformKind::Tukey)
    } else {
        Ok(TransformKind::YeoJohnson)
    }
}

fn check_non_negative(x: &[f64]) -> Result<(), TransformError> {
    match x.iter().position(|v| !(*v >= 0.0)) {
        Some(index) => Err(TransformError::NegativeInput { index, value: x[index] }),
        None => Ok(()),
    }
}

/// Caller guarantees `x >= 0`.
#[inline]
pub fn tukey_scalar(x: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        if x == 0.0 {
            TUKEY_LOG_EPS.ln()
        } else {
            x.ln()
        }
    } else {
        x.powf(beta)
    }
}

pub fn tukey(x: &[f64], beta: f64) -> Result<Vec<f64>, TransformError> {
    check_non_negative(x)?;
    Ok(x.iter().map(|&v| tukey_scalar(v, beta)).collect())
}

#[inline]
pub fn yeo_johnson_scalar(x: f64, beta: f64) -> f64 {
    if x >= 0.0 {
        if beta == 0.0 {
            x.ln_1p()
        } else {
            ((x + 1.0).powf(beta) - 1.0) / beta
        }
    } else if beta == 2.0 {
        -(-x).ln_1p()
    } else {
        let p = 2.0 - beta;
        -((1.0 - x).powf(p) - 1.0) / p
    }
}

pub fn yeo_johnson(x: &[f64], beta: f64) -> Vec<f64> {
    x.iter().map(|&v| yeo_johnson_scalar(v, beta)).collect()
}

/// Feature dataset after the Gaussianizing transform, in f64.
#[derive(Clone, Debug)]
pub struct TransformedDataset {
    dim: usize,
    labels: Vec<ClassId>,
    values: Vec<f64>,
    manifest: SplitManifest,
    choice: TransformChoice,
}

impl TransformedDataset {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    pub fn choice(&self) -> TransformChoice {
        self.choice
    }

    pub fn manifest(&self) -> &SplitManifest {
        &self.manifest
    }

    pub fn partition(&self, split: Split) -> Partition {
        Partition::from_labels(&self.labels, &self.manifest, split)
    }
}

pub fn apply_transform(
    dataset: &FeatureDataset,
    choice: TransformChoice,
) -> Result<TransformedDataset, TransformError> {
    let mut values: Vec<f64> = dataset.values().iter().map(|&v| f64::from(v)).collect();
    choice.apply_in_place(&mut values)?;
    Ok(TransformedDataset {
        dim: dataset.dim(),
        labels: dataset.labels().to_vec(),
        values,
        manifest: dataset.manifest().clone(),
        choice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // branch-by-branch reference, written straight from the definition
    fn yj_reference(x: f64, beta: f64) -> f64 {
        if x >= 0.0 && beta != 0.0 {
            ((x + 1.0).powf(beta) - 1.0) / beta
        } else if x >= 0.0 {
            (x + 1.0).ln()
        } else if beta != 2.0 {
            -((-x + 1.0).powf(2.0 - beta) - 1.0) / (2.0 - beta)
        } else {
            -(-x + 1.0).ln()
        }
    }

    #[test]
    fn tukey_fixtures() {
        assert_eq!(tukey(&[4.0, 9.0], 0.5).unwrap(), vec![2.0, 3.0]);
        assert_eq!(tukey(&[1.0], 0.0).unwrap(), vec![0.0]);
        assert_eq!(tukey(&[0.0, 2.5], 1.0).unwrap(), vec![0.0, 2.5]);
        assert_eq!(tukey(&[0.0], 0.0).unwrap(), vec![(1e-12f64).ln()]);
        assert_eq!(tukey(&[0.0], 2.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn tukey_rejects_negative() {
        let err = tukey(&[1.0, 0.0, -0.5], 0.5).unwrap_err();
        assert_eq!(err, TransformError::NegativeInput { index: 2, value: -0.5 });
        assert!(tukey(&[f64::NAN], 0.5).is_err());
    }

    #[test]
    fn yeo_johnson_fixtures() {
        for beta in [0.0, 0.5, 1.0, 2.0, 3.7] {
            assert_eq!(yeo_johnson(&[0.0], beta), vec![0.0]);
        }
        assert!((yeo_johnson_scalar(3.0, 0.0) - 4f64.ln()).abs() < 1e-12);
        assert!((yeo_johnson_scalar(-1.0, 2.0) + 2f64.ln()).abs() < 1e-12);
        assert!((yeo_johnson_scalar(-3.0, 0.0) + 7.5).abs() < 1e-12);
        assert!((yj_reference(-3.0, 0.0) + 7.5).abs() < 1e-12);
    }

    #[test]
    fn apply_in_place_leaves_input_on_error() {
        let choice = TransformChoice::new(TransformKind::Tukey, 0.5);
        let mut x = vec![4.0, -1.0];
        assert!(choice.apply_in_place(&mut x).is_err());
        assert_eq!(x, vec![4.0, -1.0]);
    }

    #[test]
    fn select_transform_sign_rule() {
        use crate::dataset::SplitManifest;
        let m = SplitManifest::new([0], [1], [2]);
        let ds = FeatureDataset::new(1, vec![0, 1, 2], vec![0.0, 7.3, 1.0], m.clone()).unwrap();
        assert_eq!(select_transform(&ds).unwrap(), TransformKind::Tukey);
        let zeros = FeatureDataset::new(1, vec![0, 1, 2], vec![0.0; 3], m.clone()).unwrap();
        assert_eq!(select_transform(&zeros).unwrap(), TransformKind::Tukey);
        // the negative value sits in the novel split
        let neg = FeatureDataset::new(1, vec![0, 1, 2], vec![1.0, 2.0, -0.001], m).unwrap();
        assert_eq!(select_transform(&neg).unwrap(), TransformKind::YeoJohnson);
    }

    proptest! {
        #[test]
        fn identity_at_beta_one(x in prop::collection::vec(-1e3f64..1e3, 1..16)) {
            let yj = yeo_johnson(&x, 1.0);
            for (a, b) in x.iter().zip(&yj) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
            let pos: Vec<f64> = x.iter().map(|v| v.abs()).collect();
            let t = tukey(&pos, 1.0).unwrap();
            prop_assert_eq!(t, pos);
        }

        #[test]
        fn matches_reference(x in -50f64..50.0, beta in 0f64..4.0) {
            let got = yeo_johnson_scalar(x, beta);
            let want = yj_reference(x, beta);
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }

        #[test]
        fn strictly_increasing(a in -20f64..20.0, b in -20f64..20.0, beta in 0f64..10.0) {
            prop_assume!(b - a > 1e-6);
            prop_assert!(yeo_johnson_scalar(a, beta) < yeo_johnson_scalar(b, beta));
        }
    }
}
