//! Datasets: feature matrices with hard labels or with per-sample class
//! probability vectors. These are the currency of the whole system — private
//! shards, generator output, and the synthetic pools exchanged through the
//! repository are all one of these two types.

use crate::error::CoreError;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

/// Tolerance for soft-label row sums at construction time.
pub const SOFT_LABEL_TOLERANCE: f64 = 1e-6;

/// A feature matrix with one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self, CoreError> {
        if features.nrows() != labels.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(CoreError::InvalidSpec("n_classes must be positive".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(CoreError::LabelOutOfRange { label, n_classes });
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite("features".into()));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self {
            features,
            labels,
            n_classes: self.n_classes,
        }
    }

    /// Number of samples carrying each class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row-wise concatenation of several datasets with matching shapes.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<Self, CoreError> {
        if parts.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        let dim = parts[0].feature_dim();
        let n_classes = parts[0].n_classes;
        for p in parts {
            if p.feature_dim() != dim || p.n_classes != n_classes {
                return Err(CoreError::ShapeMismatch(
                    "concatenated datasets must share feature_dim and n_classes".into(),
                ));
            }
        }
        let total: usize = parts.iter().map(|p| p.n_samples()).sum();
        let mut features = Array2::zeros((total, dim));
        let mut labels = Vec::with_capacity(total);
        let mut offset = 0;
        for p in parts {
            features
                .slice_mut(ndarray::s![offset..offset + p.n_samples(), ..])
                .assign(&p.features);
            labels.extend_from_slice(&p.labels);
            offset += p.n_samples();
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }
}

/// A feature matrix with one probability distribution over classes per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftDataset {
    features: Array2<f64>,
    soft_labels: Array2<f64>,
}

impl SoftDataset {
    pub fn new(features: Array2<f64>, soft_labels: Array2<f64>) -> Result<Self, CoreError> {
        Self::with_tolerance(features, soft_labels, SOFT_LABEL_TOLERANCE)
    }

    /// Like [`SoftDataset::new`] but with a caller-chosen row-sum tolerance.
    /// Payloads decoded from 32-bit wire format use a looser bound.
    pub fn with_tolerance(
        features: Array2<f64>,
        soft_labels: Array2<f64>,
        tolerance: f64,
    ) -> Result<Self, CoreError> {
        if features.nrows() != soft_labels.nrows() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} feature rows but {} soft-label rows",
                features.nrows(),
                soft_labels.nrows()
            )));
        }
        if soft_labels.ncols() == 0 {
            return Err(CoreError::InvalidSpec(
                "soft labels must have at least one class column".into(),
            ));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite("features".into()));
        }
        for (row, r) in soft_labels.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for &v in r {
                if !v.is_finite() {
                    return Err(CoreError::NonFinite(format!("soft-label row {row}")));
                }
                if v < 0.0 {
                    return Err(CoreError::NegativeSoftLabel { row });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > tolerance {
                return Err(CoreError::SoftLabelRowSum {
                    row,
                    sum,
                    tolerance,
                });
            }
        }
        Ok(Self {
            features,
            soft_labels,
        })
    }

    /// One-hot encoding of a hard-labeled dataset.
    pub fn one_hot(data: &LabeledDataset) -> Self {
        let mut soft = Array2::zeros((data.n_samples(), data.n_classes()));
        for (i, &l) in data.labels().iter().enumerate() {
            soft[[i, l]] = 1.0;
        }
        Self {
            features: data.features().to_owned(),
            soft_labels: soft,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.soft_labels.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn soft_labels(&self) -> ArrayView2<'_, f64> {
        self.soft_labels.view()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            soft_labels: self.soft_labels.select(Axis(0), indices),
        }
    }
}

/// Collapse soft labels to hard ones by row argmax; ties go to the lowest
/// class index.
pub fn harden(soft: &SoftDataset) -> LabeledDataset {
    let labels = soft
        .soft_labels
        .rows()
        .into_iter()
        .map(argmax_lowest)
        .collect();
    LabeledDataset {
        features: soft.features.clone(),
        labels,
        n_classes: soft.n_classes(),
    }
}

/// Index of the row maximum, preferring the lowest index on ties.
pub(crate) fn argmax_lowest(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Row-wise concatenation preserving input order.
pub fn concat(datasets: &[SoftDataset]) -> Result<SoftDataset, CoreError> {
    if datasets.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let dim = datasets[0].feature_dim();
    let n_classes = datasets[0].n_classes();
    for d in datasets {
        if d.feature_dim() != dim || d.n_classes() != n_classes {
            return Err(CoreError::ShapeMismatch(
                "concatenated datasets must share feature_dim and n_classes".into(),
            ));
        }
    }
    let total: usize = datasets.iter().map(|d| d.n_samples()).sum();
    let mut features = Array2::zeros((total, dim));
    let mut soft = Array2::zeros((total, n_classes));
    let mut offset = 0;
    for d in datasets {
        features
            .slice_mut(ndarray::s![offset..offset + d.n_samples(), ..])
            .assign(&d.features);
        soft.slice_mut(ndarray::s![offset..offset + d.n_samples(), ..])
            .assign(&d.soft_labels);
        offset += d.n_samples();
    }
    Ok(SoftDataset {
        features,
        soft_labels: soft,
    })
}
