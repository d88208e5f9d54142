//! Shannon index of classifier output distributions.
//!
//! The index is computed in nats: `H'(l) = -Σ l_i ln l_i` with the convention
//! `0 ln 0 = 0`. A one-hot distribution scores 0 (total confidence), the
//! uniform distribution over `N` classes scores `ln N` (total hesitation).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `|Σ l_i - 1|` before a vector is rejected as unnormalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

/// Minimum number of classes a distribution must cover.
pub const MIN_CLASSES: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("distribution has {0} classes, need at least {MIN_CLASSES}")]
    TooFewClasses(usize),
    #[error("probability at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("probability {value} at index {index} is negative")]
    Negative { index: usize, value: f64 },
    #[error("probability {value} at index {index} exceeds 1")]
    AboveOne { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, outside 1 ± {NORMALIZATION_TOLERANCE}")]
    NotNormalized { sum: f64 },
    #[error("inconsistent class counts in batch: record {index} has {found} classes, expected {expected}")]
    InconsistentClassCount {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("batch has {ids} sample ids but {vectors} probability vectors")]
    BatchLengthMismatch { ids: usize, vectors: usize },
}

/// A validated, renormalized probability distribution over class labels.
///
/// Construction enforces: at least [`MIN_CLASSES`] entries, every entry finite
/// and within `[0, 1]`, and the sum within [`NORMALIZATION_TOLERANCE`] of 1.
/// Accepted vectors are renormalized to sum to exactly 1 (up to rounding), so
/// downstream code never sees the residual drift.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    probs: Vec<f64>,
}

impl PredictionVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, EntropyError> {
        if probs.len() < MIN_CLASSES {
            return Err(EntropyError::TooFewClasses(probs.len()));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(EntropyError::NonFinite { index });
            }
            if value < 0.0 {
                return Err(EntropyError::Negative { index, value });
            }
            if value > 1.0 {
                return Err(EntropyError::AboveOne { index, value });
            }
        }
        // Summing in sorted order makes the total — and therefore every
        // renormalized entry — independent of input permutation, which in turn
        // makes the Shannon index exactly permutation invariant.
        let sum = sorted_sum(&probs);
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(EntropyError::NotNormalized { sum });
        }
        let probs = probs.into_iter().map(|value| value / sum).collect();
        Ok(Self { probs })
    }

    pub fn class_count(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index of the largest probability; ties break toward the lowest index.
    pub fn argmax_label(&self) -> usize {
        let mut best = 0;
        for (index, &value) in self.probs.iter().enumerate().skip(1) {
            if value > self.probs[best] {
                best = index;
            }
        }
        best
    }
}

/// Shannon index in nats, guaranteed within `[0, ln N]` by construction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShannonIndex(pub f64);

impl ShannonIndex {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `H'(l) = -Σ l_i ln l_i` in nats, with `0 ln 0 = 0`.
///
/// Terms are accumulated in sorted order so any permutation of the same
/// distribution produces the identical floating-point result; the total is
/// clamped into `[0, ln N]` to absorb last-ulp rounding at the boundaries.
pub fn shannon_index(prediction: &PredictionVector) -> ShannonIndex {
    let terms: Vec<f64> = prediction
        .probs
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .collect();
    let raw = sorted_sum(&terms);
    let max = (prediction.class_count() as f64).ln();
    ShannonIndex(raw.clamp(0.0, max))
}

fn sorted_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

/// One classifier verdict on one input: the distribution plus its derived
/// argmax label and Shannon index.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub probs: PredictionVector,
    pub predicted_label: usize,
    pub shannon: ShannonIndex,
}

impl PredictionRecord {
    pub fn new(sample_id: impl Into<String>, probs: PredictionVector) -> Self {
        let predicted_label = probs.argmax_label();
        let shannon = shannon_index(&probs);
        Self {
            sample_id: sample_id.into(),
            probs,
            predicted_label,
            shannon,
        }
    }
}

/// Validate a batch of raw probability vectors and pair them with sample ids.
///
/// All vectors must share one class count; the offending record index is named
/// otherwise.
pub fn batch_records(
    ids: &[String],
    prob_vectors: Vec<Vec<f64>>,
) -> Result<Vec<PredictionRecord>, EntropyError> {
    if ids.len() != prob_vectors.len() {
        return Err(EntropyError::BatchLengthMismatch {
            ids: ids.len(),
            vectors: prob_vectors.len(),
        });
    }
    let mut expected = None;
    let mut records = Vec::with_capacity(ids.len());
    for (index, (id, raw)) in ids.iter().zip(prob_vectors).enumerate() {
        let expected = *expected.get_or_insert(raw.len());
        if raw.len() != expected {
            return Err(EntropyError::InconsistentClassCount {
                index,
                expected,
                found: raw.len(),
            });
        }
        records.push(PredictionRecord::new(
            id.clone(),
            PredictionVector::new(raw)?,
        ));
    }
    Ok(records)
}
