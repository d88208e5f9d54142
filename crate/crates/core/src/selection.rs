//! Entropy-guided selection: which inputs to transform, which to flag.
//!
//! Two disjoint populations fall out of one scan:
//!
//! * **Generation candidates** — correctly predicted inputs whose Shannon
//!   index *exceeds* `tau_high`. The model got them right while hesitating,
//!   so they sit near decision boundaries; [`generate`] warps each one once
//!   and records every prediction flip as a replayable [`ErrorRecord`].
//! * **Flagged samples** — mispredicted inputs whose Shannon index falls
//!   *below* `tau_low`. The model was confidently contradicted by the ground
//!   truth, which is strong evidence the label (or the sample) is bad;
//!   [`detect`] surfaces them for human review.
//!
//! Both comparisons are strict, so an index exactly at a threshold never
//! qualifies. Every candidate's transform derives from `(policy.seed,
//! sample_id)` alone — never from batch composition or scheduling — which is
//! what makes error sets reproducible and threshold sweeps consistent.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, ClassifierHandle};
use crate::dataset::Sample;
use crate::entropy::PredictionRecord;
use crate::transforms::{
    apply_transform, choice, draw_index_for_sample, TransformError, TransformKind, TransformPolicy,
    TransformSpec,
};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("thresholds must be finite and non-negative: tau_low {tau_low}, tau_high {tau_high}")]
    BadThresholds { tau_low: f64, tau_high: f64 },
    #[error("prediction record {0:?} has no ground-truth label")]
    UnmatchedRecord(String),
    #[error("duplicate prediction record for sample {0:?}")]
    DuplicateRecord(String),
    #[error("candidate {0:?} has no sample image")]
    MissingSample(String),
    #[error("sweep thresholds must be finite, non-negative, and strictly increasing")]
    BadSweepTaus,
    #[error("transform failed for sample {id:?}: {source}")]
    Transform { id: String, source: TransformError },
    #[error("classifier failed for sample {id:?}: {source}")]
    Predict { id: String, source: ClassifierError },
    #[error("line {line}: {message}")]
    Jsonl { line: usize, message: String },
}

/// The two entropy thresholds, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    /// Flag mispredictions with Shannon index strictly below this.
    pub tau_low: f64,
    /// Generate from correct predictions with Shannon index strictly above
    /// this.
    pub tau_high: f64,
}

impl ThresholdConfig {
    pub const DEFAULT_TAU_LOW: f64 = 0.1;
    pub const DEFAULT_TAU_HIGH: f64 = 0.4;

    pub fn new(tau_low: f64, tau_high: f64) -> Result<Self, SelectionError> {
        if !tau_low.is_finite() || !tau_high.is_finite() || tau_low < 0.0 || tau_high < 0.0 {
            return Err(SelectionError::BadThresholds { tau_low, tau_high });
        }
        Ok(Self { tau_low, tau_high })
    }
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            tau_low: Self::DEFAULT_TAU_LOW,
            tau_high: Self::DEFAULT_TAU_HIGH,
        }
    }
}

/// Ground-truth labels keyed by sample id.
pub fn label_map(samples: &[Sample]) -> BTreeMap<String, usize> {
    samples.iter().map(|s| (s.id.clone(), s.label)).collect()
}

/// One generation candidate: correctly predicted, Shannon index above
/// `tau_high`.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub sample_id: String,
    pub label: usize,
    pub shannon: f64,
}

/// All generation candidates for one threshold, ascending by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationCandidateSet {
    pub tau_high: f64,
    pub members: Vec<Candidate>,
}

/// Select `{x : shannon > tau_high and label == predicted}`.
pub fn build_candidates(
    records: &[PredictionRecord],
    labels: &BTreeMap<String, usize>,
    tau_high: f64,
) -> Result<GenerationCandidateSet, SelectionError> {
    if !tau_high.is_finite() || tau_high < 0.0 {
        return Err(SelectionError::BadThresholds {
            tau_low: 0.0,
            tau_high,
        });
    }
    let mut seen = BTreeSet::new();
    let mut members = Vec::new();
    for record in records {
        if !seen.insert(record.sample_id.as_str()) {
            return Err(SelectionError::DuplicateRecord(record.sample_id.clone()));
        }
        let label = *labels
            .get(&record.sample_id)
            .ok_or_else(|| SelectionError::UnmatchedRecord(record.sample_id.clone()))?;
        if record.shannon.value() > tau_high && record.predicted_label == label {
            members.push(Candidate {
                sample_id: record.sample_id.clone(),
                label,
                shannon: record.shannon.value(),
            });
        }
    }
    members.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(GenerationCandidateSet { tau_high, members })
}

/// One metamorphic test failure: the stored spec re-creates the exact
/// transformed input that flipped the prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub sample_id: String,
    pub transform: TransformSpec,
    pub original_label: usize,
    pub transformed_prediction: usize,
}

/// All failures from one generation run, ascending by sample id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorSet {
    /// How many candidates were attempted (the denominator of the error
    /// ratio).
    pub attempts: usize,
    pub entries: Vec<ErrorRecord>,
}

impl ErrorSet {
    /// `errors / attempts`; `None` when nothing was attempted.
    pub fn error_ratio(&self) -> Option<f64> {
        if self.attempts == 0 {
            None
        } else {
            Some(self.entries.len() as f64 / self.attempts as f64)
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn entries_from_jsonl(text: &str) -> Result<Vec<ErrorRecord>, SelectionError> {
        text.lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(index, line)| {
                serde_json::from_str(line).map_err(|e| SelectionError::Jsonl {
                    line: index + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// CSV with the full spec JSON in the last column, so a row alone still
    /// replays.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record([
                "sample_id",
                "transform_kind",
                "original_label",
                "transformed_prediction",
                "transform",
            ])
            .expect("in-memory write");
        for entry in &self.entries {
            writer
                .write_record([
                    entry.sample_id.as_str(),
                    entry.transform.kind().name(),
                    &entry.original_label.to_string(),
                    &entry.transformed_prediction.to_string(),
                    &serde_json::to_string(&entry.transform).expect("spec serializes"),
                ])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Cache/request id for the warped version of a sample: `{id}::{kind}`.
///
/// Transformed queries get distinct ids so a prediction cache can hold both
/// the base and the warped predictions without collision.
pub fn transformed_sample_id(sample_id: &str, kind: TransformKind) -> String {
    format!("{sample_id}::{kind}")
}

/// Algorithm: for every candidate, draw one transform, warp, re-classify, and
/// record a failure iff the prediction left the ground-truth label.
pub fn generate(
    candidates: &GenerationCandidateSet,
    samples: &[Sample],
    policy: &TransformPolicy,
    classifier: &ClassifierHandle,
) -> Result<ErrorSet, SelectionError> {
    let by_id: BTreeMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();

    let outcomes: Vec<Result<Option<ErrorRecord>, SelectionError>> = candidates
        .members
        .par_iter()
        .map(|candidate| {
            transform_trial(candidate, &by_id, policy, classifier).map(|(spec, predicted)| {
                (predicted != candidate.label).then(|| ErrorRecord {
                    sample_id: candidate.sample_id.clone(),
                    transform: spec,
                    original_label: candidate.label,
                    transformed_prediction: predicted,
                })
            })
        })
        .collect();

    // Candidates are in ascending id order, so taking results in order keeps
    // both the entries and the first-reported failure deterministic.
    let mut entries = Vec::new();
    for outcome in outcomes {
        if let Some(entry) = outcome? {
            entries.push(entry);
        }
    }
    Ok(ErrorSet {
        attempts: candidates.members.len(),
        entries,
    })
}

/// Warp one candidate with its own seeded draw and re-classify: the shared
/// trial behind [`generate`], [`threshold_sweep`], and the report matrix.
pub(crate) fn transform_trial(
    candidate: &Candidate,
    samples_by_id: &BTreeMap<&str, &Sample>,
    policy: &TransformPolicy,
    classifier: &ClassifierHandle,
) -> Result<(TransformSpec, usize), SelectionError> {
    let id = candidate.sample_id.as_str();
    let sample = samples_by_id
        .get(id)
        .ok_or_else(|| SelectionError::MissingSample(id.to_string()))?;
    let draw_index = draw_index_for_sample(id);
    let (height, width, _) = sample.image.shape();
    let spec =
        choice(policy, width, height, draw_index).map_err(|source| SelectionError::Transform {
            id: id.to_string(),
            source,
        })?;
    classify_transformed(sample, spec, classifier)
}

/// Apply `spec` and classify the result under the transformed id.
pub(crate) fn classify_transformed(
    sample: &Sample,
    spec: TransformSpec,
    classifier: &ClassifierHandle,
) -> Result<(TransformSpec, usize), SelectionError> {
    let warped =
        apply_transform(&sample.image, &spec).map_err(|source| SelectionError::Transform {
            id: sample.id.clone(),
            source,
        })?;
    let query_id = transformed_sample_id(&sample.id, spec.kind());
    let probs =
        classifier
            .predict(&query_id, &warped)
            .map_err(|source| SelectionError::Predict {
                id: query_id,
                source,
            })?;
    Ok((spec, probs.argmax_label()))
}

/// One sample flagged as likely mislabeled: confidently mispredicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub sample_id: String,
    pub label: usize,
    pub predicted_label: usize,
    pub shannon: f64,
}

/// All flags from one detection run, ascending by sample id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlagSet {
    pub entries: Vec<FlagRecord>,
}

impl FlagSet {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn entries_from_jsonl(text: &str) -> Result<Vec<FlagRecord>, SelectionError> {
        text.lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(index, line)| {
                serde_json::from_str(line).map_err(|e| SelectionError::Jsonl {
                    line: index + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["sample_id", "label", "predicted_label", "shannon"])
            .expect("in-memory write");
        for entry in &self.entries {
            writer
                .write_record([
                    entry.sample_id.as_str(),
                    &entry.label.to_string(),
                    &entry.predicted_label.to_string(),
                    &format!("{:?}", entry.shannon),
                ])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Algorithm: flag `{x : shannon < tau_low and label != predicted}`.
pub fn detect(
    records: &[PredictionRecord],
    labels: &BTreeMap<String, usize>,
    tau_low: f64,
) -> Result<FlagSet, SelectionError> {
    if !tau_low.is_finite() || tau_low < 0.0 {
        return Err(SelectionError::BadThresholds {
            tau_low,
            tau_high: 0.0,
        });
    }
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for record in records {
        if !seen.insert(record.sample_id.as_str()) {
            return Err(SelectionError::DuplicateRecord(record.sample_id.clone()));
        }
        let label = *labels
            .get(&record.sample_id)
            .ok_or_else(|| SelectionError::UnmatchedRecord(record.sample_id.clone()))?;
        if record.shannon.value() < tau_low && record.predicted_label != label {
            entries.push(FlagRecord {
                sample_id: record.sample_id.clone(),
                label,
                predicted_label: record.predicted_label,
                shannon: record.shannon.value(),
            });
        }
    }
    entries.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(FlagSet { entries })
}

/// Error counts at one `tau_high` value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau_high: f64,
    pub candidates: usize,
    pub errors: usize,
}

impl SweepPoint {
    pub fn error_ratio(&self) -> Option<f64> {
        if self.candidates == 0 {
            None
        } else {
            Some(self.errors as f64 / self.candidates as f64)
        }
    }
}

/// Run the generation trial once per candidate at the loosest threshold, then
/// re-slice the outcomes at every `tau`. Because each sample's transform
/// depends only on `(seed, sample_id)`, this equals running [`generate`]
/// separately per threshold.
pub fn threshold_sweep(
    records: &[PredictionRecord],
    samples: &[Sample],
    labels: &BTreeMap<String, usize>,
    taus: &[f64],
    policy: &TransformPolicy,
    classifier: &ClassifierHandle,
) -> Result<Vec<SweepPoint>, SelectionError> {
    if taus.is_empty()
        || taus.iter().any(|t| !t.is_finite() || *t < 0.0)
        || taus.windows(2).any(|pair| pair[0] >= pair[1])
    {
        return Err(SelectionError::BadSweepTaus);
    }

    let loosest = build_candidates(records, labels, taus[0])?;
    let by_id: BTreeMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let outcomes: Vec<Result<(f64, bool), SelectionError>> = loosest
        .members
        .par_iter()
        .map(|candidate| {
            transform_trial(candidate, &by_id, policy, classifier)
                .map(|(_, predicted)| (candidate.shannon, predicted != candidate.label))
        })
        .collect();
    let mut trials = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        trials.push(outcome?);
    }

    Ok(taus
        .iter()
        .map(|&tau| {
            let mut candidates = 0;
            let mut errors = 0;
            for &(shannon, is_error) in &trials {
                if shannon > tau {
                    candidates += 1;
                    errors += usize::from(is_error);
                }
            }
            SweepPoint {
                tau_high: tau,
                candidates,
                errors,
            }
        })
        .collect())
}

/// A replayed error whose prediction no longer matches the stored one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMismatch {
    pub sample_id: String,
    pub expected_prediction: usize,
    pub observed_prediction: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub total: usize,
    pub reproduced: usize,
    pub mismatches: Vec<ReplayMismatch>,
}

impl ReplayOutcome {
    pub fn all_reproduced(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Re-apply every stored spec and confirm the classifier still produces the
/// recorded transformed prediction.
pub fn replay(
    entries: &[ErrorRecord],
    samples: &[Sample],
    classifier: &ClassifierHandle,
) -> Result<ReplayOutcome, SelectionError> {
    let by_id: BTreeMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let results: Vec<Result<Option<ReplayMismatch>, SelectionError>> = entries
        .par_iter()
        .map(|entry| {
            let sample = by_id
                .get(entry.sample_id.as_str())
                .ok_or_else(|| SelectionError::MissingSample(entry.sample_id.clone()))?;
            let (_, predicted) = classify_transformed(sample, entry.transform.clone(), classifier)?;
            Ok(
                (predicted != entry.transformed_prediction).then(|| ReplayMismatch {
                    sample_id: entry.sample_id.clone(),
                    expected_prediction: entry.transformed_prediction,
                    observed_prediction: predicted,
                }),
            )
        })
        .collect();

    let mut outcome = ReplayOutcome {
        total: entries.len(),
        ..ReplayOutcome::default()
    };
    for result in results {
        match result? {
            Some(mismatch) => outcome.mismatches.push(mismatch),
            None => outcome.reproduced += 1,
        }
    }
    Ok(outcome)
}
