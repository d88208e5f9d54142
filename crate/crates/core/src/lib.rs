//! Entropy-guided triage for blackbox image classifiers.
//!
//! The crate measures how much a classifier hesitates on each input — the
//! Shannon index of its output distribution — and uses that signal twice:
//!
//! * **Test generation** ([`selection::generate`]): inputs the model predicts
//!   correctly but with *high* entropy sit near decision boundaries, so small
//!   label-preserving image transforms ([`transforms`]) flip them into
//!   mispredictions far more often than average. Each flip is recorded as a
//!   replayable [`selection::ErrorRecord`].
//! * **Label triage** ([`selection::detect`]): inputs the model predicts
//!   *wrongly* but with very *low* entropy are likely mislabeled or
//!   out-of-distribution ground truth, and are flagged for human review.
//!
//! The classifier is treated as a blackbox behind [`classifier::ClassifierHandle`]:
//! a small built-in MLP format, an external process speaking line-delimited
//! JSON, or a CSV cache of precomputed predictions. Reports ([`report`])
//! aggregate error ratios per entropy slice and transform kind.
//!
//! All randomized choices derive from explicit seeds and per-sample streams,
//! so identical configurations reproduce identical artifacts byte for byte.

pub mod classifier;
pub mod dataset;
pub mod entropy;
pub mod report;
pub mod selection;
pub mod transforms;

pub use classifier::{ClassifierError, ClassifierHandle};
pub use dataset::{DatasetError, DatasetManifest, ImageTensor, Sample};
pub use entropy::{EntropyError, PredictionRecord, PredictionVector, ShannonIndex};
pub use report::{ReportError, ReportFormat, TriageReport};
pub use selection::{ErrorRecord, ErrorSet, FlagRecord, FlagSet, SelectionError, ThresholdConfig};
pub use transforms::{TransformError, TransformKind, TransformPolicy, TransformSpec};
