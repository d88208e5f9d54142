//! Blackbox classifier backends behind one handle.
//!
//! The toolkit never inspects model internals — it only needs a probability
//! distribution per image. Three backends provide that:
//!
//! * [`BuiltinSoftmaxModel`]: a dense MLP loaded from the portable `CMLP`
//!   binary format, run in-process.
//! * [`ExternalProcessClassifier`]: any executable speaking line-delimited
//!   JSON on stdin/stdout, for models living in other runtimes.
//! * [`PredictionCache`]: precomputed predictions from a CSV, for offline
//!   analysis without any model at all.
//!
//! Every backend's output is funneled through [`PredictionVector`] validation,
//! so malformed distributions are rejected at the boundary with the offending
//! sample named.

mod builtin;
mod cache;
mod external;

use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::dataset::ImageTensor;
use crate::entropy::{EntropyError, PredictionVector};

pub use builtin::{
    load_builtin_model, Activation, BuiltinSoftmaxModel, DenseLayer, ModelFormatError,
};
pub use cache::PredictionCache;
pub use external::{ExternalProcessClassifier, ExternalSpec};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("input has {found} values but the model expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("no cached prediction for sample {0:?}")]
    CacheMiss(String),
    #[error("{path}: cache parse: {message}")]
    CacheFormat { path: PathBuf, message: String },
    #[error("duplicate cache entry for sample {0:?}")]
    DuplicateCacheEntry(String),
    #[error("cache entry for {id:?} has {found} probabilities, expected {expected}")]
    CacheWidth {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelFormatError),
    #[error("cannot spawn external classifier {command:?}: {source}")]
    Spawn { command: String, source: io::Error },
    #[error("external classifier i/o failure: {0}")]
    ProcessIo(String),
    #[error("external classifier exited or closed its output stream")]
    ProcessClosed,
    #[error("external classifier produced unparseable line {line:?}: {message}")]
    BadResponse { line: String, message: String },
    #[error("external classifier answered id {got:?} to request {want:?}; responses must keep request order")]
    IdMismatch { want: String, got: String },
    #[error("external classifier reported an error for sample {id:?}: {message}")]
    Remote { id: String, message: String },
    #[error("external classifier timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend returned {found} probabilities for sample {id:?}, expected {expected}")]
    WrongClassCount {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("backend output for sample {id:?} rejected: {source}")]
    InvalidOutput { id: String, source: EntropyError },
}

/// One blackbox classifier, whichever backend is behind it.
pub enum ClassifierHandle {
    Builtin(BuiltinSoftmaxModel),
    External(ExternalProcessClassifier),
    Cache(PredictionCache),
}

impl ClassifierHandle {
    pub fn builtin_from_path(path: &Path) -> Result<Self, ClassifierError> {
        Ok(ClassifierHandle::Builtin(load_builtin_model(path)?))
    }

    pub fn external(spec: ExternalSpec) -> Result<Self, ClassifierError> {
        Ok(ClassifierHandle::External(
            ExternalProcessClassifier::spawn(spec)?,
        ))
    }

    pub fn cache_from_path(path: &Path) -> Result<Self, ClassifierError> {
        Ok(ClassifierHandle::Cache(PredictionCache::load_csv(path)?))
    }

    pub fn backend_kind(&self) -> &'static str {
        match self {
            ClassifierHandle::Builtin(_) => "builtin-softmax",
            ClassifierHandle::External(_) => "external-process",
            ClassifierHandle::Cache(_) => "prediction-cache",
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            ClassifierHandle::Builtin(model) => model.class_count(),
            ClassifierHandle::External(proc) => proc.class_count(),
            ClassifierHandle::Cache(cache) => cache.class_count(),
        }
    }

    /// Classify one image. The sample id keys cache lookups, names external
    /// protocol requests, and labels every error.
    pub fn predict(
        &self,
        sample_id: &str,
        image: &ImageTensor,
    ) -> Result<PredictionVector, ClassifierError> {
        match self {
            ClassifierHandle::Builtin(model) => {
                let pixels = image.pixels();
                if pixels.len() != model.input_len() {
                    return Err(ClassifierError::ShapeMismatch {
                        expected: model.input_len(),
                        found: pixels.len(),
                    });
                }
                validate_output(sample_id, model.class_count(), model.forward(pixels))
            }
            ClassifierHandle::External(proc) => {
                let raw = proc.predict_raw(sample_id, image)?;
                validate_output(sample_id, proc.class_count(), raw)
            }
            ClassifierHandle::Cache(cache) => cache
                .get(sample_id)
                .cloned()
                .ok_or_else(|| ClassifierError::CacheMiss(sample_id.to_string())),
        }
    }

    /// Classify many images, preserving input order. The external backend
    /// pipelines the whole batch over one write/read cycle; the in-process
    /// backends just loop.
    pub fn predict_batch(
        &self,
        items: &[(&str, &ImageTensor)],
    ) -> Result<Vec<PredictionVector>, ClassifierError> {
        match self {
            ClassifierHandle::External(proc) => {
                let raw = proc.predict_batch_raw(items)?;
                items
                    .iter()
                    .zip(raw)
                    .map(|((id, _), probs)| validate_output(id, proc.class_count(), probs))
                    .collect()
            }
            _ => items
                .iter()
                .map(|(id, image)| self.predict(id, image))
                .collect(),
        }
    }
}

fn validate_output(
    sample_id: &str,
    class_count: usize,
    probs: Vec<f64>,
) -> Result<PredictionVector, ClassifierError> {
    if probs.len() != class_count {
        return Err(ClassifierError::WrongClassCount {
            id: sample_id.to_string(),
            expected: class_count,
            found: probs.len(),
        });
    }
    PredictionVector::new(probs).map_err(|source| ClassifierError::InvalidOutput {
        id: sample_id.to_string(),
        source,
    })
}
