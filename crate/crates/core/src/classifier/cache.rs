//! Precomputed predictions, keyed by sample id, persisted as CSV.
//!
//! The file starts with the header `sample_id,p0,...,p{N-1}`; each row holds
//! one id and its N probabilities. Rows save in ascending id order, so a
//! cache written twice from the same contents is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dataset::ImageTensor;
use crate::entropy::PredictionVector;

use super::ClassifierError;

pub struct PredictionCache {
    class_count: usize,
    entries: BTreeMap<String, PredictionVector>,
}

impl PredictionCache {
    pub fn new(class_count: usize) -> Self {
        Self {
            class_count,
            entries: BTreeMap::new(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&PredictionVector> {
        self.entries.get(sample_id)
    }

    pub fn insert(
        &mut self,
        sample_id: impl Into<String>,
        prediction: PredictionVector,
    ) -> Result<(), ClassifierError> {
        let sample_id = sample_id.into();
        if prediction.class_count() != self.class_count {
            return Err(ClassifierError::CacheWidth {
                id: sample_id,
                expected: self.class_count,
                found: prediction.class_count(),
            });
        }
        if self.entries.contains_key(&sample_id) {
            return Err(ClassifierError::DuplicateCacheEntry(sample_id));
        }
        self.entries.insert(sample_id, prediction);
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self, ClassifierError> {
        let parse_err = |message: String| ClassifierError::CacheFormat {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| parse_err(e.to_string()))?;

        let headers = reader
            .headers()
            .map_err(|e| parse_err(e.to_string()))?
            .clone();
        let mut fields = headers.iter();
        if fields.next() != Some("sample_id") {
            return Err(parse_err(format!(
                "first header field must be `sample_id`, found {:?}",
                headers.iter().next().unwrap_or("")
            )));
        }
        let prob_fields: Vec<&str> = fields.collect();
        let class_count = prob_fields.len();
        if class_count < 2 {
            return Err(parse_err(format!(
                "header declares {class_count} probability columns, need at least 2"
            )));
        }
        for (index, field) in prob_fields.iter().enumerate() {
            if *field != format!("p{index}") {
                return Err(parse_err(format!(
                    "probability column {} must be named `p{index}`, found {field:?}",
                    index + 1
                )));
            }
        }

        let mut cache = Self::new(class_count);
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| parse_err(e.to_string()))?;
            if record.len() != class_count + 1 {
                return Err(parse_err(format!(
                    "row {}: expected {} fields, found {}",
                    row + 1,
                    class_count + 1,
                    record.len()
                )));
            }
            let id = record[0].to_string();
            let mut probs = Vec::with_capacity(class_count);
            for value in record.iter().skip(1) {
                let value: f64 = value.parse().map_err(|_| {
                    parse_err(format!("row {}: {value:?} is not a number", row + 1))
                })?;
                probs.push(value);
            }
            let vector = PredictionVector::new(probs)
                .map_err(|source| parse_err(format!("row {} ({id:?}): {source}", row + 1)))?;
            cache.insert(id, vector)?;
        }
        Ok(cache)
    }

    /// Write the cache in ascending sample-id order with full `f64`
    /// round-trip precision.
    pub fn save_csv(&self, path: &Path) -> Result<(), ClassifierError> {
        let io_err = |message: String| ClassifierError::CacheFormat {
            path: path.to_path_buf(),
            message,
        };
        let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(e.to_string()))?;
        let mut header = vec!["sample_id".to_string()];
        header.extend((0..self.class_count).map(|i| format!("p{i}")));
        writer
            .write_record(&header)
            .map_err(|e| io_err(e.to_string()))?;
        for (id, prediction) in &self.entries {
            let mut row = vec![id.clone()];
            row.extend(prediction.probs().iter().map(|p| format!("{p:?}")));
            writer
                .write_record(&row)
                .map_err(|e| io_err(e.to_string()))?;
        }
        writer.flush().map_err(|e| io_err(e.to_string()))
    }

    /// Look up a prediction, ignoring the image: the cache is the oracle.
    pub fn predict(
        &self,
        sample_id: &str,
        _image: &ImageTensor,
    ) -> Result<PredictionVector, ClassifierError> {
        self.get(sample_id)
            .cloned()
            .ok_or_else(|| ClassifierError::CacheMiss(sample_id.to_string()))
    }
}
