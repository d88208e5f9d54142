//! The built-in dense softmax classifier and its portable `CMLP` file format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic   b"CMLP"
//! version u32 (currently 1)
//! layers  u32
//! per layer:
//!   rows       u32   (output width)
//!   cols       u32   (input width)
//!   activation u8    (0 = none, 1 = relu)
//!   weights    rows × cols × f32, row-major
//!   biases     rows × f32
//! ```
//!
//! Weights are stored and reloaded as `f32` bit patterns, so save → load is
//! exact. Inference runs in `f64` and ends with a max-shifted softmax, which
//! keeps outputs finite, strictly positive, and summing to 1.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const MODEL_MAGIC: [u8; 4] = *b"CMLP";
pub const MODEL_VERSION: u32 = 1;

/// Shifted logits below this are pinned so `exp` stays normal.
const LOGIT_FLOOR: f64 = -700.0;

#[derive(Debug, Error)]
pub enum ModelFormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic {found:?}, expected {MODEL_MAGIC:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported model version {0}, supported: {MODEL_VERSION}")]
    UnsupportedVersion(u32),
    #[error("model declares no layers")]
    NoLayers,
    #[error("layer {layer}: zero dimension in {rows}x{cols}")]
    ZeroDimension {
        layer: usize,
        rows: usize,
        cols: usize,
    },
    #[error("layer {layer}: unknown activation code {code}")]
    UnknownActivation { layer: usize, code: u8 },
    #[error("file ends early: need {expected} bytes, have {len}")]
    Truncated { expected: usize, len: usize },
    #[error("{0} trailing bytes after the last layer")]
    TrailingBytes(usize),
    #[error("layer {layer} expects {expected} inputs but the previous layer produces {found}")]
    DimensionChain {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: non-finite weight or bias")]
    NonFinite { layer: usize },
    #[error("output layer has {0} classes, need at least 2")]
    TooFewClasses(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
        }
    }

    fn from_code(layer: usize, code: u8) -> Result<Self, ModelFormatError> {
        match code {
            0 => Ok(Activation::None),
            1 => Ok(Activation::Relu),
            code => Err(ModelFormatError::UnknownActivation { layer, code }),
        }
    }
}

/// One dense layer: `output = activation(weights · input + biases)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    /// Row-major, `rows × cols`.
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl DenseLayer {
    fn check(&self, layer: usize) -> Result<(), ModelFormatError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ModelFormatError::ZeroDimension {
                layer,
                rows: self.rows,
                cols: self.cols,
            });
        }
        debug_assert_eq!(self.weights.len(), self.rows * self.cols);
        debug_assert_eq!(self.biases.len(), self.rows);
        if self.weights.iter().any(|w| !w.is_finite()) || self.biases.iter().any(|b| !b.is_finite())
        {
            return Err(ModelFormatError::NonFinite { layer });
        }
        Ok(())
    }
}

/// A validated stack of dense layers ending in an implicit softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinSoftmaxModel {
    layers: Vec<DenseLayer>,
}

impl BuiltinSoftmaxModel {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, ModelFormatError> {
        if layers.is_empty() {
            return Err(ModelFormatError::NoLayers);
        }
        for (index, layer) in layers.iter().enumerate() {
            layer.check(index)?;
            if index > 0 && layer.cols != layers[index - 1].rows {
                return Err(ModelFormatError::DimensionChain {
                    layer: index,
                    expected: layer.cols,
                    found: layers[index - 1].rows,
                });
            }
        }
        let classes = layers.last().expect("non-empty").rows;
        if classes < 2 {
            return Err(ModelFormatError::TooFewClasses(classes));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].cols
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().expect("non-empty").rows
    }

    /// Run the network and softmax the final logits.
    ///
    /// The caller guarantees `input.len() == self.input_len()`.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.input_len());
        let mut current: Vec<f64> = input.to_vec();
        for layer in &self.layers {
            let mut next = Vec::with_capacity(layer.rows);
            for r in 0..layer.rows {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                let mut acc = f64::from(layer.biases[r]);
                for (w, x) in row.iter().zip(&current) {
                    acc += f64::from(*w) * x;
                }
                if layer.activation == Activation::Relu && acc < 0.0 {
                    acc = 0.0;
                }
                next.push(acc);
            }
            current = next;
        }
        softmax(&current)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFormatError> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MODEL_MAGIC);
        bytes.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            bytes.extend_from_slice(&(layer.rows as u32).to_le_bytes());
            bytes.extend_from_slice(&(layer.cols as u32).to_le_bytes());
            bytes.push(layer.activation.code());
            for w in &layer.weights {
                bytes.extend_from_slice(&w.to_le_bytes());
            }
            for b in &layer.biases {
                bytes.extend_from_slice(&b.to_le_bytes());
            }
        }
        std::fs::write(path, bytes).map_err(|source| ModelFormatError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelFormatError> {
        let bytes = std::fs::read(path).map_err(|source| ModelFormatError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelFormatError> {
        let mut cursor = Cursor { bytes, offset: 0 };
        let magic: [u8; 4] = cursor.take(4)?.try_into().expect("4-byte slice");
        if magic != MODEL_MAGIC {
            return Err(ModelFormatError::BadMagic { found: magic });
        }
        let version = cursor.u32()?;
        if version != MODEL_VERSION {
            return Err(ModelFormatError::UnsupportedVersion(version));
        }
        let layer_count = cursor.u32()? as usize;
        let mut layers = Vec::with_capacity(layer_count.min(1024));
        for layer in 0..layer_count {
            let rows = cursor.u32()? as usize;
            let cols = cursor.u32()? as usize;
            let activation = Activation::from_code(layer, cursor.take(1)?[0])?;
            if rows == 0 || cols == 0 {
                return Err(ModelFormatError::ZeroDimension { layer, rows, cols });
            }
            let weights = cursor.f32s(rows * cols)?;
            let biases = cursor.f32s(rows)?;
            layers.push(DenseLayer {
                rows,
                cols,
                activation,
                weights,
                biases,
            });
        }
        if cursor.offset != bytes.len() {
            return Err(ModelFormatError::TrailingBytes(bytes.len() - cursor.offset));
        }
        Self::new(layers)
    }
}

/// Load a model from a `CMLP` file.
pub fn load_builtin_model(path: &Path) -> Result<BuiltinSoftmaxModel, ModelFormatError> {
    BuiltinSoftmaxModel::load(path)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&l| (l - max).max(LOGIT_FLOOR).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], ModelFormatError> {
        let end = self
            .offset
            .checked_add(len)
            .ok_or(ModelFormatError::Truncated {
                expected: usize::MAX,
                len: self.bytes.len(),
            })?;
        let chunk = self
            .bytes
            .get(self.offset..end)
            .ok_or(ModelFormatError::Truncated {
                expected: end,
                len: self.bytes.len(),
            })?;
        self.offset = end;
        Ok(chunk)
    }

    fn u32(&mut self) -> Result<u32, ModelFormatError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4-byte slice"),
        ))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, ModelFormatError> {
        let chunk = self.take(count.checked_mul(4).ok_or(ModelFormatError::Truncated {
            expected: usize::MAX,
            len: self.bytes.len(),
        })?)?;
        Ok(chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> BuiltinSoftmaxModel {
        BuiltinSoftmaxModel::new(vec![
            DenseLayer {
                rows: 3,
                cols: 4,
                activation: Activation::Relu,
                weights: vec![
                    0.25, -1.5, 0.75, 2.0, //
                    1.0, 0.5, -0.25, 0.125, //
                    -0.33, 0.66, 0.99, -0.11,
                ],
                biases: vec![0.1, -0.2, 0.3],
            },
            DenseLayer {
                rows: 2,
                cols: 3,
                activation: Activation::None,
                weights: vec![0.5, -0.5, 1.5, -1.0, 2.0, 0.0],
                biases: vec![0.0, 0.05],
            },
        ])
        .unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let model = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cmlp");
        model.save(&path).unwrap();
        let loaded = BuiltinSoftmaxModel::load(&path).unwrap();
        assert_eq!(loaded, model);

        // Physical bytes are reproducible too.
        let path2 = dir.path().join("model2.cmlp");
        loaded.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn zero_weight_model_predicts_uniform() {
        let model = BuiltinSoftmaxModel::new(vec![DenseLayer {
            rows: 4,
            cols: 6,
            activation: Activation::None,
            weights: vec![0.0; 24],
            biases: vec![0.0; 4],
        }])
        .unwrap();
        let probs = model.forward(&[0.3, 0.9, 0.0, 1.0, 0.5, 0.2]);
        for &p in &probs {
            assert!((p - 0.25).abs() < 1e-15, "got {probs:?}");
        }
    }

    #[test]
    fn forward_matches_straight_line_hand_computation() {
        // Single layer on a 2x2 image, written out arithmetic operation by
        // operation as an independent reference.
        let model = BuiltinSoftmaxModel::new(vec![DenseLayer {
            rows: 2,
            cols: 4,
            activation: Activation::None,
            weights: vec![1.0, -1.0, 0.5, 2.0, -0.5, 1.0, 1.0, -1.0],
            biases: vec![0.1, -0.2],
        }])
        .unwrap();
        let image = [0.5, 0.25, 1.0, 0.0];

        // Biases round when stored as f32; mirror that in the expectation.
        let logit0: f64 = 1.0 * 0.5 - 1.0 * 0.25 + 0.5 * 1.0 + 2.0 * 0.0 + (0.1f32 as f64);
        let logit1: f64 = -0.5 * 0.5 + 1.0 * 0.25 + 1.0 * 1.0 - 1.0 * 0.0 + (-0.2f32 as f64);
        let m = logit0.max(logit1);
        let e0 = (logit0 - m).exp();
        let e1 = (logit1 - m).exp();
        let expected = [e0 / (e0 + e1), e1 / (e0 + e1)];

        let probs = model.forward(&image);
        assert!((probs[0] - expected[0]).abs() < 1e-12, "{probs:?}");
        assert!((probs[1] - expected[1]).abs() < 1e-12, "{probs:?}");
    }

    #[test]
    fn relu_clamps_hidden_negatives() {
        let model = BuiltinSoftmaxModel::new(vec![
            DenseLayer {
                rows: 2,
                cols: 1,
                activation: Activation::Relu,
                weights: vec![-5.0, 1.0],
                biases: vec![0.0, 0.0],
            },
            DenseLayer {
                rows: 2,
                cols: 2,
                activation: Activation::None,
                weights: vec![1.0, 0.0, 0.0, 1.0],
                biases: vec![0.0, 0.0],
            },
        ])
        .unwrap();
        // Hidden = relu([-5, 1]) = [0, 1]; logits = [0, 1].
        let probs = model.forward(&[1.0]);
        let e = 1.0f64.exp();
        assert!((probs[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((probs[1] - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn softmax_handles_extreme_logits_without_zeros() {
        let probs = softmax(&[1000.0, -1000.0, 0.0]);
        assert!(probs.iter().all(|&p| p > 0.0), "{probs:?}");
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(probs[0] > 0.999);
    }

    #[test]
    fn rejects_malformed_files() {
        let model = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cmlp");
        model.save(&path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            BuiltinSoftmaxModel::from_bytes(&bad),
            Err(ModelFormatError::BadMagic { .. })
        ));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            BuiltinSoftmaxModel::from_bytes(&bad),
            Err(ModelFormatError::UnsupportedVersion(9))
        ));

        assert!(matches!(
            BuiltinSoftmaxModel::from_bytes(&good[..good.len() - 3]),
            Err(ModelFormatError::Truncated { .. })
        ));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(
            BuiltinSoftmaxModel::from_bytes(&bad),
            Err(ModelFormatError::TrailingBytes(1))
        ));

        // Corrupt the first layer's activation code.
        let mut bad = good;
        bad[20] = 7;
        assert!(matches!(
            BuiltinSoftmaxModel::from_bytes(&bad),
            Err(ModelFormatError::UnknownActivation { layer: 0, code: 7 })
        ));
    }

    #[test]
    fn rejects_inconsistent_stacks() {
        let layer = |rows: usize, cols: usize| DenseLayer {
            rows,
            cols,
            activation: Activation::None,
            weights: vec![0.0; rows * cols],
            biases: vec![0.0; rows],
        };
        assert!(matches!(
            BuiltinSoftmaxModel::new(vec![]),
            Err(ModelFormatError::NoLayers)
        ));
        assert!(matches!(
            BuiltinSoftmaxModel::new(vec![layer(3, 4), layer(2, 5)]),
            Err(ModelFormatError::DimensionChain {
                layer: 1,
                expected: 5,
                found: 3
            })
        ));
        assert!(matches!(
            BuiltinSoftmaxModel::new(vec![layer(1, 4)]),
            Err(ModelFormatError::TooFewClasses(1))
        ));
        let mut nan = layer(2, 2);
        nan.weights[3] = f32::NAN;
        assert!(matches!(
            BuiltinSoftmaxModel::new(vec![nan]),
            Err(ModelFormatError::NonFinite { layer: 0 })
        ));
    }
}
