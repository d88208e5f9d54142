//! Dataset loading: raw image bytes from disk into normalized tensors.
//!
//! Three on-disk layouts are supported — IDX image/label pairs, CIFAR-10
//! binary batches, and a directory of PNGs with a CSV index — all unified
//! behind a small manifest that names the dataset, its class count, and its
//! splits. Loaders are strict: magic numbers, counts, record sizes, and label
//! ranges are all validated, and every failure names the offending file.

mod cifar;
mod idx;
mod image_dir;

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cifar::load_cifar10_bin;
pub use idx::{load_idx_pair, save_idx_pair};
pub use image_dir::load_image_dir;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("image/label count mismatch: {images_path} has {images}, {labels_path} has {labels}")]
    CountMismatch {
        images_path: PathBuf,
        images: usize,
        labels_path: PathBuf,
        labels: usize,
    },
    #[error("{path}: file ends early ({len} bytes, expected {expected})")]
    Truncated {
        path: PathBuf,
        expected: usize,
        len: usize,
    },
    #[error("{path}: size {len} is not a whole number of {record_len}-byte records")]
    RaggedRecords {
        path: PathBuf,
        record_len: usize,
        len: usize,
    },
    #[error("{path}: record {index} carries label {label}, outside 0..{class_count}")]
    LabelOutOfRange {
        path: PathBuf,
        index: usize,
        label: usize,
        class_count: usize,
    },
    #[error("{path}: expected CSV header `filename,label`, found {found:?}")]
    BadIndexHeader { path: PathBuf, found: String },
    #[error("{path}: row {row}: {message}")]
    BadIndexRow {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: shape {found:?} differs from first image's {expected:?}")]
    NonUniformShape {
        path: PathBuf,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("invalid image tensor: {0}")]
    InvalidTensor(String),
    #[error("{path}: cannot parse manifest: {message}")]
    ManifestParse { path: PathBuf, message: String },
    #[error("manifest has no split named {name:?} (available: {available:?})")]
    UnknownSplit {
        name: String,
        available: Vec<String>,
    },
    #[error("IDX files store single-channel images; tensor has {0} channels")]
    IdxChannelCount(usize),
    #[error("cannot write an empty sample list as an IDX pair")]
    EmptySave,
}

impl DatasetError {
    fn io(path: &Path, source: io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A dense image with `height × width × channels` values in `[0, 1]`,
/// row-major with channels interleaved innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(DatasetError::InvalidTensor(format!(
                "zero dimension in {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if pixels.len() != expected {
            return Err(DatasetError::InvalidTensor(format!(
                "{height}x{width}x{channels} needs {expected} values, got {}",
                pixels.len()
            )));
        }
        if let Some(index) = pixels
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(DatasetError::InvalidTensor(format!(
                "value {} at flat index {index} is outside [0, 1]",
                pixels[index]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// A tensor filled with one value (used for coverage masks and tests).
    pub fn filled(
        height: usize,
        width: usize,
        channels: usize,
        value: f64,
    ) -> Result<Self, DatasetError> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Value at column `x`, row `y`, channel `c`. Panics out of bounds, like
    /// slice indexing.
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        assert!(x < self.width && y < self.height && c < self.channels);
        self.pixels[(y * self.width + x) * self.channels + c]
    }
}

/// One dataset element: a stable id, the image, and its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    pub label: usize,
}

/// How one split's files are laid out on disk. Paths are relative to the
/// manifest file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case")]
pub enum SplitFormat {
    /// Big-endian IDX pair: images (magic `0x00000803`) and labels
    /// (magic `0x00000801`).
    Idx { images: PathBuf, labels: PathBuf },
    /// CIFAR-10 binary batches: 3073-byte records, planar RGB.
    Cifar10Bin { files: Vec<PathBuf> },
    /// CSV index (`filename,label`) next to a directory of PNG files.
    ImageDir { index: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    #[serde(flatten)]
    pub format: SplitFormat,
}

/// Dataset description: name, class count, optional class names, splits.
///
/// Parsed from TOML or JSON by file extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    pub splits: Vec<SplitSpec>,
}

impl DatasetManifest {
    pub fn from_path(path: &Path) -> Result<(Self, PathBuf), DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        let manifest: DatasetManifest = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                serde_json::from_str(&text).map_err(|e| DatasetError::ManifestParse {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?
            }
            _ => toml::from_str(&text).map_err(|e| DatasetError::ManifestParse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?,
        };
        manifest.validate(path)?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((manifest, base))
    }

    fn validate(&self, path: &Path) -> Result<(), DatasetError> {
        if self.class_count < 2 {
            return Err(DatasetError::ManifestParse {
                path: path.to_path_buf(),
                message: format!("class_count {} is below 2", self.class_count),
            });
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.class_count {
                return Err(DatasetError::ManifestParse {
                    path: path.to_path_buf(),
                    message: format!(
                        "{} class names for class_count {}",
                        names.len(),
                        self.class_count
                    ),
                });
            }
        }
        if self.splits.is_empty() {
            return Err(DatasetError::ManifestParse {
                path: path.to_path_buf(),
                message: "manifest declares no splits".into(),
            });
        }
        Ok(())
    }

    pub fn split_names(&self) -> Vec<String> {
        self.splits.iter().map(|s| s.name.clone()).collect()
    }

    /// Load one split. Sample ids are `"{dataset}/{split}/{index}"` with the
    /// index following file order, so reloading reproduces identical ids.
    pub fn load_split(
        &self,
        base_dir: &Path,
        split_name: &str,
    ) -> Result<Vec<Sample>, DatasetError> {
        let split = self
            .splits
            .iter()
            .find(|s| s.name == split_name)
            .ok_or_else(|| DatasetError::UnknownSplit {
                name: split_name.to_string(),
                available: self.split_names(),
            })?;
        let mut prefix = String::new();
        let _ = write!(prefix, "{}/{}", self.name, split.name);
        let samples = match &split.format {
            SplitFormat::Idx { images, labels } => {
                load_idx_pair(&base_dir.join(images), &base_dir.join(labels), &prefix)?
            }
            SplitFormat::Cifar10Bin { files } => {
                let paths: Vec<PathBuf> = files.iter().map(|f| base_dir.join(f)).collect();
                load_cifar10_bin(&paths, &prefix)?
            }
            SplitFormat::ImageDir { index } => load_image_dir(&base_dir.join(index), &prefix)?,
        };
        for (index, sample) in samples.iter().enumerate() {
            if sample.label >= self.class_count {
                return Err(DatasetError::LabelOutOfRange {
                    path: base_dir.to_path_buf(),
                    index,
                    label: sample.label,
                    class_count: self.class_count,
                });
            }
        }
        Ok(samples)
    }

    /// Load several splits in the given order and concatenate them.
    pub fn load_splits(
        &self,
        base_dir: &Path,
        split_names: &[String],
    ) -> Result<Vec<Sample>, DatasetError> {
        let mut all = Vec::new();
        for name in split_names {
            all.extend(self.load_split(base_dir, name)?);
        }
        Ok(all)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    std::fs::read(path).map_err(|e| DatasetError::io(path, e))
}

fn byte_to_unit(byte: u8) -> f64 {
    f64::from(byte) / 255.0
}
