//! Big-endian IDX image/label pairs (the MNIST container format).
//!
//! Images: magic `0x00000803`, then count, rows, cols as u32, then
//! `count × rows × cols` unsigned bytes. Labels: magic `0x00000801`, then
//! count, then `count` label bytes.

use std::path::Path;

use super::{byte_to_unit, read_file, DatasetError, ImageTensor, Sample};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct BigEndianReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> BigEndianReader<'a> {
    fn u32(&mut self) -> Result<u32, DatasetError> {
        let end = self.offset + 4;
        let chunk = self
            .bytes
            .get(self.offset..end)
            .ok_or_else(|| DatasetError::Truncated {
                path: self.path.to_path_buf(),
                expected: end,
                len: self.bytes.len(),
            })?;
        self.offset = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
    }

    fn bytes(&mut self, len: usize) -> Result<&'a [u8], DatasetError> {
        let end = self.offset + len;
        let chunk = self
            .bytes
            .get(self.offset..end)
            .ok_or_else(|| DatasetError::Truncated {
                path: self.path.to_path_buf(),
                expected: end,
                len: self.bytes.len(),
            })?;
        self.offset = end;
        Ok(chunk)
    }
}

/// Load an images/labels pair; ids become `"{id_prefix}/{index}"`.
pub fn load_idx_pair(
    images_path: &Path,
    labels_path: &Path,
    id_prefix: &str,
) -> Result<Vec<Sample>, DatasetError> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;

    let mut images = BigEndianReader {
        path: images_path,
        bytes: &image_bytes,
        offset: 0,
    };
    let magic = images.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DatasetError::BadMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let image_count = images.u32()? as usize;
    let rows = images.u32()? as usize;
    let cols = images.u32()? as usize;

    let mut labels = BigEndianReader {
        path: labels_path,
        bytes: &label_bytes,
        offset: 0,
    };
    let magic = labels.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DatasetError::BadMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = labels.u32()? as usize;
    if image_count != label_count {
        return Err(DatasetError::CountMismatch {
            images_path: images_path.to_path_buf(),
            images: image_count,
            labels_path: labels_path.to_path_buf(),
            labels: label_count,
        });
    }

    let pixel_len = rows * cols;
    let mut samples = Vec::with_capacity(image_count);
    for index in 0..image_count {
        let raw = images.bytes(pixel_len)?;
        let label = labels.bytes(1)?[0] as usize;
        let pixels = raw.iter().copied().map(byte_to_unit).collect();
        samples.push(Sample {
            id: format!("{id_prefix}/{index}"),
            image: ImageTensor::new(rows, cols, 1, pixels)?,
            label,
        });
    }
    Ok(samples)
}

/// Write samples back out as an IDX pair, quantizing pixels to bytes with
/// round-half-up. All samples must share one single-channel shape.
pub fn save_idx_pair(
    samples: &[Sample],
    images_path: &Path,
    labels_path: &Path,
) -> Result<(), DatasetError> {
    let first = samples.first().ok_or(DatasetError::EmptySave)?;
    let (rows, cols, channels) = first.image.shape();
    if channels != 1 {
        return Err(DatasetError::IdxChannelCount(channels));
    }

    let mut image_bytes = Vec::with_capacity(16 + samples.len() * rows * cols);
    image_bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    image_bytes.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(cols as u32).to_be_bytes());

    let mut label_bytes = Vec::with_capacity(8 + samples.len());
    label_bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&(samples.len() as u32).to_be_bytes());

    for sample in samples {
        if sample.image.shape() != (rows, cols, 1) {
            return Err(DatasetError::NonUniformShape {
                path: images_path.to_path_buf(),
                expected: (rows, cols, 1),
                found: sample.image.shape(),
            });
        }
        image_bytes.extend(
            sample
                .image
                .pixels()
                .iter()
                .map(|&v| (v * 255.0).round() as u8),
        );
        if sample.label > u8::MAX as usize {
            return Err(DatasetError::LabelOutOfRange {
                path: labels_path.to_path_buf(),
                index: 0,
                label: sample.label,
                class_count: 256,
            });
        }
        label_bytes.push(sample.label as u8);
    }

    std::fs::write(images_path, image_bytes).map_err(|e| DatasetError::io(images_path, e))?;
    std::fs::write(labels_path, label_bytes).map_err(|e| DatasetError::io(labels_path, e))?;
    Ok(())
}
