//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! a 32×32 RGB image stored planar (1024 red, 1024 green, 1024 blue bytes).

use std::path::Path;

use super::{byte_to_unit, read_file, DatasetError, ImageTensor, Sample};

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const RECORD_LEN: usize = 1 + 3 * PLANE;
const CLASS_COUNT: usize = 10;

/// Load one or more batch files; record indices (and ids) run across files in
/// order, so `batch_1.bin` + `batch_2.bin` numbers continuously.
pub fn load_cifar10_bin(
    paths: &[impl AsRef<Path>],
    id_prefix: &str,
) -> Result<Vec<Sample>, DatasetError> {
    let mut samples = Vec::new();
    let mut index = 0usize;
    for path in paths {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        if bytes.len() % RECORD_LEN != 0 {
            return Err(DatasetError::RaggedRecords {
                path: path.to_path_buf(),
                record_len: RECORD_LEN,
                len: bytes.len(),
            });
        }
        for record in bytes.chunks_exact(RECORD_LEN) {
            let label = record[0] as usize;
            if label >= CLASS_COUNT {
                return Err(DatasetError::LabelOutOfRange {
                    path: path.to_path_buf(),
                    index,
                    label,
                    class_count: CLASS_COUNT,
                });
            }
            // Planar RGB to interleaved height x width x 3.
            let planes = &record[1..];
            let mut pixels = Vec::with_capacity(3 * PLANE);
            for offset in 0..PLANE {
                pixels.push(byte_to_unit(planes[offset]));
                pixels.push(byte_to_unit(planes[PLANE + offset]));
                pixels.push(byte_to_unit(planes[2 * PLANE + offset]));
            }
            samples.push(Sample {
                id: format!("{id_prefix}/{index}"),
                image: ImageTensor::new(SIDE, SIDE, 3, pixels)?,
                label,
            });
            index += 1;
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut bytes = vec![label];
        bytes.extend((0..3 * PLANE).map(fill));
        bytes
    }

    #[test]
    fn planar_bytes_become_interleaved_unit_pixels() {
        // Red plane all 255, green all 0, blue: byte = spatial offset % 256.
        let bytes = record(7, |i| match i / PLANE {
            0 => 255,
            1 => 0,
            _ => (i % PLANE % 256) as u8,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        std::fs::write(&path, &bytes).unwrap();
        let samples = load_cifar10_bin(&[&path], "c/train").unwrap();
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!(s.id, "c/train/0");
        assert_eq!(s.label, 7);
        assert_eq!(s.image.shape(), (SIDE, SIDE, 3));
        assert_eq!(s.image.get(0, 0, 0), 1.0);
        assert_eq!(s.image.get(0, 0, 1), 0.0);
        assert_eq!(s.image.get(0, 0, 2), 0.0);
        // Spatial offset of (x=3, y=1) is 35.
        assert_eq!(s.image.get(3, 1, 2), 35.0 / 255.0);
    }

    #[test]
    fn indices_continue_across_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        let mut two = record(0, |_| 0);
        two.extend(record(1, |_| 1));
        std::fs::write(&a, &two).unwrap();
        std::fs::write(&b, record(2, |_| 2)).unwrap();
        let samples = load_cifar10_bin(&[&a, &b], "c/t").unwrap();
        let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["c/t/0", "c/t/1", "c/t/2"]);
        assert_eq!(samples[2].label, 2);
    }

    #[test]
    fn rejects_ragged_files_and_out_of_range_labels() {
        let dir = tempfile::tempdir().unwrap();
        let short = dir.path().join("short.bin");
        std::fs::write(&short, vec![0u8; RECORD_LEN - 1]).unwrap();
        assert!(matches!(
            load_cifar10_bin(&[&short], "c"),
            Err(DatasetError::RaggedRecords { len, .. }) if len == RECORD_LEN - 1
        ));

        let bad_label = dir.path().join("bad.bin");
        std::fs::write(&bad_label, record(10, |_| 0)).unwrap();
        assert!(matches!(
            load_cifar10_bin(&[&bad_label], "c"),
            Err(DatasetError::LabelOutOfRange {
                label: 10,
                index: 0,
                ..
            })
        ));
    }
}
