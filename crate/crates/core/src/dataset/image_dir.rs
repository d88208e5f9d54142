//! A directory of PNG images indexed by a `filename,label` CSV.
//!
//! Filenames are resolved relative to the CSV's directory. Grayscale PNGs
//! load as one channel, everything else as interleaved RGB; all images in one
//! index must share a shape.

use std::path::Path;

use image::DynamicImage;

use super::{byte_to_unit, DatasetError, ImageTensor, Sample};

pub fn load_image_dir(index_path: &Path, id_prefix: &str) -> Result<Vec<Sample>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(index_path)
        .map_err(|e| DatasetError::BadIndexRow {
            path: index_path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| DatasetError::BadIndexRow {
            path: index_path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["filename", "label"] {
        return Err(DatasetError::BadIndexHeader {
            path: index_path.to_path_buf(),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }

    let base = index_path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::new();
    let mut expected_shape: Option<(usize, usize, usize)> = None;
    for (index, row) in reader.records().enumerate() {
        let row = row.map_err(|e| DatasetError::BadIndexRow {
            path: index_path.to_path_buf(),
            row: index + 1,
            message: e.to_string(),
        })?;
        if row.len() != 2 {
            return Err(DatasetError::BadIndexRow {
                path: index_path.to_path_buf(),
                row: index + 1,
                message: format!("expected 2 fields, found {}", row.len()),
            });
        }
        let label: usize = row[1].parse().map_err(|_| DatasetError::BadIndexRow {
            path: index_path.to_path_buf(),
            row: index + 1,
            message: format!("label {:?} is not a non-negative integer", &row[1]),
        })?;
        let image_path = base.join(&row[0]);
        let decoded = image::open(&image_path).map_err(|e| DatasetError::Decode {
            path: image_path.clone(),
            message: e.to_string(),
        })?;
        let tensor = tensor_from(decoded)?;
        let expected = *expected_shape.get_or_insert(tensor.shape());
        if tensor.shape() != expected {
            return Err(DatasetError::NonUniformShape {
                path: image_path,
                expected,
                found: tensor.shape(),
            });
        }
        samples.push(Sample {
            id: format!("{id_prefix}/{index}"),
            image: tensor,
            label,
        });
    }
    Ok(samples)
}

fn tensor_from(decoded: DynamicImage) -> Result<ImageTensor, DatasetError> {
    match decoded {
        DynamicImage::ImageLuma8(gray) => {
            let (width, height) = gray.dimensions();
            let pixels = gray.into_raw().into_iter().map(byte_to_unit).collect();
            ImageTensor::new(height as usize, width as usize, 1, pixels)
        }
        other => {
            let rgb = other.into_rgb8();
            let (width, height) = rgb.dimensions();
            let pixels = rgb.into_raw().into_iter().map(byte_to_unit).collect();
            ImageTensor::new(height as usize, width as usize, 3, pixels)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};

    fn write_gray(path: &Path, width: u32, height: u32, level: u8) {
        GrayImage::from_pixel(width, height, image::Luma([level]))
            .save(path)
            .unwrap();
    }

    #[test]
    fn loads_grayscale_and_resolves_paths_relative_to_index() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("imgs");
        std::fs::create_dir(&sub).unwrap();
        write_gray(&sub.join("a.png"), 4, 3, 51);
        write_gray(&sub.join("b.png"), 4, 3, 255);
        let index = dir.path().join("index.csv");
        std::fs::write(&index, "filename,label\nimgs/a.png,2\nimgs/b.png,0\n").unwrap();

        let samples = load_image_dir(&index, "field/all").unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].id, "field/all/0");
        assert_eq!(samples[0].label, 2);
        assert_eq!(samples[0].image.shape(), (3, 4, 1));
        assert_eq!(samples[0].image.get(0, 0, 0), 51.0 / 255.0);
        assert_eq!(samples[1].image.get(3, 2, 0), 1.0);
    }

    #[test]
    fn color_images_load_as_rgb() {
        let dir = tempfile::tempdir().unwrap();
        RgbImage::from_fn(2, 2, |x, y| image::Rgb([x as u8 * 200, y as u8 * 100, 7]))
            .save(dir.path().join("c.png"))
            .unwrap();
        let index = dir.path().join("index.csv");
        std::fs::write(&index, "filename,label\nc.png,1\n").unwrap();
        let samples = load_image_dir(&index, "f/t").unwrap();
        assert_eq!(samples[0].image.shape(), (2, 2, 3));
        assert_eq!(samples[0].image.get(1, 0, 0), 200.0 / 255.0);
        assert_eq!(samples[0].image.get(0, 1, 1), 100.0 / 255.0);
        assert_eq!(samples[0].image.get(1, 1, 2), 7.0 / 255.0);
    }

    #[test]
    fn rejects_bad_header_bad_label_missing_file_and_mixed_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let index = dir.path().join("index.csv");

        std::fs::write(&index, "file,class\nx.png,0\n").unwrap();
        assert!(matches!(
            load_image_dir(&index, "f"),
            Err(DatasetError::BadIndexHeader { found, .. }) if found == "file,class"
        ));

        write_gray(&dir.path().join("a.png"), 2, 2, 0);
        std::fs::write(&index, "filename,label\na.png,dog\n").unwrap();
        assert!(matches!(
            load_image_dir(&index, "f"),
            Err(DatasetError::BadIndexRow { row: 1, .. })
        ));

        std::fs::write(&index, "filename,label\nmissing.png,0\n").unwrap();
        assert!(matches!(
            load_image_dir(&index, "f"),
            Err(DatasetError::Decode { .. })
        ));

        write_gray(&dir.path().join("b.png"), 3, 2, 0);
        std::fs::write(&index, "filename,label\na.png,0\nb.png,1\n").unwrap();
        assert!(matches!(
            load_image_dir(&index, "f"),
            Err(DatasetError::NonUniformShape { .. })
        ));
    }
}
