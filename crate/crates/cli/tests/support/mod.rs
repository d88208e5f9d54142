//! Shared helpers for the integration suites: the bundled 8×8 digits
//! fixture, a small trainer that produces a real builtin model from it, and
//! a big-integer logarithm oracle for entropy cross-checks.
#![allow(dead_code)]

pub mod bigln;
pub mod trainer;

use std::path::{Path, PathBuf};

use entriage_core::dataset::{DatasetManifest, Sample};

pub fn digits_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/digits")
}

pub fn load_digits_split(split: &str) -> Vec<Sample> {
    let (manifest, base) = DatasetManifest::from_path(&digits_dir().join("manifest.toml"))
        .expect("digits manifest loads");
    manifest
        .load_split(&base, split)
        .expect("digits split loads")
}
