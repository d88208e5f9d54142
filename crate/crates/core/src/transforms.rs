//! Label-preserving geometric image transforms and their seeded sampling.
//!
//! Warping uses inverse mapping: for every output pixel center the inverse
//! homography names a source point, which is bilinearly interpolated from the
//! four surrounding pixel centers (out-of-bounds reads fill with 0.0). Pixel
//! `i` covers `[i, i+1)` on each axis with its center at `i + 0.5`; rotation
//! is about the image center `(w/2, h/2)`.
//!
//! Source points that land exactly on a pixel center skip interpolation and
//! copy the value, so identity specs and whole-pixel pans reproduce the input
//! bit for bit.
//!
//! Parameter sampling is deterministic: one seeded stream cipher RNG per
//! `(seed, draw_index)` pair, so a sample keeps its transform no matter which
//! other samples are in the batch or how work is scheduled across threads.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ImageTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("no transform kinds enabled")]
    NoKindsEnabled,
    #[error("unknown transform kind {0:?} (expected pan, rotate2d, affine, or perspective)")]
    UnknownKind(String),
    #[error("parameter range [{min}, {max}] is invalid")]
    BadRange { min: f64, max: f64 },
    #[error("{entry} is not finite")]
    NonFiniteEntry { entry: String },
    #[error("matrix is not invertible (det = {det:e})")]
    NotInvertible { det: f64 },
    #[error("perspective matrix must have bottom-right entry 1, found {0}")]
    NotNormalized(f64),
    #[error("displaced corners are degenerate; homography has no solution")]
    DegenerateCorners,
}

/// The four supported transform families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    Pan,
    Rotate2d,
    Affine,
    Perspective,
}

impl TransformKind {
    pub const ALL: [TransformKind; 4] = [
        TransformKind::Pan,
        TransformKind::Rotate2d,
        TransformKind::Affine,
        TransformKind::Perspective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Pan => "pan",
            TransformKind::Rotate2d => "rotate2d",
            TransformKind::Affine => "affine",
            TransformKind::Perspective => "perspective",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = TransformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "pan" => Ok(TransformKind::Pan),
            "rotate2d" => Ok(TransformKind::Rotate2d),
            "affine" => Ok(TransformKind::Affine),
            "perspective" => Ok(TransformKind::Perspective),
            other => Err(TransformError::UnknownKind(other.to_string())),
        }
    }
}

/// A fully parameterized transform, serializable for replay.
///
/// Offsets are in pixels; angles in degrees. `Affine` carries the forward
/// `2×3` matrix applied to pixel coordinates; `Perspective` carries the
/// forward `3×3` homography with bottom-right entry fixed at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TransformSpec {
    Pan { dx: f64, dy: f64 },
    Rotate2d { angle_deg: f64 },
    Affine { matrix: [[f64; 3]; 2] },
    Perspective { matrix: [[f64; 3]; 3] },
}

impl TransformSpec {
    pub fn kind(&self) -> TransformKind {
        match self {
            TransformSpec::Pan { .. } => TransformKind::Pan,
            TransformSpec::Rotate2d { .. } => TransformKind::Rotate2d,
            TransformSpec::Affine { .. } => TransformKind::Affine,
            TransformSpec::Perspective { .. } => TransformKind::Perspective,
        }
    }

    /// The no-op member of each family.
    pub fn identity(kind: TransformKind) -> TransformSpec {
        match kind {
            TransformKind::Pan => TransformSpec::Pan { dx: 0.0, dy: 0.0 },
            TransformKind::Rotate2d => TransformSpec::Rotate2d { angle_deg: 0.0 },
            TransformKind::Affine => TransformSpec::Affine {
                matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            },
            TransformKind::Perspective => TransformSpec::Perspective {
                matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            },
        }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        let check = |value: f64, entry: String| {
            if value.is_finite() {
                Ok(())
            } else {
                Err(TransformError::NonFiniteEntry { entry })
            }
        };
        match self {
            TransformSpec::Pan { dx, dy } => {
                check(*dx, "pan dx".into())?;
                check(*dy, "pan dy".into())
            }
            TransformSpec::Rotate2d { angle_deg } => check(*angle_deg, "rotation angle".into()),
            TransformSpec::Affine { matrix } => {
                for (r, row) in matrix.iter().enumerate() {
                    for (c, &v) in row.iter().enumerate() {
                        check(v, format!("affine[{r}][{c}]"))?;
                    }
                }
                Ok(())
            }
            TransformSpec::Perspective { matrix } => {
                for (r, row) in matrix.iter().enumerate() {
                    for (c, &v) in row.iter().enumerate() {
                        check(v, format!("perspective[{r}][{c}]"))?;
                    }
                }
                if matrix[2][2] != 1.0 {
                    return Err(TransformError::NotNormalized(matrix[2][2]));
                }
                Ok(())
            }
        }
    }

    /// The spec that undoes this one (up to interpolation loss).
    pub fn inverse(&self) -> Result<TransformSpec, TransformError> {
        self.validate()?;
        match self {
            TransformSpec::Pan { dx, dy } => Ok(TransformSpec::Pan { dx: -dx, dy: -dy }),
            TransformSpec::Rotate2d { angle_deg } => Ok(TransformSpec::Rotate2d {
                angle_deg: -angle_deg,
            }),
            TransformSpec::Affine { matrix } => {
                let inv = invert_affine(matrix)?;
                Ok(TransformSpec::Affine { matrix: inv })
            }
            TransformSpec::Perspective { matrix } => {
                let inv = invert3(matrix)?;
                let scale = inv[2][2];
                if scale.abs() < 1e-12 {
                    return Err(TransformError::NotInvertible { det: scale });
                }
                let mut normalized = [[0.0; 3]; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        normalized[r][c] = inv[r][c] / scale;
                    }
                }
                normalized[2][2] = 1.0;
                Ok(TransformSpec::Perspective { matrix: normalized })
            }
        }
    }

    /// Inverse-mapping homography: output pixel center → source point.
    ///
    /// Built directly per family rather than by inverting a forward matrix,
    /// so identity specs and pans yield exact entries.
    fn inverse_map(&self, width: usize, height: usize) -> Result<[[f64; 3]; 3], TransformError> {
        match self {
            TransformSpec::Pan { dx, dy } => {
                Ok([[1.0, 0.0, -dx], [0.0, 1.0, -dy], [0.0, 0.0, 1.0]])
            }
            TransformSpec::Rotate2d { angle_deg } => {
                let (s, c) = sin_cos_deg(*angle_deg);
                let cx = width as f64 / 2.0;
                let cy = height as f64 / 2.0;
                // src = C + R(theta) (dst - C), R = [[c, -s], [s, c]]
                Ok([
                    [c, -s, cx - c * cx + s * cy],
                    [s, c, cy - s * cx - c * cy],
                    [0.0, 0.0, 1.0],
                ])
            }
            TransformSpec::Affine { matrix } => {
                let inv = invert_affine(matrix)?;
                Ok([
                    [inv[0][0], inv[0][1], inv[0][2]],
                    [inv[1][0], inv[1][1], inv[1][2]],
                    [0.0, 0.0, 1.0],
                ])
            }
            TransformSpec::Perspective { matrix } => invert3(matrix),
        }
    }
}

/// Exact sine/cosine at quadrant multiples so right-angle rotations permute
/// pixels without interpolation residue.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        let rad = deg.to_radians();
        (rad.sin(), rad.cos())
    }
}

/// Inverse of a forward `2×3` affine map, as another `2×3` matrix.
fn invert_affine(m: &[[f64; 3]; 2]) -> Result<[[f64; 3]; 2], TransformError> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 {
        return Err(TransformError::NotInvertible { det });
    }
    let a = m[1][1] / det;
    let b = -m[0][1] / det;
    let c = -m[1][0] / det;
    let d = m[0][0] / det;
    Ok([
        [a, b, -(a * m[0][2] + b * m[1][2])],
        [c, d, -(c * m[0][2] + d * m[1][2])],
    ])
}

/// General 3×3 inverse via the adjugate.
fn invert3(m: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3], TransformError> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return Err(TransformError::NotInvertible { det });
    }
    let cof =
        |r1: usize, c1: usize, r2: usize, c2: usize| m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
    Ok([
        [
            cof(1, 1, 2, 2) / det,
            -cof(0, 1, 2, 2) / det,
            cof(0, 1, 1, 2) / det,
        ],
        [
            -cof(1, 0, 2, 2) / det,
            cof(0, 0, 2, 2) / det,
            -cof(0, 0, 1, 2) / det,
        ],
        [
            cof(1, 0, 2, 1) / det,
            -cof(0, 0, 2, 1) / det,
            cof(0, 0, 1, 1) / det,
        ],
    ])
}

/// Warp `image` by `spec`. Output shape equals input shape; uncovered output
/// pixels fill with 0.0; values clamp into `[0, 1]`.
pub fn apply_transform(
    image: &ImageTensor,
    spec: &TransformSpec,
) -> Result<ImageTensor, TransformError> {
    spec.validate()?;
    let (height, width, channels) = image.shape();
    let m = spec.inverse_map(width, height)?;
    let mut pixels = Vec::with_capacity(height * width * channels);

    let at = |x: i64, y: i64, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            0.0
        } else {
            image.get(x as usize, y as usize, ch)
        }
    };

    for oy in 0..height {
        for ox in 0..width {
            let cx = ox as f64 + 0.5;
            let cy = oy as f64 + 0.5;
            let w = m[2][0] * cx + m[2][1] * cy + m[2][2];
            let sx = (m[0][0] * cx + m[0][1] * cy + m[0][2]) / w;
            let sy = (m[1][0] * cx + m[1][1] * cy + m[1][2]) / w;
            if !sx.is_finite() || !sy.is_finite() {
                pixels.extend(std::iter::repeat_n(0.0, channels));
                continue;
            }
            // Grid coordinates: integer value g means the center of pixel g.
            let gx = sx - 0.5;
            let gy = sy - 0.5;
            let x0 = gx.floor();
            let y0 = gy.floor();
            let fx = gx - x0;
            let fy = gy - y0;
            let x0 = x0 as i64;
            let y0 = y0 as i64;
            if fx == 0.0 && fy == 0.0 {
                for ch in 0..channels {
                    pixels.push(at(x0, y0, ch));
                }
            } else {
                for ch in 0..channels {
                    let v = (1.0 - fx) * (1.0 - fy) * at(x0, y0, ch)
                        + fx * (1.0 - fy) * at(x0 + 1, y0, ch)
                        + (1.0 - fx) * fy * at(x0, y0 + 1, ch)
                        + fx * fy * at(x0 + 1, y0 + 1, ch);
                    pixels.push(v.clamp(0.0, 1.0));
                }
            }
        }
    }

    Ok(ImageTensor::new(height, width, channels, pixels)
        .expect("warp output has input shape and clamped values"))
}

/// Round-trip deviation: warp by `spec`, warp back by its inverse, and return
/// the largest per-pixel difference from the original over the interior —
/// the pixels whose interpolation support never left the image, found by
/// pushing an all-ones mask through the same two warps.
///
/// Returns 0.0 when no interior pixel survives.
pub fn compose_check(image: &ImageTensor, spec: &TransformSpec) -> Result<f64, TransformError> {
    let inverse = spec.inverse()?;
    let round_trip = apply_transform(&apply_transform(image, spec)?, &inverse)?;

    let (height, width, channels) = image.shape();
    let ones =
        ImageTensor::filled(height, width, 1, 1.0).expect("mask dimensions match a valid image");
    let mask = apply_transform(&apply_transform(&ones, spec)?, &inverse)?;

    let mut worst = 0.0f64;
    for y in 0..height {
        for x in 0..width {
            if mask.get(x, y, 0) < 1.0 - 1e-9 {
                continue;
            }
            for ch in 0..channels {
                let diff = (round_trip.get(x, y, ch) - image.get(x, y, ch)).abs();
                worst = worst.max(diff);
            }
        }
    }
    Ok(worst)
}

/// Closed interval a parameter is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn symmetric(halfwidth: f64) -> Self {
        Self::new(-halfwidth, halfwidth)
    }

    fn validate(&self) -> Result<(), TransformError> {
        if self.min.is_finite() && self.max.is_finite() && self.min <= self.max {
            Ok(())
        } else {
            Err(TransformError::BadRange {
                min: self.min,
                max: self.max,
            })
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        rng.random_range(self.min..=self.max)
    }
}

/// Which transform kinds to sample and from which parameter ranges.
///
/// Defaults follow `defaults_for`: pans and translations up to ±10% of each
/// dimension, rotations up to ±15°, affine entry jitter ±0.1, and perspective
/// corner displacement up to ±10% of each dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformPolicy {
    pub enabled: Vec<TransformKind>,
    pub seed: u64,
    pub pan_dx: ParamRange,
    pub pan_dy: ParamRange,
    pub rotate_deg: ParamRange,
    /// Additive perturbation of the four linear entries of the affine matrix.
    pub affine_entry: ParamRange,
    pub affine_tx: ParamRange,
    pub affine_ty: ParamRange,
    /// Perspective corner displacement, per axis.
    pub corner_dx: ParamRange,
    pub corner_dy: ParamRange,
}

impl TransformPolicy {
    pub fn defaults_for(width: usize, height: usize, seed: u64) -> Self {
        let w = width as f64;
        let h = height as f64;
        Self {
            enabled: TransformKind::ALL.to_vec(),
            seed,
            pan_dx: ParamRange::symmetric(0.1 * w),
            pan_dy: ParamRange::symmetric(0.1 * h),
            rotate_deg: ParamRange::symmetric(15.0),
            affine_entry: ParamRange::symmetric(0.1),
            affine_tx: ParamRange::symmetric(0.1 * w),
            affine_ty: ParamRange::symmetric(0.1 * h),
            corner_dx: ParamRange::symmetric(0.1 * w),
            corner_dy: ParamRange::symmetric(0.1 * h),
        }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        if self.enabled.is_empty() {
            return Err(TransformError::NoKindsEnabled);
        }
        for range in [
            self.pan_dx,
            self.pan_dy,
            self.rotate_deg,
            self.affine_entry,
            self.affine_tx,
            self.affine_ty,
            self.corner_dx,
            self.corner_dy,
        ] {
            range.validate()?;
        }
        Ok(())
    }

    /// The image-edge corners used as perspective anchor points, clockwise
    /// from top-left.
    fn corners(width: f64, height: f64) -> [[f64; 2]; 4] {
        [[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]]
    }
}

/// Stable per-sample draw index: 64-bit FNV-1a of the sample id.
///
/// Feeding this to [`choice`] gives every sample its own RNG stream, so the
/// drawn transform depends only on `(policy.seed, sample_id)` — not on batch
/// composition, thresholds, or thread scheduling.
pub fn draw_index_for_sample(sample_id: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in sample_id.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Draw one transform for the image dimensions baked into `policy`'s ranges:
/// first the kind (uniform over `enabled`), then its parameters.
pub fn choice(
    policy: &TransformPolicy,
    width: usize,
    height: usize,
    draw_index: u64,
) -> Result<TransformSpec, TransformError> {
    policy.validate()?;
    let mut rng = stream_rng(policy.seed, draw_index);
    let kind = policy.enabled[rng.random_range(0..policy.enabled.len())];
    draw_params(policy, kind, width, height, &mut rng)
}

/// Draw parameters for a fixed kind, consuming the kind draw first so the
/// result matches what [`choice`] would produce whenever it picks `kind` for
/// the same `(seed, draw_index)`.
pub fn choice_of_kind(
    policy: &TransformPolicy,
    kind: TransformKind,
    width: usize,
    height: usize,
    draw_index: u64,
) -> Result<TransformSpec, TransformError> {
    policy.validate()?;
    let mut rng = stream_rng(policy.seed, draw_index);
    let _ = rng.random_range(0..policy.enabled.len());
    draw_params(policy, kind, width, height, &mut rng)
}

fn stream_rng(seed: u64, draw_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw_index);
    rng
}

fn draw_params(
    policy: &TransformPolicy,
    kind: TransformKind,
    width: usize,
    height: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TransformSpec, TransformError> {
    match kind {
        TransformKind::Pan => Ok(TransformSpec::Pan {
            dx: policy.pan_dx.draw(rng),
            dy: policy.pan_dy.draw(rng),
        }),
        TransformKind::Rotate2d => Ok(TransformSpec::Rotate2d {
            angle_deg: policy.rotate_deg.draw(rng),
        }),
        TransformKind::Affine => {
            let j00 = policy.affine_entry.draw(rng);
            let j01 = policy.affine_entry.draw(rng);
            let j10 = policy.affine_entry.draw(rng);
            let j11 = policy.affine_entry.draw(rng);
            let tx = policy.affine_tx.draw(rng);
            let ty = policy.affine_ty.draw(rng);
            Ok(TransformSpec::Affine {
                matrix: [[1.0 + j00, j01, tx], [j10, 1.0 + j11, ty]],
            })
        }
        TransformKind::Perspective => {
            let src = TransformPolicy::corners(width as f64, height as f64);
            let mut dst = src;
            for corner in &mut dst {
                corner[0] += policy.corner_dx.draw(rng);
                corner[1] += policy.corner_dy.draw(rng);
            }
            let matrix = homography_from_corners(&src, &dst)?;
            Ok(TransformSpec::Perspective { matrix })
        }
    }
}

/// Solve for the 3×3 homography (bottom-right entry 1) mapping each `src`
/// corner onto its `dst` counterpart — an 8×8 linear system solved by
/// Gaussian elimination with partial pivoting.
pub fn homography_from_corners(
    src: &[[f64; 2]; 4],
    dst: &[[f64; 2]; 4],
) -> Result<[[f64; 3]; 3], TransformError> {
    let mut a = [[0.0f64; 9]; 8]; // augmented [A | b]
    for i in 0..4 {
        let [x, y] = src[i];
        let [u, v] = dst[i];
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }

    for col in 0..8 {
        let pivot = (col..8)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .expect("non-empty row range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(TransformError::DegenerateCorners);
        }
        a.swap(col, pivot);
        let pivot_row = a[col];
        for (row, entries) in a.iter_mut().enumerate() {
            if row == col {
                continue;
            }
            let factor = entries[col] / pivot_row[col];
            for (entry, pivot_entry) in entries[col..].iter_mut().zip(&pivot_row[col..]) {
                *entry -= factor * pivot_entry;
            }
        }
    }

    let h = |i: usize| a[i][8] / a[i][i];
    Ok([[h(0), h(1), h(2)], [h(3), h(4), h(5)], [h(6), h(7), 1.0]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(values: &[&[f64]]) -> ImageTensor {
        let height = values.len();
        let width = values[0].len();
        let pixels = values.iter().flat_map(|row| row.iter().copied()).collect();
        ImageTensor::new(height, width, 1, pixels).unwrap()
    }

    fn as_rows(t: &ImageTensor) -> Vec<Vec<f64>> {
        (0..t.height())
            .map(|y| (0..t.width()).map(|x| t.get(x, y, 0)).collect())
            .collect()
    }

    #[test]
    fn identity_of_every_kind_is_bit_exact() {
        let image = gray(&[&[0.1, 0.7, 0.3], &[0.9, 0.2, 0.05], &[0.4, 0.6, 1.0]]);
        for kind in TransformKind::ALL {
            let out = apply_transform(&image, &TransformSpec::identity(kind)).unwrap();
            assert_eq!(out.pixels(), image.pixels(), "{kind} identity drifted");
        }
    }

    #[test]
    fn whole_pixel_pan_shifts_exactly_and_fills_zero() {
        let image = gray(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let out = apply_transform(&image, &TransformSpec::Pan { dx: 1.0, dy: 0.0 }).unwrap();
        assert_eq!(as_rows(&out), vec![vec![0.0, 0.1], vec![0.0, 0.3]]);
        let out = apply_transform(&image, &TransformSpec::Pan { dx: 0.0, dy: -1.0 }).unwrap();
        assert_eq!(as_rows(&out), vec![vec![0.3, 0.4], vec![0.0, 0.0]]);
    }

    #[test]
    fn quarter_turn_permutes_a_two_by_two_grid() {
        let (a, b, c, d) = (0.1, 0.2, 0.3, 0.4);
        let image = gray(&[&[a, b], &[c, d]]);
        let out = apply_transform(&image, &TransformSpec::Rotate2d { angle_deg: 90.0 }).unwrap();
        assert_eq!(as_rows(&out), vec![vec![b, d], vec![a, c]]);
    }

    #[test]
    fn full_turn_is_bit_exact_identity() {
        let image = gray(&[&[0.5, 0.25, 0.125], &[0.0, 1.0, 0.75], &[0.3, 0.6, 0.9]]);
        let out = apply_transform(&image, &TransformSpec::Rotate2d { angle_deg: 360.0 }).unwrap();
        assert_eq!(out.pixels(), image.pixels());
    }

    #[test]
    fn half_pixel_pan_averages_neighbors() {
        let image = gray(&[&[0.0, 1.0]]);
        // dx = 0.5 pulls each output from halfway between source neighbors.
        let out = apply_transform(&image, &TransformSpec::Pan { dx: 0.5, dy: 0.0 }).unwrap();
        // Output x=0 samples source x=-0.5 in grid coords: half out of bounds.
        assert_eq!(as_rows(&out), vec![vec![0.0, 0.5]]);
    }

    #[test]
    fn outputs_stay_within_unit_range() {
        let image = gray(&[&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]]);
        let spec = TransformSpec::Rotate2d { angle_deg: 7.3 };
        let out = apply_transform(&image, &spec).unwrap();
        for &v in out.pixels() {
            assert!((0.0..=1.0).contains(&v), "value {v} escaped [0,1]");
        }
    }

    #[test]
    fn rejects_non_finite_and_singular_matrices() {
        let image = gray(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let spec = TransformSpec::Pan {
            dx: f64::NAN,
            dy: 0.0,
        };
        assert!(matches!(
            apply_transform(&image, &spec),
            Err(TransformError::NonFiniteEntry { .. })
        ));

        let spec = TransformSpec::Perspective {
            matrix: [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
        assert!(matches!(
            apply_transform(&image, &spec),
            Err(TransformError::NotInvertible { .. })
        ));

        let spec = TransformSpec::Perspective {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]],
        };
        assert!(matches!(
            apply_transform(&image, &spec),
            Err(TransformError::NotNormalized(v)) if v == 2.0
        ));

        let spec = TransformSpec::Affine {
            matrix: [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]],
        };
        assert!(matches!(
            apply_transform(&image, &spec),
            Err(TransformError::NotInvertible { .. })
        ));
    }

    #[test]
    fn spec_json_round_trips() {
        let specs = vec![
            TransformSpec::Pan { dx: -2.25, dy: 0.5 },
            TransformSpec::Rotate2d { angle_deg: -12.5 },
            TransformSpec::Affine {
                matrix: [[1.05, -0.02, 1.5], [0.03, 0.97, -2.0]],
            },
            TransformSpec::Perspective {
                matrix: [[1.01, 0.0, 0.1], [0.0, 0.99, -0.2], [1e-4, -2e-4, 1.0]],
            },
        ];
        for spec in specs {
            let json = serde_json::to_string(&spec).unwrap();
            let back: TransformSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back, spec);
        }
        let json = serde_json::to_string(&TransformSpec::Pan { dx: 1.0, dy: 2.0 }).unwrap();
        assert!(json.contains("\"kind\":\"pan\""), "tagged by kind: {json}");
    }

    #[test]
    fn kind_names_parse_and_print() {
        for kind in TransformKind::ALL {
            assert_eq!(kind.name().parse::<TransformKind>().unwrap(), kind);
        }
        assert!(matches!(
            "zoom".parse::<TransformKind>(),
            Err(TransformError::UnknownKind(k)) if k == "zoom"
        ));
    }

    #[test]
    fn same_seed_and_draw_index_reproduce_the_spec() {
        let policy = TransformPolicy::defaults_for(28, 28, 7);
        let a = choice(&policy, 28, 28, 42).unwrap();
        let b = choice(&policy, 28, 28, 42).unwrap();
        assert_eq!(a, b);
        let c = choice(&policy, 28, 28, 43).unwrap();
        assert_ne!(a, c, "distinct draw indices should almost surely differ");
    }

    #[test]
    fn fixed_kind_draw_matches_free_draw_when_kinds_coincide() {
        let policy = TransformPolicy::defaults_for(16, 16, 99);
        for draw_index in 0..200u64 {
            let free = choice(&policy, 16, 16, draw_index).unwrap();
            let fixed = choice_of_kind(&policy, free.kind(), 16, 16, draw_index).unwrap();
            assert_eq!(free, fixed, "draw {draw_index} diverged");
        }
    }

    #[test]
    fn draws_respect_policy_ranges() {
        let policy = TransformPolicy::defaults_for(20, 10, 3);
        for draw_index in 0..500u64 {
            match choice(&policy, 20, 10, draw_index).unwrap() {
                TransformSpec::Pan { dx, dy } => {
                    assert!(dx.abs() <= 2.0 + 1e-12 && dy.abs() <= 1.0 + 1e-12);
                }
                TransformSpec::Rotate2d { angle_deg } => {
                    assert!(angle_deg.abs() <= 15.0 + 1e-12);
                }
                TransformSpec::Affine { matrix } => {
                    assert!((matrix[0][0] - 1.0).abs() <= 0.1 + 1e-12);
                    assert!(matrix[0][1].abs() <= 0.1 + 1e-12);
                    assert!(matrix[1][0].abs() <= 0.1 + 1e-12);
                    assert!((matrix[1][1] - 1.0).abs() <= 0.1 + 1e-12);
                    assert!(matrix[0][2].abs() <= 2.0 + 1e-12);
                    assert!(matrix[1][2].abs() <= 1.0 + 1e-12);
                }
                TransformSpec::Perspective { matrix } => {
                    assert_eq!(matrix[2][2], 1.0);
                    let spec = TransformSpec::Perspective { matrix };
                    spec.validate().unwrap();
                }
            }
        }
    }

    #[test]
    fn empty_policy_is_rejected() {
        let mut policy = TransformPolicy::defaults_for(8, 8, 0);
        policy.enabled.clear();
        assert_eq!(
            choice(&policy, 8, 8, 0).unwrap_err(),
            TransformError::NoKindsEnabled
        );
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let mut policy = TransformPolicy::defaults_for(8, 8, 0);
        policy.rotate_deg = ParamRange::new(5.0, -5.0);
        assert!(matches!(
            choice(&policy, 8, 8, 0),
            Err(TransformError::BadRange { .. })
        ));
    }

    #[test]
    fn draw_index_hash_is_stable_and_spreads() {
        // Frozen FNV-1a test vectors.
        assert_eq!(draw_index_for_sample(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(draw_index_for_sample("a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(
            draw_index_for_sample("digits/test/0"),
            draw_index_for_sample("digits/test/0")
        );
        assert_ne!(
            draw_index_for_sample("digits/test/0"),
            draw_index_for_sample("digits/test/1")
        );
    }

    #[test]
    fn homography_solution_maps_corners_onto_targets() {
        let src = [[0.0, 0.0], [8.0, 0.0], [8.0, 8.0], [0.0, 8.0]];
        let dst = [[0.4, -0.3], [7.8, 0.2], [8.5, 7.6], [-0.2, 8.3]];
        let h = homography_from_corners(&src, &dst).unwrap();
        for i in 0..4 {
            let [x, y] = src[i];
            let w = h[2][0] * x + h[2][1] * y + h[2][2];
            let u = (h[0][0] * x + h[0][1] * y + h[0][2]) / w;
            let v = (h[1][0] * x + h[1][1] * y + h[1][2]) / w;
            assert!(
                (u - dst[i][0]).abs() < 1e-9,
                "corner {i}: {u} vs {}",
                dst[i][0]
            );
            assert!(
                (v - dst[i][1]).abs() < 1e-9,
                "corner {i}: {v} vs {}",
                dst[i][1]
            );
        }
    }

    #[test]
    fn degenerate_corners_have_no_homography() {
        let src = [[0.0, 0.0], [8.0, 0.0], [8.0, 8.0], [0.0, 8.0]];
        let dst = [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert_eq!(
            homography_from_corners(&src, &dst).unwrap_err(),
            TransformError::DegenerateCorners
        );
    }

    #[test]
    fn round_trip_deviation_is_tiny_on_smooth_images() {
        // Bilinear warping is exact on bilinear surfaces, so a linear ramp
        // survives a there-and-back warp almost perfectly on the interior.
        let mut pixels = Vec::new();
        for y in 0..16 {
            for x in 0..16 {
                pixels.push((x as f64 + 2.0 * y as f64) / 48.0);
            }
        }
        let image = ImageTensor::new(16, 16, 1, pixels).unwrap();
        let specs = [
            TransformSpec::Pan { dx: 1.3, dy: -0.8 },
            TransformSpec::Rotate2d { angle_deg: 11.0 },
            TransformSpec::Affine {
                matrix: [[1.04, -0.03, 0.7], [0.02, 0.98, -0.4]],
            },
        ];
        for spec in specs {
            let deviation = compose_check(&image, &spec).unwrap();
            assert!(deviation <= 1e-6, "{spec:?} deviated by {deviation}");
        }
    }

    #[test]
    fn generated_specs_pass_the_round_trip_check() {
        let mut pixels = Vec::new();
        for y in 0..12 {
            for x in 0..12 {
                pixels.push((3.0 * x as f64 + y as f64) / 48.0);
            }
        }
        let image = ImageTensor::new(12, 12, 1, pixels).unwrap();
        let policy = TransformPolicy::defaults_for(12, 12, 5);
        for draw_index in 0..60u64 {
            let spec = choice(&policy, 12, 12, draw_index).unwrap();
            let deviation = compose_check(&image, &spec).unwrap();
            // Affine-family warps keep the ramp linear, where bilinear
            // resampling is exact; projective warps bend it into a rational
            // surface and pay real interpolation loss.
            let bound = match spec.kind() {
                TransformKind::Perspective => 0.01,
                _ => 1e-6,
            };
            assert!(
                deviation <= bound,
                "draw {draw_index} {spec:?}: {deviation}"
            );
        }
    }

    #[test]
    fn inverse_specs_invert() {
        let spec = TransformSpec::Affine {
            matrix: [[1.1, 0.05, 2.0], [-0.04, 0.93, -1.0]],
        };
        if let TransformSpec::Affine { matrix: inv } = spec.inverse().unwrap() {
            // Composing forward and inverse must give the identity map.
            let compose = |p: [f64; 2]| {
                let q = [spec_apply(&spec, p)[0], spec_apply(&spec, p)[1]];
                spec_apply(&TransformSpec::Affine { matrix: inv }, q)
            };
            for p in [[0.0, 0.0], [3.0, 4.0], [-2.0, 7.5]] {
                let r = compose(p);
                assert!((r[0] - p[0]).abs() < 1e-9 && (r[1] - p[1]).abs() < 1e-9);
            }
        } else {
            panic!("inverse changed kind");
        }
    }

    fn spec_apply(spec: &TransformSpec, p: [f64; 2]) -> [f64; 2] {
        match spec {
            TransformSpec::Affine { matrix } => [
                matrix[0][0] * p[0] + matrix[0][1] * p[1] + matrix[0][2],
                matrix[1][0] * p[0] + matrix[1][1] * p[1] + matrix[1][2],
            ],
            _ => unreachable!(),
        }
    }
}
