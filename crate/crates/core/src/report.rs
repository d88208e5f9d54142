//! Triage reports: error-ratio matrices, flag galleries, and their renderers.
//!
//! The matrix crosses Shannon-index slices (rows) with transform kinds
//! (columns); each cell is `errors / candidates` over the correctly predicted
//! members of that slice, each warped once by its per-sample seeded draw.
//! Confidently mispredicted samples are listed as flags with image previews.
//!
//! One [`TriageReport`] value renders to machine-readable JSON, a markdown
//! table, or a self-contained HTML gallery with inline PNG previews.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use base64::Engine as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ClassifierHandle;
use crate::dataset::{ImageTensor, Sample};
use crate::entropy::PredictionRecord;
use crate::selection::{classify_transformed, detect, SelectionError, ThresholdConfig};
use crate::transforms::{
    apply_transform, choice_of_kind, draw_index_for_sample, TransformKind, TransformPolicy,
    TransformSpec,
};

/// Bumped when the JSON layout changes shape.
pub const REPORT_VERSION: u32 = 1;

/// How many generated errors carry image previews into the gallery.
pub const ERROR_PREVIEW_LIMIT: usize = 12;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("cannot encode preview for {id:?}: {message}")]
    PngEncode { id: String, message: String },
    #[error("preview for {id:?} has {channels} channels; previews support 1 or 3")]
    UnsupportedChannels { id: String, channels: usize },
    #[error("cannot parse slice {0:?}: expected e.g. `s<0.001` or `s>0.4`")]
    BadSlice(String),
}

/// Which side of a threshold a slice keeps. Both comparisons are strict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceSide {
    Below,
    Above,
}

/// One entropy slice, e.g. `s < 0.001` or `s > 0.4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub side: SliceSide,
    pub tau: f64,
}

impl SliceSpec {
    pub fn below(tau: f64) -> Self {
        Self {
            side: SliceSide::Below,
            tau,
        }
    }

    pub fn above(tau: f64) -> Self {
        Self {
            side: SliceSide::Above,
            tau,
        }
    }

    pub fn matches(&self, shannon: f64) -> bool {
        match self.side {
            SliceSide::Below => shannon < self.tau,
            SliceSide::Above => shannon > self.tau,
        }
    }
}

impl fmt::Display for SliceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.side {
            SliceSide::Below => '<',
            SliceSide::Above => '>',
        };
        write!(f, "s {op} {}", self.tau)
    }
}

impl FromStr for SliceSpec {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let rest = compact.strip_prefix('s').unwrap_or(&compact);
        let (side, number) = if let Some(number) = rest.strip_prefix('<') {
            (SliceSide::Below, number)
        } else if let Some(number) = rest.strip_prefix('>') {
            (SliceSide::Above, number)
        } else {
            return Err(ReportError::BadSlice(s.to_string()));
        };
        let tau: f64 = number
            .parse()
            .map_err(|_| ReportError::BadSlice(s.to_string()))?;
        if !tau.is_finite() || tau < 0.0 {
            return Err(ReportError::BadSlice(s.to_string()));
        }
        Ok(SliceSpec { side, tau })
    }
}

/// The default report rows: near-zero entropy vs. above the generation
/// threshold.
pub fn default_slices() -> Vec<SliceSpec> {
    vec![SliceSpec::below(0.001), SliceSpec::above(0.4)]
}

/// One matrix cell: trials and failures for (slice, transform kind).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub candidates: usize,
    pub errors: usize,
}

impl MatrixCell {
    pub fn error_ratio(&self) -> Option<f64> {
        if self.candidates == 0 {
            None
        } else {
            Some(self.errors as f64 / self.candidates as f64)
        }
    }
}

/// A flagged sample with its inline PNG preview.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagPreview {
    pub sample_id: String,
    pub label: usize,
    pub predicted_label: usize,
    pub shannon: f64,
    pub png_base64: String,
}

/// A generated error with the warped image that flipped the prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPreview {
    pub sample_id: String,
    pub transform: TransformSpec,
    pub original_label: usize,
    pub transformed_prediction: usize,
    pub png_base64: String,
}

/// Everything needed to regenerate the run, minus the data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub dataset: String,
    pub backend: String,
    pub tau_low: f64,
    pub tau_high: f64,
    pub policy: TransformPolicy,
    /// `None` by default so identical runs write identical bytes; callers
    /// may stamp it when wall-clock context matters more than reproducibility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageReport {
    pub report_version: u32,
    pub metadata: RunMetadata,
    pub slices: Vec<SliceSpec>,
    pub transforms: Vec<TransformKind>,
    /// `cells[row][column]` pairs `slices[row]` with `transforms[column]`.
    pub cells: Vec<Vec<MatrixCell>>,
    pub flags: Vec<FlagPreview>,
    pub error_previews: Vec<ErrorPreview>,
}

/// Borrowed inputs shared by the report builders.
pub struct ReportContext<'a> {
    pub dataset: &'a str,
    pub records: &'a [PredictionRecord],
    pub samples: &'a [Sample],
    pub labels: &'a BTreeMap<String, usize>,
    pub policy: &'a TransformPolicy,
    pub classifier: &'a ClassifierHandle,
    pub thresholds: ThresholdConfig,
}

impl<'a> ReportContext<'a> {
    fn metadata(&self) -> RunMetadata {
        RunMetadata {
            dataset: self.dataset.to_string(),
            backend: self.classifier.backend_kind().to_string(),
            tau_low: self.thresholds.tau_low,
            tau_high: self.thresholds.tau_high,
            policy: self.policy.clone(),
            timestamp: None,
        }
    }

    fn sample(&self, id: &str) -> Result<&'a Sample, ReportError> {
        self.samples
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| SelectionError::MissingSample(id.to_string()).into())
    }
}

/// Build the slice × transform error matrix plus the flag gallery.
pub fn build_matrix_report(
    ctx: &ReportContext,
    slices: &[SliceSpec],
) -> Result<TriageReport, ReportError> {
    let by_id: BTreeMap<&str, &Sample> = ctx.samples.iter().map(|s| (s.id.as_str(), s)).collect();

    // Row members: in the slice AND correctly predicted — the same gate the
    // generation algorithm applies, so `s > tau_high` rows reproduce its
    // candidate set.
    let mut cells = Vec::with_capacity(slices.len());
    let mut error_tuples: Vec<(String, TransformSpec, usize, usize)> = Vec::new();
    for slice in slices {
        let members: Vec<&PredictionRecord> = ctx
            .records
            .iter()
            .filter(|r| {
                slice.matches(r.shannon.value())
                    && ctx.labels.get(&r.sample_id) == Some(&r.predicted_label)
            })
            .collect();
        let mut row = Vec::with_capacity(ctx.policy.enabled.len());
        for &kind in &ctx.policy.enabled {
            let outcomes: Vec<Result<(String, TransformSpec, usize, usize), SelectionError>> =
                members
                    .par_iter()
                    .map(|record| {
                        let id = record.sample_id.as_str();
                        let sample = by_id
                            .get(id)
                            .ok_or_else(|| SelectionError::MissingSample(id.to_string()))?;
                        let (height, width, _) = sample.image.shape();
                        let spec = choice_of_kind(
                            ctx.policy,
                            kind,
                            width,
                            height,
                            draw_index_for_sample(id),
                        )
                        .map_err(|source| SelectionError::Transform {
                            id: id.to_string(),
                            source,
                        })?;
                        let label = *ctx.labels.get(id).expect("membership checked label");
                        let (spec, predicted) = classify_transformed(sample, spec, ctx.classifier)?;
                        Ok((id.to_string(), spec, label, predicted))
                    })
                    .collect();
            let mut errors = 0;
            for outcome in outcomes {
                let (id, spec, label, predicted) = outcome?;
                if predicted != label {
                    errors += 1;
                    error_tuples.push((id, spec, label, predicted));
                }
            }
            row.push(MatrixCell {
                candidates: members.len(),
                errors,
            });
        }
        cells.push(row);
    }

    let flags = flag_previews(ctx)?;

    error_tuples.truncate(ERROR_PREVIEW_LIMIT);
    let mut error_previews = Vec::with_capacity(error_tuples.len());
    for (id, spec, label, predicted) in error_tuples {
        let sample = ctx.sample(&id)?;
        let warped =
            apply_transform(&sample.image, &spec).map_err(|source| SelectionError::Transform {
                id: id.clone(),
                source,
            })?;
        error_previews.push(ErrorPreview {
            png_base64: encode_png(&id, &warped)?,
            sample_id: id,
            transform: spec,
            original_label: label,
            transformed_prediction: predicted,
        });
    }

    Ok(TriageReport {
        report_version: REPORT_VERSION,
        metadata: ctx.metadata(),
        slices: slices.to_vec(),
        transforms: ctx.policy.enabled.clone(),
        cells,
        flags,
        error_previews,
    })
}

/// Build a flags-only report (empty matrix) for detection runs.
pub fn build_flag_report(ctx: &ReportContext) -> Result<TriageReport, ReportError> {
    Ok(TriageReport {
        report_version: REPORT_VERSION,
        metadata: ctx.metadata(),
        slices: vec![],
        transforms: vec![],
        cells: vec![],
        flags: flag_previews(ctx)?,
        error_previews: vec![],
    })
}

fn flag_previews(ctx: &ReportContext) -> Result<Vec<FlagPreview>, ReportError> {
    let flag_set = detect(ctx.records, ctx.labels, ctx.thresholds.tau_low)?;
    let mut previews = Vec::with_capacity(flag_set.entries.len());
    for flag in flag_set.entries {
        let sample = ctx.sample(&flag.sample_id)?;
        previews.push(FlagPreview {
            png_base64: encode_png(&flag.sample_id, &sample.image)?,
            sample_id: flag.sample_id,
            label: flag.label,
            predicted_label: flag.predicted_label,
            shannon: flag.shannon,
        });
    }
    Ok(previews)
}

/// Quantize to 8-bit, encode as PNG, and base64 the bytes.
fn encode_png(id: &str, image: &ImageTensor) -> Result<String, ReportError> {
    let (height, width, channels) = image.shape();
    let quantized: Vec<u8> = image
        .pixels()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    let mut bytes = Vec::new();
    let mut cursor = std::io::Cursor::new(&mut bytes);
    let encode_failed = |message: String| ReportError::PngEncode {
        id: id.to_string(),
        message,
    };
    match channels {
        1 => image::GrayImage::from_raw(width as u32, height as u32, quantized)
            .expect("buffer sized by shape")
            .write_to(&mut cursor, image::ImageFormat::Png)
            .map_err(|e| encode_failed(e.to_string()))?,
        3 => image::RgbImage::from_raw(width as u32, height as u32, quantized)
            .expect("buffer sized by shape")
            .write_to(&mut cursor, image::ImageFormat::Png)
            .map_err(|e| encode_failed(e.to_string()))?,
        channels => {
            return Err(ReportError::UnsupportedChannels {
                id: id.to_string(),
                channels,
            })
        }
    }
    Ok(base64::engine::general_purpose::STANDARD.encode(&bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
    HtmlGallery,
}

pub fn render(report: &TriageReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => render_json(report),
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::HtmlGallery => render_html_gallery(report),
    }
}

pub fn render_json(report: &TriageReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serializes");
    out.push('\n');
    out
}

/// The matrix as a markdown table: ratios at two decimals, `—` for empty
/// cells, counts listed below.
pub fn render_markdown(report: &TriageReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# Entropy triage report: {}\n\n",
        report.metadata.dataset
    ));
    out.push_str(&format!(
        "Backend `{}`, seed {}, tau_low {}, tau_high {}.\n\n",
        report.metadata.backend,
        report.metadata.policy.seed,
        report.metadata.tau_low,
        report.metadata.tau_high,
    ));

    if !report.slices.is_empty() {
        out.push_str("## Error ratio by Shannon slice and transform\n\n");
        out.push_str("| slice |");
        for kind in &report.transforms {
            out.push_str(&format!(" {kind} |"));
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &report.transforms {
            out.push_str("---|");
        }
        out.push('\n');
        for (slice, row) in report.slices.iter().zip(&report.cells) {
            out.push_str(&format!("| {slice} |"));
            for cell in row {
                match cell.error_ratio() {
                    Some(ratio) => out.push_str(&format!(" {ratio:.2} |")),
                    None => out.push_str(" — |"),
                }
            }
            out.push('\n');
        }
        out.push('\n');
        for (slice, row) in report.slices.iter().zip(&report.cells) {
            let candidates = row.first().map_or(0, |cell| cell.candidates);
            out.push_str(&format!(
                "- `{slice}`: {candidates} correctly predicted member(s)\n"
            ));
        }
        out.push('\n');
    }

    out.push_str(&format!(
        "Flagged as likely mislabeled: {}\n",
        report.flags.len()
    ));
    for flag in &report.flags {
        out.push_str(&format!(
            "- `{}` — Label: {} / Prediction: {} (s = {:.4})\n",
            flag.sample_id, flag.label, flag.predicted_label, flag.shannon
        ));
    }
    out
}

/// Self-contained HTML gallery: every flag and every error preview as an
/// inline PNG with a `Label: X / Prediction: Y` caption.
pub fn render_html_gallery(report: &TriageReport) -> String {
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    out.push_str(&format!(
        "<title>Entropy triage gallery: {}</title>\n",
        escape_html(&report.metadata.dataset)
    ));
    out.push_str(
        "<style>\nbody { font-family: sans-serif; margin: 2rem; }\n\
         figure { display: inline-block; margin: 0.5rem; text-align: center; }\n\
         img { width: 96px; height: 96px; image-rendering: pixelated; border: 1px solid #888; }\n\
         figcaption { font-size: 0.8rem; max-width: 12rem; }\n</style>\n</head>\n<body>\n",
    );
    out.push_str(&format!(
        "<h1>Entropy triage gallery: {}</h1>\n",
        escape_html(&report.metadata.dataset)
    ));
    out.push_str(&format!(
        "<p>Backend <code>{}</code>, seed {}, tau_low {}, tau_high {}.</p>\n",
        escape_html(&report.metadata.backend),
        report.metadata.policy.seed,
        report.metadata.tau_low,
        report.metadata.tau_high,
    ));

    out.push_str(&format!(
        "<h2>Flagged samples ({})</h2>\n",
        report.flags.len()
    ));
    for flag in &report.flags {
        out.push_str(&format!(
            "<figure>\n<img src=\"data:image/png;base64,{}\" alt=\"{}\">\n\
             <figcaption>Label: {} / Prediction: {}<br><code>{}</code> s = {:.4}</figcaption>\n</figure>\n",
            flag.png_base64,
            escape_html(&flag.sample_id),
            flag.label,
            flag.predicted_label,
            escape_html(&flag.sample_id),
            flag.shannon,
        ));
    }

    out.push_str(&format!(
        "<h2>Generated errors ({})</h2>\n",
        report.error_previews.len()
    ));
    for preview in &report.error_previews {
        out.push_str(&format!(
            "<figure>\n<img src=\"data:image/png;base64,{}\" alt=\"{}\">\n\
             <figcaption>Label: {} / Prediction: {}<br><code>{}</code> via {}</figcaption>\n</figure>\n",
            preview.png_base64,
            escape_html(&preview.sample_id),
            preview.original_label,
            preview.transformed_prediction,
            escape_html(&preview.sample_id),
            preview.transform.kind(),
        ));
    }

    out.push_str("</body>\n</html>\n");
    out
}

fn escape_html(text: &str) -> String {
    text.chars()
        .flat_map(|c| match c {
            '&' => "&amp;".chars().collect::<Vec<_>>(),
            '<' => "&lt;".chars().collect(),
            '>' => "&gt;".chars().collect(),
            '"' => "&quot;".chars().collect(),
            c => vec![c],
        })
        .collect()
}
