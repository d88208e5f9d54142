//! Run configuration: a TOML file plus command-line overrides.
//!
//! The file is the single source for dataset and backend wiring; flags win
//! over file values field by field. Relative paths in the file resolve
//! against the file's directory, relative paths given as flags against the
//! working directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use entriage_core::report::SliceSpec;
use entriage_core::selection::ThresholdConfig;
use entriage_core::transforms::{ParamRange, TransformKind, TransformPolicy};

pub const DEFAULT_EXTERNAL_TIMEOUT_SECS: u64 = 30;

/// The on-disk schema. Everything optional except the dataset wiring so a
/// minimal file stays minimal; unknown keys are rejected instead of ignored.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    manifest: PathBuf,
    splits: Vec<String>,
    backend: Option<String>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    #[serde(default)]
    thresholds: ThresholdSection,
    #[serde(default)]
    transforms: TransformSection,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    matrix: MatrixSection,
    #[serde(default)]
    external: ExternalSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdSection {
    tau_low: Option<f64>,
    tau_high: Option<f64>,
}

/// Transform draw ranges as scale-free knobs: fractions of the image
/// dimensions plus a degree span, converted to concrete [`ParamRange`]s once
/// the image size is known.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformSection {
    enabled: Option<Vec<String>>,
    seed: Option<u64>,
    pan_frac: Option<f64>,
    rotate_deg: Option<f64>,
    affine_entry: Option<f64>,
    translate_frac: Option<f64>,
    corner_frac: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    taus: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixSection {
    slices: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternalSection {
    timeout_secs: Option<u64>,
}

/// How to reach the classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    /// `builtin:<model-file>`
    Builtin(PathBuf),
    /// `cache:<predictions-csv>`
    Cache(PathBuf),
    /// `external:<command and args, whitespace-separated>`
    External(Vec<String>),
}

impl BackendSpec {
    fn parse(descriptor: &str, base: &Path) -> Result<Self> {
        let (scheme, rest) = descriptor.split_once(':').ok_or_else(|| {
            anyhow!("backend {descriptor:?} has no scheme; expected builtin:, cache:, or external:")
        })?;
        match scheme {
            "builtin" => Ok(BackendSpec::Builtin(base.join(rest))),
            "cache" => Ok(BackendSpec::Cache(base.join(rest))),
            "external" => {
                let command: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
                if command.is_empty() {
                    bail!("backend {descriptor:?} has an empty command");
                }
                Ok(BackendSpec::External(command))
            }
            other => bail!("backend scheme {other:?} is not builtin, cache, or external"),
        }
    }

    /// The descriptor with paths as resolved, for the resolved-config copy.
    pub fn descriptor(&self) -> String {
        match self {
            BackendSpec::Builtin(path) => format!("builtin:{}", path.display()),
            BackendSpec::Cache(path) => format!("cache:{}", path.display()),
            BackendSpec::External(command) => format!("external:{}", command.join(" ")),
        }
    }
}

/// Flag-level overrides in working-directory terms.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub tau_low: Option<f64>,
    pub tau_high: Option<f64>,
    pub seed: Option<u64>,
    pub transforms: Option<String>,
    pub backend: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Everything resolved: absolute-enough paths, parsed enums, checked ranges.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub splits: Vec<String>,
    pub backend: BackendSpec,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub thresholds: ThresholdConfig,
    pub enabled: Vec<TransformKind>,
    pub seed: u64,
    pub pan_frac: f64,
    pub rotate_deg: f64,
    pub affine_entry: f64,
    pub translate_frac: f64,
    pub corner_frac: f64,
    pub sweep_taus: Option<Vec<f64>>,
    pub slices: Vec<SliceSpec>,
    pub external_timeout: Duration,
}

impl RunConfig {
    pub fn load(config_path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(config_path)
            .with_context(|| format!("cannot read config file {}", config_path.display()))?;
        let file: FileConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", config_path.display()))?;
        let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();

        if file.splits.is_empty() {
            bail!("config lists no splits");
        }
        let mut seen = std::collections::BTreeSet::new();
        for split in &file.splits {
            if !seen.insert(split) {
                bail!("split {split:?} is listed twice");
            }
        }

        let backend = match (&overrides.backend, &file.backend) {
            (Some(descriptor), _) => BackendSpec::parse(descriptor, Path::new("."))?,
            (None, Some(descriptor)) => BackendSpec::parse(descriptor, &base)?,
            (None, None) => bail!("no backend: set `backend` in the config or pass --backend"),
        };

        let thresholds = ThresholdConfig {
            tau_low: overrides
                .tau_low
                .or(file.thresholds.tau_low)
                .unwrap_or(ThresholdConfig::default().tau_low),
            tau_high: overrides
                .tau_high
                .or(file.thresholds.tau_high)
                .unwrap_or(ThresholdConfig::default().tau_high),
        };
        ThresholdConfig::new(thresholds.tau_low, thresholds.tau_high)?;

        let enabled_source = match &overrides.transforms {
            Some(list) => Some(list.split(',').map(str::to_string).collect::<Vec<_>>()),
            None => file.transforms.enabled.clone(),
        };
        let enabled = match enabled_source {
            None => TransformKind::ALL.to_vec(),
            Some(names) => names
                .iter()
                .map(|name| name.trim().parse::<TransformKind>())
                .collect::<Result<Vec<_>, _>>()?,
        };
        if enabled.is_empty() {
            bail!("transform list is empty");
        }

        let workers = overrides.workers.or(file.workers).unwrap_or(1);
        if workers == 0 {
            bail!("workers must be at least 1");
        }

        let fraction = |name: &str, value: Option<f64>, default: f64| -> Result<f64> {
            let v = value.unwrap_or(default);
            if !v.is_finite() || v < 0.0 {
                bail!("transforms.{name} must be finite and non-negative, got {v}");
            }
            Ok(v)
        };

        let slices = match &file.matrix.slices {
            None => entriage_core::report::default_slices(),
            Some(texts) => texts
                .iter()
                .map(|text| text.parse::<SliceSpec>())
                .collect::<Result<Vec<_>, _>>()?,
        };
        if slices.is_empty() {
            bail!("matrix.slices is empty");
        }

        if let Some(taus) = &file.sweep.taus {
            validate_sweep_taus(taus)?;
        }

        Ok(RunConfig {
            manifest: base.join(&file.manifest),
            splits: file.splits,
            backend,
            out: overrides
                .out
                .clone()
                .or_else(|| file.out.as_ref().map(|o| base.join(o))),
            workers,
            thresholds,
            enabled,
            seed: overrides.seed.or(file.transforms.seed).unwrap_or(0),
            pan_frac: fraction("pan_frac", file.transforms.pan_frac, 0.1)?,
            rotate_deg: fraction("rotate_deg", file.transforms.rotate_deg, 15.0)?,
            affine_entry: fraction("affine_entry", file.transforms.affine_entry, 0.1)?,
            translate_frac: fraction("translate_frac", file.transforms.translate_frac, 0.1)?,
            corner_frac: fraction("corner_frac", file.transforms.corner_frac, 0.1)?,
            sweep_taus: file.sweep.taus,
            slices,
            external_timeout: Duration::from_secs(
                file.external
                    .timeout_secs
                    .unwrap_or(DEFAULT_EXTERNAL_TIMEOUT_SECS),
            ),
        })
    }

    /// Concrete draw ranges for images of the given size.
    pub fn policy_for(&self, width: usize, height: usize) -> TransformPolicy {
        let mut policy = TransformPolicy::defaults_for(width, height, self.seed);
        policy.enabled = self.enabled.clone();
        policy.pan_dx = ParamRange::symmetric(self.pan_frac * width as f64);
        policy.pan_dy = ParamRange::symmetric(self.pan_frac * height as f64);
        policy.rotate_deg = ParamRange::symmetric(self.rotate_deg);
        policy.affine_entry = ParamRange::symmetric(self.affine_entry);
        policy.affine_tx = ParamRange::symmetric(self.translate_frac * width as f64);
        policy.affine_ty = ParamRange::symmetric(self.translate_frac * height as f64);
        policy.corner_dx = ParamRange::symmetric(self.corner_frac * width as f64);
        policy.corner_dy = ParamRange::symmetric(self.corner_frac * height as f64);
        policy
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| anyhow!("no output directory: set `out` in the config or pass --out"))
    }
}

pub fn validate_sweep_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        bail!("sweep.taus is empty");
    }
    if taus.iter().any(|tau| !tau.is_finite() || *tau < 0.0) {
        bail!("sweep.taus must be finite and non-negative: {taus:?}");
    }
    if taus.windows(2).any(|pair| pair[0] >= pair[1]) {
        bail!("sweep.taus must be strictly increasing: {taus:?}");
    }
    Ok(())
}
