//! Command bodies: load the world once, predict once, then select/report.
//!
//! Every writing mode leaves `predictions.csv` and `resolved_config.toml`
//! in the output directory, and all artifact bytes are canonical — sorted by
//! sample id and independent of `--workers`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use entriage_core::classifier::{ClassifierHandle, ExternalSpec};
use entriage_core::dataset::{DatasetManifest, Sample};
use entriage_core::entropy::{PredictionRecord, PredictionVector};
use entriage_core::report::{
    build_flag_report, build_matrix_report, render_html_gallery, render_json, render_markdown,
    ReportContext, ReportError,
};
use entriage_core::selection::{
    build_candidates, detect, generate, label_map, replay as replay_entries, threshold_sweep,
    ErrorSet, SelectionError,
};
use entriage_core::transforms::TransformPolicy;

use crate::config::{BackendSpec, RunConfig};

/// Which phase failed; decides the exit code and prefixes the message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Backend,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Backend => "backend",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug)]
pub struct Failure {
    pub stage: Stage,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            stage: Stage::Config,
            error: error.into(),
        }
    }

    pub fn backend(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            stage: Stage::Backend,
            error: error.into(),
        }
    }

    pub fn write(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            stage: Stage::Write,
            error: error.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.stage {
            Stage::Config => 2,
            Stage::Backend | Stage::Write => 3,
        }
    }
}

/// Selection errors split by blame: classifier/transform trouble is a
/// runtime failure, everything else is bad input.
fn selection_failure(error: SelectionError) -> Failure {
    match &error {
        SelectionError::Predict { .. } | SelectionError::Transform { .. } => {
            Failure::backend(error)
        }
        _ => Failure::config(error),
    }
}

fn report_failure(error: ReportError) -> Failure {
    match error {
        ReportError::Selection(inner) => selection_failure(inner),
        other => Failure::write(other),
    }
}

struct World {
    config: RunConfig,
    dataset_name: String,
    class_count: usize,
    samples: Vec<Sample>,
    labels: BTreeMap<String, usize>,
    classifier: ClassifierHandle,
    policy: TransformPolicy,
}

fn load_world(config: RunConfig) -> Result<World, Failure> {
    let (manifest, base_dir) =
        DatasetManifest::from_path(&config.manifest).map_err(Failure::config)?;
    let samples = manifest
        .load_splits(&base_dir, &config.splits)
        .map_err(Failure::config)?;
    if samples.is_empty() {
        return Err(Failure::config(anyhow!(
            "splits {:?} contain no samples",
            config.splits
        )));
    }

    let classifier = match &config.backend {
        BackendSpec::Builtin(path) => {
            ClassifierHandle::builtin_from_path(path).map_err(Failure::config)?
        }
        BackendSpec::Cache(path) => {
            ClassifierHandle::cache_from_path(path).map_err(Failure::config)?
        }
        BackendSpec::External(command) => {
            let mut spec = ExternalSpec::new(command.clone(), manifest.class_count);
            spec.timeout = config.external_timeout;
            ClassifierHandle::external(spec).map_err(Failure::backend)?
        }
    };
    if classifier.class_count() != manifest.class_count {
        return Err(Failure::config(anyhow!(
            "backend predicts {} classes but dataset {:?} declares {}",
            classifier.class_count(),
            manifest.name,
            manifest.class_count
        )));
    }

    let (height, width, _) = samples[0].image.shape();
    let policy = config.policy_for(width, height);
    policy.validate().map_err(Failure::config)?;

    let labels = label_map(&samples);
    Ok(World {
        dataset_name: manifest.name.clone(),
        class_count: manifest.class_count,
        labels,
        samples,
        classifier,
        policy,
        config,
    })
}

/// One prediction per sample, in dataset order. The external backend gets
/// the whole batch pipelined; in-process backends fan out on the rayon pool.
fn predict_all(world: &World) -> Result<Vec<PredictionRecord>, Failure> {
    use rayon::prelude::*;

    let vectors: Vec<PredictionVector> = match &world.classifier {
        ClassifierHandle::External(_) => {
            let items: Vec<(&str, &entriage_core::dataset::ImageTensor)> = world
                .samples
                .iter()
                .map(|s| (s.id.as_str(), &s.image))
                .collect();
            world
                .classifier
                .predict_batch(&items)
                .map_err(Failure::backend)?
        }
        _ => {
            let results: Vec<_> = world
                .samples
                .par_iter()
                .map(|sample| world.classifier.predict(&sample.id, &sample.image))
                .collect();
            results
                .into_iter()
                .collect::<Result<Vec<_>, _>>()
                .map_err(Failure::backend)?
        }
    };

    Ok(world
        .samples
        .iter()
        .zip(vectors)
        .map(|(sample, probs)| PredictionRecord::new(sample.id.clone(), probs))
        .collect())
}

fn report_context<'a>(world: &'a World, records: &'a [PredictionRecord]) -> ReportContext<'a> {
    ReportContext {
        dataset: &world.dataset_name,
        records,
        samples: &world.samples,
        labels: &world.labels,
        policy: &world.policy,
        classifier: &world.classifier,
        thresholds: world.config.thresholds,
    }
}

/// The effective-configuration copy dropped into every output directory.
#[derive(Serialize)]
struct ResolvedSnapshot<'a> {
    mode: &'a str,
    manifest: String,
    splits: &'a [String],
    backend: String,
    workers: usize,
    external_timeout_secs: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep_taus: Option<&'a [f64]>,
    slices: Vec<String>,
    thresholds: entriage_core::selection::ThresholdConfig,
    policy: &'a TransformPolicy,
}

fn write_artifact(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::write)
}

/// Create the output directory, then drop the config snapshot and the
/// prediction table into it. Returns the directory path.
fn open_out_dir(
    world: &World,
    mode: &str,
    records: &[PredictionRecord],
) -> Result<PathBuf, Failure> {
    let out = world
        .config
        .out_dir()
        .map_err(Failure::config)?
        .to_path_buf();
    std::fs::create_dir_all(&out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
        .map_err(Failure::write)?;

    let snapshot = ResolvedSnapshot {
        mode,
        manifest: world.config.manifest.display().to_string(),
        splits: &world.config.splits,
        backend: world.config.backend.descriptor(),
        workers: world.config.workers,
        external_timeout_secs: world.config.external_timeout.as_secs(),
        sweep_taus: world.config.sweep_taus.as_deref(),
        slices: world.config.slices.iter().map(|s| s.to_string()).collect(),
        thresholds: world.config.thresholds,
        policy: &world.policy,
    };
    let toml_text = toml::to_string_pretty(&snapshot)
        .context("cannot serialize resolved config")
        .map_err(Failure::write)?;
    write_artifact(&out.join("resolved_config.toml"), &toml_text)?;

    let mut cache = entriage_core::classifier::PredictionCache::new(world.class_count);
    for record in records {
        cache
            .insert(record.sample_id.clone(), record.probs.clone())
            .map_err(Failure::write)?;
    }
    cache
        .save_csv(&out.join("predictions.csv"))
        .map_err(Failure::write)?;
    Ok(out)
}

fn json_pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    text
}

pub fn scan(config: RunConfig) -> Result<(), Failure> {
    let world = load_world(config)?;
    let records = predict_all(&world)?;
    let out = open_out_dir(&world, "scan", &records)?;

    let mut rows: Vec<String> = records
        .iter()
        .map(|r| {
            let label = world.labels[&r.sample_id];
            format!(
                "{},{},{},{:?}",
                r.sample_id,
                label,
                r.predicted_label,
                r.shannon.value()
            )
        })
        .collect();
    rows.sort();
    let mut table = String::from("sample_id,label,predicted_label,shannon\n");
    for row in rows {
        table.push_str(&row);
        table.push('\n');
    }
    write_artifact(&out.join("entropy.csv"), &table)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        mode: &'a str,
        dataset: &'a str,
        backend: &'a str,
        samples: usize,
        class_count: usize,
        mean_shannon: f64,
        max_shannon: f64,
    }
    let mean = records.iter().map(|r| r.shannon.value()).sum::<f64>() / records.len() as f64;
    let max = records
        .iter()
        .map(|r| r.shannon.value())
        .fold(0.0, f64::max);
    let summary = Summary {
        mode: "scan",
        dataset: &world.dataset_name,
        backend: world.classifier.backend_kind(),
        samples: records.len(),
        class_count: world.class_count,
        mean_shannon: mean,
        max_shannon: max,
    };
    write_artifact(&out.join("summary.json"), &json_pretty(&summary))?;

    println!(
        "scan: {} sample(s), mean shannon {:.4} -> {}",
        records.len(),
        mean,
        out.display()
    );
    Ok(())
}

pub fn cmd_generate(config: RunConfig) -> Result<(), Failure> {
    let world = load_world(config)?;
    let records = predict_all(&world)?;
    let candidates = build_candidates(&records, &world.labels, world.config.thresholds.tau_high)
        .map_err(selection_failure)?;
    let error_set = generate(
        &candidates,
        &world.samples,
        &world.policy,
        &world.classifier,
    )
    .map_err(selection_failure)?;

    let out = open_out_dir(&world, "generate", &records)?;
    write_artifact(&out.join("errors.jsonl"), &error_set.to_jsonl())?;
    write_artifact(&out.join("errors.csv"), &error_set.to_csv())?;

    #[derive(Serialize)]
    struct Summary<'a> {
        mode: &'a str,
        dataset: &'a str,
        backend: &'a str,
        samples: usize,
        candidates: usize,
        attempts: usize,
        errors: usize,
        error_ratio: Option<f64>,
        tau_high: f64,
        seed: u64,
    }
    let summary = Summary {
        mode: "generate",
        dataset: &world.dataset_name,
        backend: world.classifier.backend_kind(),
        samples: records.len(),
        candidates: candidates.members.len(),
        attempts: error_set.attempts,
        errors: error_set.entries.len(),
        error_ratio: error_set.error_ratio(),
        tau_high: world.config.thresholds.tau_high,
        seed: world.policy.seed,
    };
    write_artifact(&out.join("summary.json"), &json_pretty(&summary))?;

    println!(
        "generate: {} candidate(s), {} error(s) -> {}",
        candidates.members.len(),
        error_set.entries.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_detect(config: RunConfig) -> Result<(), Failure> {
    let world = load_world(config)?;
    let records = predict_all(&world)?;
    let flags = detect(&records, &world.labels, world.config.thresholds.tau_low)
        .map_err(selection_failure)?;
    let report = build_flag_report(&report_context(&world, &records)).map_err(report_failure)?;

    let out = open_out_dir(&world, "detect", &records)?;
    write_artifact(&out.join("flags.jsonl"), &flags.to_jsonl())?;
    write_artifact(&out.join("flags.csv"), &flags.to_csv())?;
    write_artifact(&out.join("gallery.html"), &render_html_gallery(&report))?;

    #[derive(Serialize)]
    struct Summary<'a> {
        mode: &'a str,
        dataset: &'a str,
        backend: &'a str,
        samples: usize,
        flags: usize,
        tau_low: f64,
    }
    let summary = Summary {
        mode: "detect",
        dataset: &world.dataset_name,
        backend: world.classifier.backend_kind(),
        samples: records.len(),
        flags: flags.entries.len(),
        tau_low: world.config.thresholds.tau_low,
    };
    write_artifact(&out.join("summary.json"), &json_pretty(&summary))?;

    println!(
        "detect: {} flag(s) among {} sample(s) -> {}",
        flags.entries.len(),
        records.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_matrix(config: RunConfig) -> Result<(), Failure> {
    let world = load_world(config)?;
    let records = predict_all(&world)?;
    let slices = world.config.slices.clone();
    let report =
        build_matrix_report(&report_context(&world, &records), &slices).map_err(report_failure)?;

    let out = open_out_dir(&world, "matrix", &records)?;
    write_artifact(&out.join("report.json"), &render_json(&report))?;
    write_artifact(&out.join("report.md"), &render_markdown(&report))?;

    println!(
        "matrix: {} slice(s) x {} transform(s) -> {}",
        report.slices.len(),
        report.transforms.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_sweep(config: RunConfig) -> Result<(), Failure> {
    let world = load_world(config)?;
    let taus = world
        .config
        .sweep_taus
        .clone()
        .ok_or_else(|| Failure::config(anyhow!("sweep needs a [sweep] taus list")))?;
    let records = predict_all(&world)?;
    let points = threshold_sweep(
        &records,
        &world.samples,
        &world.labels,
        &taus,
        &world.policy,
        &world.classifier,
    )
    .map_err(selection_failure)?;

    let out = open_out_dir(&world, "sweep", &records)?;
    let mut table = String::from("tau_high,candidates,errors,error_ratio\n");
    for point in &points {
        let ratio = point
            .error_ratio()
            .map(|r| format!("{r:?}"))
            .unwrap_or_default();
        table.push_str(&format!(
            "{:?},{},{},{}\n",
            point.tau_high, point.candidates, point.errors, ratio
        ));
    }
    write_artifact(&out.join("sweep.csv"), &table)?;

    println!("sweep: {} threshold(s) -> {}", points.len(), out.display());
    Ok(())
}

pub fn cmd_replay(config: RunConfig, errors_path: &Path) -> Result<i32, Failure> {
    let world = load_world(config)?;
    let text = std::fs::read_to_string(errors_path)
        .with_context(|| format!("cannot read {}", errors_path.display()))
        .map_err(Failure::config)?;
    let entries = ErrorSet::entries_from_jsonl(&text).map_err(selection_failure)?;
    let outcome =
        replay_entries(&entries, &world.samples, &world.classifier).map_err(selection_failure)?;

    println!(
        "replay: {}/{} entr{} reproduced",
        outcome.reproduced,
        outcome.total,
        if outcome.total == 1 { "y" } else { "ies" }
    );
    for mismatch in &outcome.mismatches {
        println!(
            "  {}: expected prediction {}, observed {}",
            mismatch.sample_id, mismatch.expected_prediction, mismatch.observed_prediction
        );
    }
    Ok(if outcome.all_reproduced() { 0 } else { 1 })
}
