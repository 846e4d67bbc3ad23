//! End-to-end audit: ingest, clean, delineate, featurise, split, tune,
//! evaluate, explain and report, with every intermediate written to disk.

mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cohort::{assign_age_group, split, SplitPlan, Task};
use crate::delineate::{delineate_beats, detect_r_peaks, read_annotations, write_annotations, BeatAnnotation, DelineationConfig, DetectError};
use crate::ecg_io::{generate_population, ColumnSelector, EcgRecord, IngestError, SyntheticPopulationConfig};
use crate::evaluate::{evaluate, reference_compare, summary_csv, EvalReport};
use crate::explain::{render_summary_svg, shap_summary, Scale, ShapSummary, SummaryConfig, DEFAULT_BACKGROUND, DEFAULT_MAX_POINTS};
use crate::features::{windowed_features, DropCounts, FeatureTable, WindowConfig, WindowLabels};
use crate::models::{tune, Dataset, HyperParams, LearnerRegistry, TrainedModel, TuneOutcome};
use crate::preprocess::{clean, FilterSpec};
use crate::seeds;

pub use manifest::{export_population, export_records, load_manifest, InputManifest, ManifestEntry};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Input(#[from] IngestError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl AuditError {
    /// 2 for bad input or configuration, 3 for a failure inside a stage.
    pub fn exit_code(&self) -> u8 {
        match self {
            AuditError::Config(_) | AuditError::Input(_) => 2,
            AuditError::Io { .. } | AuditError::Stage { .. } => 3,
        }
    }

    fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        AuditError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    /// JSON manifest of signal/metadata pairs.
    Manifest {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<ColumnSelector>,
    },
    Synthetic(SyntheticPopulationConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainSettings {
    pub enabled: bool,
    pub background_size: usize,
    pub max_points: usize,
    pub scale: Scale,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            background_size: DEFAULT_BACKGROUND,
            max_points: DEFAULT_MAX_POINTS,
            scale: Scale::Probability,
        }
    }
}

fn all_tasks() -> Vec<Task> {
    Task::ALL.to_vec()
}

fn all_models() -> Vec<String> {
    LearnerRegistry::with_defaults().names().map(str::to_string).collect()
}

/// Everything that determines an audit's numeric output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputSource,
    #[serde(default)]
    pub filter: FilterSpec,
    #[serde(default)]
    pub delineation: DelineationConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default = "all_tasks")]
    pub tasks: Vec<Task>,
    #[serde(default = "all_models")]
    pub models: Vec<String>,
    pub seed: u64,
    #[serde(default)]
    pub explain: ExplainSettings,
}

impl RunConfig {
    pub fn new(input: InputSource, seed: u64) -> Self {
        Self {
            input,
            filter: FilterSpec::default(),
            delineation: DelineationConfig::default(),
            window: WindowConfig::default(),
            tasks: all_tasks(),
            models: all_models(),
            seed,
            explain: ExplainSettings::default(),
        }
    }

    pub fn validate(&self, registry: &LearnerRegistry) -> Result<(), AuditError> {
        if self.tasks.is_empty() {
            return Err(AuditError::Config("no tasks selected".into()));
        }
        if self.models.is_empty() {
            return Err(AuditError::Config("no models selected".into()));
        }
        for m in &self.models {
            registry.get(m).map_err(|e| AuditError::Config(e.to_string()))?;
        }
        if !(self.window.window_s > 0.0 && self.window.window_s.is_finite()) {
            return Err(AuditError::Config(format!("window length must be positive, got {}", self.window.window_s)));
        }
        if let InputSource::Synthetic(s) = &self.input {
            self.filter
                .validate(s.sampling_rate_hz)
                .map_err(|e| AuditError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, AuditError> {
        serde_json::from_str(text).map_err(|e| AuditError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Child seed for a named stage, e.g. `split/gender` or `train/gender/forest`.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    seeds::derive(root, stage)
}

pub fn split_stage(task: Task) -> String {
    format!("split/{}", task.name())
}

pub fn train_stage(task: Task, model: &str) -> String {
    format!("train/{}/{model}", task.name())
}

pub fn explain_stage(task: Task, model: &str) -> String {
    format!("explain/{}/{model}", task.name())
}

/// File-name-safe form of an identifier.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn annotation_file(index: usize, participant_id: &str) -> String {
    format!("{index:03}_{}.csv", file_stem(participant_id))
}

pub fn load_records(input: &InputSource) -> Result<Vec<EcgRecord>, AuditError> {
    match input {
        InputSource::Manifest { path, column } => Ok(load_manifest(path, column.as_ref())?),
        InputSource::Synthetic(cfg) => Ok(generate_population(cfg)?.records),
    }
}

/// Outcome of featurising one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub record: usize,
    pub participant_id: String,
    pub samples: usize,
    pub beats: usize,
    pub drops: DropCounts,
    pub error: Option<String>,
}

pub struct FeatureRun {
    pub table: FeatureTable,
    /// Delineated beats per record, empty for records that failed.
    pub beats: Vec<Vec<BeatAnnotation>>,
    pub outcomes: Vec<RecordOutcome>,
}

impl FeatureRun {
    pub fn drops_csv(&self) -> String {
        let mut out = String::from("record,participant_id,samples,beats,windows,kept,too_few_beats,undefined,status\n");
        for o in &self.outcomes {
            let d = &o.drops;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                o.record,
                o.participant_id,
                o.samples,
                o.beats,
                d.windows,
                d.kept,
                d.too_few_beats,
                d.undefined,
                o.error.as_deref().map_or("ok".to_string(), |e| format!("\"failed: {}\"", e.replace('"', "'")))
            ));
        }
        out
    }

    pub fn total_drops(&self) -> DropCounts {
        let mut total = DropCounts::default();
        for o in &self.outcomes {
            total.merge(o.drops);
        }
        total
    }
}

/// Cleans, delineates and featurises every record. With `annotations`,
/// fiducials are read from `<dir>/<annotation_file>` instead of detected.
///
/// Window indices continue across records of the same participant, in
/// input order.
pub fn extract_features(
    records: &[EcgRecord],
    cfg: &RunConfig,
    annotations: Option<&Path>,
) -> Result<FeatureRun, AuditError> {
    struct One {
        beats: Vec<BeatAnnotation>,
        rows: Vec<crate::features::FeatureVector>,
        outcome: RecordOutcome,
    }
    let results: Vec<Result<One, AuditError>> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut outcome = RecordOutcome {
                record: i,
                participant_id: rec.participant_id.clone(),
                samples: rec.samples.len(),
                beats: 0,
                drops: DropCounts::default(),
                error: None,
            };
            let age_group = assign_age_group(rec.age).map_err(|e| AuditError::Config(format!("{}: {e}", rec.participant_id)))?;
            let fs = rec.sampling_rate_hz;
            let cleaned = match clean(rec, &cfg.filter) {
                Ok(c) => c,
                Err(e) => {
                    outcome.error = Some(e.to_string());
                    return Ok(One {
                        beats: Vec::new(),
                        rows: Vec::new(),
                        outcome,
                    });
                }
            };
            let beats = match annotations {
                Some(dir) => read_annotations(&dir.join(annotation_file(i, &rec.participant_id)), &cleaned.samples, fs)
                    .map_err(|e| AuditError::Config(e.to_string()))?,
                None => match detect_r_peaks(&cleaned.samples, fs) {
                    Ok(r) => delineate_beats(&cleaned.samples, fs, &r, &cfg.delineation),
                    Err(e @ (DetectError::Config(_) | DetectError::TooShort { .. })) => {
                        outcome.error = Some(e.to_string());
                        Vec::new()
                    }
                    Err(e) => return Err(AuditError::stage("delineate", e)),
                },
            };
            outcome.beats = beats.len();
            let labels = WindowLabels {
                participant_id: rec.participant_id.clone(),
                gender: rec.gender,
                age_group,
            };
            let (rows, drops) = if outcome.error.is_none() {
                windowed_features(&beats, fs, cleaned.samples.len(), &labels, &cfg.window)
            } else {
                (Vec::new(), DropCounts::default())
            };
            outcome.drops = drops;
            Ok(One { beats, rows, outcome })
        })
        .collect();

    let mut table = FeatureTable::new(cfg.window.intervals);
    let mut all_beats = Vec::with_capacity(records.len());
    let mut outcomes = Vec::with_capacity(records.len());
    let mut offsets: BTreeMap<String, usize> = BTreeMap::new();
    for r in results {
        let one = r?;
        if let Some(e) = &one.outcome.error {
            warn!("record {} ({}) skipped: {e}", one.outcome.record, one.outcome.participant_id);
        }
        let offset = offsets.entry(one.outcome.participant_id.clone()).or_insert(0);
        for mut row in one.rows {
            row.window_index += *offset;
            table.rows.push(row);
        }
        *offset += one.outcome.drops.windows;
        all_beats.push(one.beats);
        outcomes.push(one.outcome);
    }
    if table.rows.is_empty() {
        return Err(AuditError::stage("features", "no feature windows survived delineation"));
    }
    Ok(FeatureRun {
        table,
        beats: all_beats,
        outcomes,
    })
}

/// Tuning record written next to each model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningLog {
    pub task: Task,
    pub model: String,
    pub seed: u64,
    pub best: HyperParams,
    pub cv_scores: Vec<(HyperParams, Option<f64>)>,
    pub warnings: Vec<String>,
}

impl TuningLog {
    fn new(task: Task, model: &str, seed: u64, out: &TuneOutcome) -> Self {
        Self {
            task,
            model: model.to_string(),
            seed,
            best: out.best.clone(),
            cv_scores: out
                .cv_scores
                .iter()
                .map(|(p, s)| (p.clone(), s.is_finite().then_some(*s)))
                .collect(),
            warnings: out.warnings.clone(),
        }
    }
}

/// Tunes one learner on the training side of `plan`.
pub fn train_model(
    registry: &LearnerRegistry,
    model: &str,
    table: &FeatureTable,
    plan: &SplitPlan,
    root_seed: u64,
) -> Result<(TrainedModel, TuningLog), AuditError> {
    let learner = registry.get(model).map_err(|e| AuditError::Config(e.to_string()))?;
    let (train, _) = plan.resolve(table).map_err(|e| AuditError::stage("train", e))?;
    let data = Dataset::from_rows(&table.names, &train, plan.task, &plan.label_map).map_err(|e| AuditError::stage("train", e))?;
    let seed = stage_seed(root_seed, &train_stage(plan.task, model));
    let out = tune(learner, &data, plan.task, &learner.default_grid(), seed).map_err(|e| AuditError::stage("train", e))?;
    for w in &out.warnings {
        warn!("{} / {model}: {w}", plan.task.name());
    }
    let log = TuningLog::new(plan.task, model, seed, &out);
    Ok((out.model, log))
}

pub fn explain_model(
    model: &TrainedModel,
    table: &FeatureTable,
    plan: &SplitPlan,
    settings: &ExplainSettings,
    root_seed: u64,
) -> Result<ShapSummary, AuditError> {
    let cfg = SummaryConfig {
        background_size: settings.background_size,
        max_points: settings.max_points,
        scale: settings.scale,
        seed: stage_seed(root_seed, &explain_stage(plan.task, model.kind.name())),
        ..SummaryConfig::default()
    };
    shap_summary(model, table, plan, &cfg).map_err(|e| AuditError::stage("explain", e))
}

/// Writes files under an output directory and remembers them for the
/// MANIFEST.
pub struct ArtifactWriter {
    root: PathBuf,
    files: BTreeSet<PathBuf>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self, AuditError> {
        std::fs::create_dir_all(root).map_err(|source| AuditError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeSet::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for `rel`, with parent directories created.
    pub fn path(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf, AuditError> {
        let rel = rel.as_ref();
        let full = self.root.join(rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent).map_err(|source| AuditError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        self.files.insert(rel.to_path_buf());
        Ok(full)
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, contents: &str) -> Result<PathBuf, AuditError> {
        let full = self.path(rel)?;
        std::fs::write(&full, contents).map_err(|source| AuditError::Io {
            path: full.clone(),
            source,
        })?;
        Ok(full)
    }

    /// `MANIFEST`: config hash, stage seeds, then a SHA-256 per artifact.
    pub fn write_manifest(&mut self, config_hash: &str, seeds: &BTreeMap<String, u64>) -> Result<(), AuditError> {
        let mut out = format!("config_sha256 {config_hash}\n");
        for (stage, seed) in seeds {
            out.push_str(&format!("seed {stage} {seed}\n"));
        }
        for rel in &self.files {
            let full = self.root.join(rel);
            let bytes = std::fs::read(&full).map_err(|source| AuditError::Io { path: full.clone(), source })?;
            out.push_str(&format!("file {} {}\n", hex::encode(Sha256::digest(&bytes)), rel.display()));
        }
        let path = self.root.join("MANIFEST");
        std::fs::write(&path, out).map_err(|source| AuditError::Io { path, source })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AuditError + '_ {
    move |source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Result of a complete audit.
pub struct AuditOutcome {
    pub table: FeatureTable,
    pub reports: Vec<EvalReport>,
    pub summaries: Vec<ShapSummary>,
}

/// Runs every stage into `out`. On failure a `FAILED` file describing the
/// error is left next to whatever was already written.
pub fn run_audit(cfg: &RunConfig, out: &Path) -> Result<AuditOutcome, AuditError> {
    let failed = out.join("FAILED");
    if failed.exists() {
        std::fs::remove_file(&failed).map_err(io_err(&failed))?;
    }
    let result = run_stages(cfg, out);
    if let Err(e) = &result {
        if std::fs::create_dir_all(out).is_ok() {
            let _ = std::fs::write(&failed, format!("{e}\n"));
        }
    }
    result
}

fn run_stages(cfg: &RunConfig, out: &Path) -> Result<AuditOutcome, AuditError> {
    let registry = LearnerRegistry::with_defaults();
    cfg.validate(&registry)?;
    let mut w = ArtifactWriter::new(out)?;
    w.write("config.json", &cfg.to_json())?;
    let mut stage_seeds = BTreeMap::new();
    stage_seeds.insert("root".to_string(), cfg.seed);

    info!("loading records");
    let records = load_records(&cfg.input)?;
    info!("featurising {} records", records.len());
    let run = extract_features(&records, cfg, None)?;
    let total = run.total_drops();
    info!(
        "{} windows kept of {} ({} too few beats, {} undefined)",
        total.kept, total.windows, total.too_few_beats, total.undefined
    );
    for (i, (rec, beats)) in records.iter().zip(&run.beats).enumerate() {
        let path = w.path(Path::new("annotations").join(annotation_file(i, &rec.participant_id)))?;
        write_annotations(&path, beats).map_err(io_err(&path))?;
    }
    w.write("drops.csv", &run.drops_csv())?;
    let features_path = w.path("features.csv")?;
    run.table.write_csv(&features_path).map_err(|e| AuditError::stage("features", e))?;

    let mut reports = Vec::new();
    let mut summaries = Vec::new();
    for &task in &cfg.tasks {
        let split_seed = stage_seed(cfg.seed, &split_stage(task));
        stage_seeds.insert(split_stage(task), split_seed);
        let plan = split(&run.table, task, split_seed).map_err(|e| AuditError::stage("split", e))?;
        for warning in &plan.warnings {
            warn!("{}: {warning}", task.name());
        }
        w.write(format!("plans/{}.json", task.name()), &plan.to_json())?;
        for model_name in &cfg.models {
            info!("{} / {model_name}: tuning", task.name());
            let stem = format!("{}_{model_name}", task.name());
            let (model, log) = train_model(&registry, model_name, &run.table, &plan, cfg.seed)?;
            stage_seeds.insert(train_stage(task, model_name), log.seed);
            w.write(format!("models/{stem}.json"), &model.to_json())?;
            w.write(
                format!("tuning/{stem}.json"),
                &(serde_json::to_string_pretty(&log).expect("tuning log serialises") + "\n"),
            )?;

            let report = reference_compare(evaluate(&model, &run.table, &plan).map_err(|e| AuditError::stage("evaluate", e))?);
            info!(
                "{} / {model_name}: accuracy {:.3}, macro-F1 {:.3}",
                task.name(),
                report.accuracy,
                report.f1_macro
            );
            w.write(format!("reports/{stem}.json"), &report.to_json())?;
            reports.push(report);

            if cfg.explain.enabled {
                info!("{} / {model_name}: explaining", task.name());
                let summary = explain_model(&model, &run.table, &plan, &cfg.explain, cfg.seed)?;
                stage_seeds.insert(explain_stage(task, model_name), summary.config.seed);
                w.write(format!("shap/{stem}.json"), &summary.to_json())?;
                w.write(format!("shap/{stem}.csv"), &summary.beeswarm_csv())?;
                w.write(format!("shap/{stem}.svg"), &render_summary_svg(&summary))?;
                summaries.push(summary);
            }
        }
    }
    w.write("reports/summary.csv", &summary_csv(&reports))?;
    w.write_manifest(&cfg.hash(), &stage_seeds)?;
    Ok(AuditOutcome {
        table: run.table,
        reports,
        summaries,
    })
}
