//! Domain types shared by the ledger, the step pipeline and the bench harness.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Component, Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::validation::ValidationVerdict;

/// The task families the orchestrator knows how to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    BinaryClassification,
}

/// Metric used both for model selection and for held-out scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    AveragePrecision,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::AveragePrecision => "average_precision",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Describes one dataset. `test_path` is read by the harness only and never
/// reaches the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub label_column: String,
    pub feature_columns: Vec<String>,
    #[serde(default = "default_task")]
    pub task: Task,
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
}

fn default_task() -> Task {
    Task::BinaryClassification
}

/// A manifest invariant that does not hold.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifestError {
    #[error("manifest invariant violated: train_path and test_path must be distinct files")]
    SameTrainAndTest,

    #[error("manifest invariant violated: label column `{0}` is also listed as a feature")]
    LabelIsFeature(String),

    #[error("manifest invariant violated: metric average_precision requires positive_label")]
    MissingPositiveLabel,

    #[error("manifest invariant violated: positive_label `{label}` is not one of the label values {seen:?}")]
    UnknownPositiveLabel { label: String, seen: Vec<String> },

    #[error("manifest invariant violated: name must be non-empty")]
    EmptyName,

    #[error("cannot read labels from `{path}`: {reason}")]
    Unreadable { path: PathBuf, reason: String },
}

impl DatasetManifest {
    /// Loads a manifest from a JSON file. Relative data paths are resolved
    /// against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        let bytes = std::fs::read(path)?;
        let mut manifest: DatasetManifest = serde_json::from_slice(&bytes)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if manifest.train_path.is_relative() {
            manifest.train_path = base.join(&manifest.train_path);
        }
        if manifest.test_path.is_relative() {
            manifest.test_path = base.join(&manifest.test_path);
        }
        Ok(manifest)
    }

    /// Checks the invariants that do not need to read data files.
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.name.trim().is_empty() {
            return Err(ManifestError::EmptyName);
        }
        if same_file(&self.train_path, &self.test_path) {
            return Err(ManifestError::SameTrainAndTest);
        }
        if self.feature_columns.contains(&self.label_column) {
            return Err(ManifestError::LabelIsFeature(self.label_column.clone()));
        }
        if self.metric == Metric::AveragePrecision && self.positive_label.is_none() {
            return Err(ManifestError::MissingPositiveLabel);
        }
        Ok(())
    }

    /// Full validation, including that `positive_label` occurs in the
    /// training labels.
    pub fn validate_with_data(&self) -> Result<(), ManifestError> {
        self.validate()?;
        if let Some(positive) = &self.positive_label {
            let labels = crate::dataset::label_values(&self.train_path, &self.label_column)
                .map_err(|e| ManifestError::Unreadable {
                    path: self.train_path.clone(),
                    reason: e.to_string(),
                })?;
            if !labels.contains(positive) {
                return Err(ManifestError::UnknownPositiveLabel {
                    label: positive.clone(),
                    seen: labels.into_iter().collect(),
                });
            }
        }
        Ok(())
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    if let (Ok(ca), Ok(cb)) = (a.canonicalize(), b.canonicalize()) {
        return ca == cb;
    }
    lexical_normalize(a) == lexical_normalize(b)
}

/// Resolves `.` and `..` components without touching the filesystem.
pub(crate) fn lexical_normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for component in path.components() {
        match component {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

/// Where agent tools execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Host container runtime; the production backend.
    Container,
    /// Plain child processes in a scratch directory. No isolation.
    PlainProcess,
}

impl Backend {
    pub fn is_isolated(self) -> bool {
        matches!(self, Backend::Container)
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Container => "container",
            Backend::PlainProcess => "plain_process",
        })
    }
}

/// Knobs for a single run. Every field has a default so config files may be
/// partial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_iterations: u32,
    pub max_step_attempts: u32,
    pub tool_timeout_s: u64,
    pub budget_usd: f64,
    pub seed: u64,
    pub backend: Backend,
    /// Command used to execute guest scripts, e.g. `python3`.
    pub guest_interpreter_cmd: String,
    /// Command that parses a guest script without running it; the script
    /// path is appended as the last argument.
    pub guest_compile_cmd: String,
    pub model_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Row label used by reports; defaults to `<mode>:<model_id>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method_label: Option<String>,
    pub container_runtime: String,
    pub container_image: String,
    /// Per-attempt cap on model turns.
    pub turn_cap: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5,
            max_step_attempts: 5,
            tool_timeout_s: 1800,
            budget_usd: 2.0,
            seed: 0,
            backend: Backend::Container,
            guest_interpreter_cmd: "python3".to_string(),
            guest_compile_cmd: "python3 -c \"import sys; compile(open(sys.argv[1], 'rb').read(), sys.argv[1], 'exec')\"".to_string(),
            model_id: "gpt-4.1".to_string(),
            temperature: None,
            method_label: None,
            container_runtime: "docker".to_string(),
            container_image: "python:3.11-slim".to_string(),
            turn_cap: 50,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("max_iterations must be at least 1")]
    ZeroIterations,
    #[error("max_step_attempts must be at least 1")]
    ZeroAttempts,
    #[error("tool_timeout_s must be positive")]
    ZeroTimeout,
    #[error("budget_usd must be a non-negative number")]
    BadBudget,
    #[error("turn_cap must be at least 1")]
    ZeroTurnCap,
    #[error("guest_interpreter_cmd must be non-empty")]
    NoInterpreter,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_iterations == 0 {
            return Err(ConfigError::ZeroIterations);
        }
        if self.max_step_attempts == 0 {
            return Err(ConfigError::ZeroAttempts);
        }
        if self.tool_timeout_s == 0 {
            return Err(ConfigError::ZeroTimeout);
        }
        if !(self.budget_usd >= 0.0 && self.budget_usd.is_finite()) {
            return Err(ConfigError::BadBudget);
        }
        if self.turn_cap == 0 {
            return Err(ConfigError::ZeroTurnCap);
        }
        if self.guest_interpreter_cmd.trim().is_empty() {
            return Err(ConfigError::NoInterpreter);
        }
        Ok(())
    }
}

/// Which pipeline a run follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Multi-iteration tool-using agent with reflection.
    Agent,
    /// Single completion, no tools, no retries.
    ZeroShot,
}

impl RunMode {
    /// Step kinds an iteration must go through, in order.
    pub fn pipeline(self, iteration: usize) -> &'static [StepKind] {
        use StepKind::*;
        match (self, iteration) {
            (RunMode::Agent, 0) => &[
                Explore,
                Design,
                TrainScript,
                Train,
                InferenceScript,
                Reflect,
            ],
            (RunMode::Agent, _) => &[Design, TrainScript, Train, InferenceScript, Reflect],
            (RunMode::ZeroShot, 0) => &[TrainScript, Train, InferenceScript],
            (RunMode::ZeroShot, _) => &[],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RunMode::Agent => "agent",
            RunMode::ZeroShot => "zero_shot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepKind {
    Explore,
    Design,
    TrainScript,
    Train,
    InferenceScript,
    Reflect,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::Explore => "EXPLORE",
            StepKind::Design => "DESIGN",
            StepKind::TrainScript => "TRAIN_SCRIPT",
            StepKind::Train => "TRAIN",
            StepKind::InferenceScript => "INFERENCE_SCRIPT",
            StepKind::Reflect => "REFLECT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Passed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

/// Half-open line range `[start, end)` inside an iteration's `transcript.jsonl`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRef {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub transcript: TranscriptRef,
    pub verdict: ValidationVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub kind: StepKind,
    pub attempts: Vec<Attempt>,
    pub status: StepStatus,
    /// Structured step output (the accepted final answer), or null.
    #[serde(default)]
    pub output: serde_json::Value,
}

impl StepRecord {
    pub fn passed(&self) -> bool {
        self.status == StepStatus::Passed
    }

    /// The `script_path` field of a script-producing step's output.
    pub fn script_path(&self) -> Option<&str> {
        self.output.get("script_path").and_then(|v| v.as_str())
    }
}

/// Train / validation scalars reported by one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub train: BTreeMap<String, f64>,
    pub validation: BTreeMap<String, f64>,
}

impl MetricReport {
    /// Checks that both splits report `metric` and that every value is a
    /// finite number in `[0, 1]`. The message names the offending entry.
    pub fn check(&self, metric: &str) -> Result<(), String> {
        for (split, values) in [("train", &self.train), ("validation", &self.validation)] {
            if !values.contains_key(metric) {
                return Err(format!("`{split}` is missing metric `{metric}`"));
            }
            for (name, value) in values {
                if !value.is_finite() || !(0.0..=1.0).contains(value) {
                    return Err(format!("{split}.{name} = {value} is out of range [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn validation_value(&self, metric: &str) -> Option<f64> {
        self.validation.get(metric).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionNote {
    pub text: String,
    pub iteration_index: usize,
    pub metrics_snapshot: MetricReport,
    /// Set when the model returned nothing usable and a placeholder was stored.
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub steps: Vec<StepRecord>,
    pub metrics: Option<MetricReport>,
    pub reflection: Option<ReflectionNote>,
    /// Relative to the run directory.
    pub artifacts_dir: String,
}

impl IterationRecord {
    pub fn step(&self, kind: StepKind) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.kind == kind)
    }

    /// Path of the inference script that passed validation, if any.
    pub fn validated_inference_script(&self) -> Option<&str> {
        self.step(StepKind::InferenceScript)
            .filter(|s| s.passed())
            .and_then(|s| s.script_path())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub mode: RunMode,
    /// Report row label.
    pub method: String,
    pub manifest: DatasetManifest,
    pub config: RunConfig,
    pub iterations: Vec<IterationRecord>,
    pub outcome: Option<Outcome>,
    pub best: Option<usize>,
    /// True whenever tools ran without isolation.
    pub unsafe_backend: bool,
    pub failure_reason: Option<String>,
    pub created_at: DateTime<Utc>,
}

impl RunRecord {
    pub fn is_finalized(&self) -> bool {
        self.outcome.is_some()
    }

    /// Iteration-0 exploration summary, when the EXPLORE step passed.
    pub fn exploration_summary(&self) -> Option<&str> {
        self.iterations
            .first()?
            .step(StepKind::Explore)
            .filter(|s| s.passed())?
            .output
            .get("summary")?
            .as_str()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            name: "toy".into(),
            train_path: "data/train.csv".into(),
            test_path: "data/test.csv".into(),
            label_column: "label".into(),
            feature_columns: vec!["sequence".into()],
            task: Task::BinaryClassification,
            metric: Metric::Accuracy,
            description: None,
            positive_label: None,
        }
    }

    #[test]
    fn manifest_invariants() {
        assert!(manifest().validate().is_ok());

        let mut m = manifest();
        m.feature_columns.push("label".into());
        assert_eq!(
            m.validate(),
            Err(ManifestError::LabelIsFeature("label".into()))
        );

        let mut m = manifest();
        m.metric = Metric::AveragePrecision;
        assert_eq!(m.validate(), Err(ManifestError::MissingPositiveLabel));

        let mut m = manifest();
        m.test_path = "data/./train.csv".into();
        assert_eq!(m.validate(), Err(ManifestError::SameTrainAndTest));
    }

    #[test]
    fn config_defaults_are_valid() {
        let config = RunConfig::default();
        assert_eq!(config.max_iterations, 5);
        assert_eq!(config.max_step_attempts, 5);
        assert_eq!(config.tool_timeout_s, 1800);
        assert_eq!(config.budget_usd, 2.0);
        assert!(config.validate().is_ok());
        let partial: RunConfig = serde_json::from_str(r#"{"max_iterations": 2}"#).unwrap();
        assert_eq!(partial.max_iterations, 2);
        assert_eq!(partial.max_step_attempts, 5);
    }

    #[test]
    fn config_rejects_zero_bounds() {
        let mut c = RunConfig::default();
        c.max_iterations = 0;
        assert_eq!(c.validate(), Err(ConfigError::ZeroIterations));
        let mut c = RunConfig::default();
        c.max_step_attempts = 0;
        assert_eq!(c.validate(), Err(ConfigError::ZeroAttempts));
        let mut c = RunConfig::default();
        c.budget_usd = -1.0;
        assert_eq!(c.validate(), Err(ConfigError::BadBudget));
    }

    #[test]
    fn metric_report_range_check() {
        let mut report = MetricReport::default();
        report.train.insert("accuracy".into(), 0.9);
        report.validation.insert("accuracy".into(), 1.7);
        assert!(report
            .check("accuracy")
            .unwrap_err()
            .contains("out of range"));
        report.validation.insert("accuracy".into(), 0.8);
        assert!(report.check("accuracy").is_ok());
        assert!(report
            .check("average_precision")
            .unwrap_err()
            .contains("missing"));
    }

    #[test]
    fn step_kind_wire_names() {
        assert_eq!(
            serde_json::to_string(&StepKind::TrainScript).unwrap(),
            "\"TRAIN_SCRIPT\""
        );
        assert_eq!(StepKind::InferenceScript.to_string(), "INFERENCE_SCRIPT");
    }
}
