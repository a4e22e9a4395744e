//! What the agent is told at the start of each step.

use serde::{Deserialize, Serialize};

use crate::firewall::Firewall;
use crate::model::{DatasetManifest, Metric, MetricReport, RunRecord, StepKind};

/// Reflection carried forward from an earlier iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorReflection {
    pub iteration: usize,
    pub text: String,
    pub metrics: MetricReport,
}

/// Agent-visible inputs to one step. Built only from redacted sources; it
/// never carries the test path or anything derived from test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepContext {
    pub step: StepKind,
    pub iteration: usize,
    pub dataset_name: String,
    pub description: Option<String>,
    pub label_column: String,
    pub feature_columns: Vec<String>,
    pub metric: Metric,
    pub positive_label: Option<String>,
    pub exploration_summary: Option<String>,
    pub reflections: Vec<PriorReflection>,
    pub workspace_listing: Vec<String>,
}

/// Assembles the context for `step` of `iteration` from the run so far.
pub fn build_context(
    run: &RunRecord,
    iteration: usize,
    step: StepKind,
    workspace_listing: Vec<String>,
) -> StepContext {
    let firewall = Firewall::for_manifest(&run.manifest);
    let reflections = run
        .iterations
        .iter()
        .take(iteration)
        .filter_map(|it| {
            it.reflection.as_ref().map(|note| PriorReflection {
                iteration: it.index,
                text: firewall.redact(&note.text),
                metrics: note.metrics_snapshot.clone(),
            })
        })
        .collect();
    let manifest = &run.manifest;
    StepContext {
        step,
        iteration,
        dataset_name: manifest.name.clone(),
        description: manifest.description.as_deref().map(|d| firewall.redact(d)),
        label_column: manifest.label_column.clone(),
        feature_columns: manifest.feature_columns.clone(),
        metric: manifest.metric,
        positive_label: manifest.positive_label.clone(),
        exploration_summary: run.exploration_summary().map(|s| firewall.redact(s)),
        reflections,
        workspace_listing,
    }
}

impl StepContext {
    /// Variables for the task template.
    pub fn task_vars(&self) -> Vec<(&'static str, String)> {
        task_vars(
            &self.dataset_name,
            self.description.as_deref(),
            &self.label_column,
            &self.feature_columns,
            self.metric,
            self.positive_label.as_deref(),
        )
    }

    /// Exploration summary, earlier reflections and workspace listing as
    /// markdown sections. Empty sections are omitted.
    pub fn render_history(&self) -> String {
        let mut out = String::new();
        if self.step != StepKind::Explore {
            if let Some(summary) = &self.exploration_summary {
                out.push_str("# Data exploration summary\n\n");
                out.push_str(summary.trim());
                out.push_str("\n\n");
            }
        }
        if !self.reflections.is_empty() {
            out.push_str(&render_reflections(&self.reflections, self.metric));
        }
        out.push_str(&format!("# Current iteration: {}\n\n", self.iteration));
        if !self.workspace_listing.is_empty() {
            out.push_str("# Workspace files\n\n");
            for file in &self.workspace_listing {
                out.push_str("- ");
                out.push_str(file);
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn render_reflections(reflections: &[PriorReflection], metric: Metric) -> String {
    let mut out = String::from("# Notes from earlier iterations\n\n");
    for note in reflections {
        out.push_str(&format!(
            "## Iteration {} (train {}, validation {})\n\n{}\n\n",
            note.iteration,
            format_scalar(note.metrics.train.get(metric.name())),
            format_scalar(note.metrics.validation.get(metric.name())),
            note.text.trim()
        ));
    }
    out
}

pub(crate) fn format_scalar(value: Option<&f64>) -> String {
    value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Variables for the task template, shared by the agent and zero-shot modes.
pub(crate) fn task_vars(
    name: &str,
    description: Option<&str>,
    label_column: &str,
    feature_columns: &[String],
    metric: Metric,
    positive_label: Option<&str>,
) -> Vec<(&'static str, String)> {
    let features = feature_columns
        .iter()
        .map(|c| format!("`{c}`"))
        .collect::<Vec<_>>()
        .join(", ");
    let (positive_note, score_note) = match (metric, positive_label) {
        (Metric::AveragePrecision, Some(label)) => (
            format!(" The positive class is `{label}`."),
            format!(
                ", and a `score` column with the predicted probability (in [0, 1]) that the row belongs to class `{label}`"
            ),
        ),
        (_, Some(label)) => (format!(" The positive class is `{label}`."), String::new()),
        _ => (String::new(), String::new()),
    };
    vec![
        ("dataset_name", name.to_string()),
        (
            "description",
            description
                .unwrap_or("No further description is available.")
                .trim()
                .to_string(),
        ),
        ("label_column", label_column.to_string()),
        ("feature_columns", features),
        ("metric", metric.name().to_string()),
        ("positive_label_note", positive_note),
        ("score_note", score_note),
    ]
}

/// Task variables straight from a manifest, with the description redacted.
pub fn manifest_task_vars(manifest: &DatasetManifest) -> Vec<(&'static str, String)> {
    let firewall = Firewall::for_manifest(manifest);
    task_vars(
        &manifest.name,
        manifest
            .description
            .as_deref()
            .map(|d| firewall.redact(d))
            .as_deref(),
        &manifest.label_column,
        &manifest.feature_columns,
        manifest.metric,
        manifest.positive_label.as_deref(),
    )
}
