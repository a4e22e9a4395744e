//! Held-out scoring of a finalized run's inference script.

use chrono::Utc;
use log::{error, info};

use crate::dataset::{label_values, Table};
use crate::ledger::{Ledger, TestMetrics};
use crate::model::{Metric, Outcome};
use crate::sandbox::{Sandbox, SandboxFactory, SandboxSpec};
use crate::stats::{accuracy, average_precision};
use crate::validation::{parse_predictions, ARTIFACTS_DIR, METRICS_PATH};

/// Where the label-stripped test features are staged in the fresh workspace.
pub const TEST_INPUT_PATH: &str = "evaluation/test_features.csv";
pub const TEST_OUTPUT_PATH: &str = "evaluation/predictions.csv";

/// Runs the best iteration's inference script on the test features in a
/// fresh sandbox, scores it outside the sandbox and records the result.
///
/// A script that fails on the real test data is recorded with `value: None`;
/// the run keeps its success outcome.
pub fn evaluate_on_test(
    ledger: &Ledger,
    run_id: &str,
    sandboxes: &dyn SandboxFactory,
) -> Result<TestMetrics, crate::Error> {
    let run = ledger.load_run(run_id)?;
    let best = ledger.load_best(run_id)?;
    let best = match best {
        Some(b) if b.outcome == Outcome::Success => b,
        Some(_) => {
            return Err(crate::Error::Precondition(format!(
                "run `{run_id}` failed; there is no inference script to evaluate"
            )))
        }
        None => {
            return Err(crate::Error::Precondition(format!(
                "run `{run_id}` is not finalized"
            )))
        }
    };
    let (Some(script), Some(artifacts)) = (
        best.inference_script.as_deref(),
        best.artifacts_dir.as_deref(),
    ) else {
        return Err(crate::Error::Precondition(format!(
            "run `{run_id}` has no recorded inference script"
        )));
    };
    let manifest = &run.manifest;
    let test = Table::read(&manifest.test_path)?;
    let truth: Vec<String> = test
        .column(&manifest.label_column)?
        .into_iter()
        .map(str::to_string)
        .collect();
    let features = test.without_column(&manifest.label_column)?;
    let known_labels = label_values(&manifest.train_path, &manifest.label_column)?;

    let snapshot = ledger.run_dir(run_id).join(artifacts);
    let spec = SandboxSpec::for_dataset(manifest, &run.config);
    spec.validate_against(&manifest.test_path)?;
    let mut sandbox = sandboxes.provision(spec)?;
    let scored = (|| -> Result<Result<f64, String>, crate::Error> {
        for rel in ["work", ARTIFACTS_DIR, METRICS_PATH] {
            let source = snapshot.join(rel);
            if source.exists() {
                sandbox.copy_in(&source, rel)?;
            }
        }
        sandbox.write_script(TEST_INPUT_PATH, &features.to_csv_bytes())?;
        Ok(score(
            sandbox.as_mut(),
            script,
            run.config.tool_timeout_s,
            &truth,
            &known_labels,
            manifest,
        ))
    })();
    if let Err(e) = sandbox.teardown() {
        log::warn!("evaluation sandbox teardown failed: {e}");
    }
    let (value, error) = match scored? {
        Ok(v) => {
            info!("run {run_id}: test {} = {v:.4}", manifest.metric);
            (Some(v), None)
        }
        Err(e) => {
            error!(
                "run {run_id}: inference script passed validation but failed on the test data: {e}"
            );
            (None, Some(e))
        }
    };
    let metrics = TestMetrics {
        run_id: run_id.to_string(),
        metric: manifest.metric.name().to_string(),
        value,
        n_rows: truth.len(),
        error,
        evaluated_at: Utc::now(),
    };
    ledger.record_test_metrics(&metrics)?;
    Ok(metrics)
}

fn score(
    sandbox: &mut dyn Sandbox,
    script: &str,
    timeout_s: u64,
    truth: &[String],
    known_labels: &std::collections::BTreeSet<String>,
    manifest: &crate::model::DatasetManifest,
) -> Result<f64, String> {
    let args = [
        "--input".to_string(),
        TEST_INPUT_PATH.to_string(),
        "--output".to_string(),
        TEST_OUTPUT_PATH.to_string(),
    ];
    let result = sandbox
        .run_script(script, &args, timeout_s)
        .map_err(|e| e.to_string())?;
    if !result.success() {
        return Err(format!(
            "inference exited with code {}{}: {}",
            result.exit_code,
            if result.timed_out { " (timed out)" } else { "" },
            result.tail(1500).trim()
        ));
    }
    let bytes = sandbox
        .read_file(TEST_OUTPUT_PATH)
        .map_err(|_| format!("no output written to `{TEST_OUTPUT_PATH}`"))?;
    let predictions = parse_predictions(&bytes, truth.len(), known_labels, manifest.metric)?;
    let value = match manifest.metric {
        Metric::Accuracy => accuracy(truth, &predictions.labels),
        Metric::AveragePrecision => {
            let positive = manifest
                .positive_label
                .clone()
                .ok_or_else(|| "manifest has no positive_label".to_string())?;
            let scores = predictions
                .scores
                .ok_or_else(|| "score column required".to_string())?;
            average_precision(truth, &scores, &positive)
        }
    };
    value.map_err(|e| e.to_string())
}
