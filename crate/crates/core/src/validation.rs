//! Deterministic checks that gate step completion.
//!
//! Every validator returns a [`ValidationVerdict`]; a failing verdict carries
//! one error string of the form `[check_id] message` naming the first check
//! that failed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::Table;
use crate::model::{DatasetManifest, Metric, MetricReport};
use crate::sandbox::{split_command, Sandbox, SandboxError, ToolResult};

/// Rows of training data fed to a candidate inference script.
pub const DUMMY_ROWS: usize = 8;
pub const DUMMY_INPUT_PATH: &str = "validation/dummy_input.csv";
pub const DUMMY_OUTPUT_PATH: &str = "validation/predictions.csv";
/// Where a training run must leave its scalars.
pub const METRICS_PATH: &str = "metrics.json";
pub const ARTIFACTS_DIR: &str = "artifacts";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Ids of the checks that ran, in order.
    pub checked: Vec<String>,
}

impl ValidationVerdict {
    pub fn passed(checked: Vec<String>) -> Self {
        Self {
            pass: true,
            error: None,
            checked,
        }
    }

    pub fn failed(checked: Vec<String>, check_id: &str, message: impl AsRef<str>) -> Self {
        Self {
            pass: false,
            error: Some(format!("[{check_id}] {}", message.as_ref())),
            checked,
        }
    }
}

/// Runs named checks in order and stops at the first failure.
struct Checklist {
    checked: Vec<String>,
}

impl Checklist {
    fn new() -> Self {
        Self {
            checked: Vec::new(),
        }
    }

    fn check<T>(&mut self, id: &str, result: Result<T, String>) -> Result<T, ValidationVerdict> {
        self.checked.push(id.to_string());
        result.map_err(|msg| ValidationVerdict::failed(self.checked.clone(), id, msg))
    }

    fn pass(self) -> ValidationVerdict {
        ValidationVerdict::passed(self.checked)
    }
}

/// The four DESIGN fields, each required. `hyperparameters` may be an empty
/// map; the text fields may not be blank.
pub const DESIGN_TEXT_FIELDS: [&str; 3] = ["split_strategy", "representation", "architecture"];

/// Checks a DESIGN answer: every text field present and non-blank, and
/// `hyperparameters` a (possibly empty) map of scalars.
pub fn validate_design(output: &serde_json::Value) -> ValidationVerdict {
    let mut list = Checklist::new();
    let fields = (|| {
        let map = output.as_object().ok_or("design must be a JSON object")?;
        for field in DESIGN_TEXT_FIELDS {
            match map.get(field).and_then(|v| v.as_str()) {
                Some(text) if !text.trim().is_empty() => {}
                Some(_) => return Err(format!("field `{field}` is empty")),
                None => return Err(format!("field `{field}` is missing or not a string")),
            }
        }
        match map.get("hyperparameters").and_then(|v| v.as_object()) {
            Some(params)
                if params
                    .values()
                    .all(|v| v.is_string() || v.is_number() || v.is_boolean()) =>
            {
                Ok(())
            }
            Some(_) => Err("field `hyperparameters` must map names to scalar values".to_string()),
            None => Err("field `hyperparameters` is missing or not an object".to_string()),
        }
    })();
    match list.check("design_fields", fields) {
        Ok(()) => list.pass(),
        Err(v) => v,
    }
}

/// Confirms that `script_path` exists in the workspace and parses.
pub fn validate_script_compiles(
    sandbox: &mut dyn Sandbox,
    script_path: &str,
    compile_cmd: &str,
    timeout_s: u64,
) -> Result<ValidationVerdict, SandboxError> {
    let mut list = Checklist::new();
    if let Err(v) = list.check("exists", script_exists(sandbox, script_path)) {
        return Ok(v);
    }
    let result = compile(sandbox, script_path, compile_cmd, timeout_s)?;
    if let Err(v) = list.check("syntax", result) {
        return Ok(v);
    }
    Ok(list.pass())
}

fn script_exists(sandbox: &dyn Sandbox, script_path: &str) -> Result<(), String> {
    match sandbox.read_file(script_path) {
        Ok(_) => Ok(()),
        Err(SandboxError::Policy(reason)) => Err(reason),
        Err(_) => Err(format!("`{script_path}` does not exist in the workspace")),
    }
}

fn compile(
    sandbox: &mut dyn Sandbox,
    script_path: &str,
    compile_cmd: &str,
    timeout_s: u64,
) -> Result<Result<(), String>, SandboxError> {
    let mut argv = split_command(compile_cmd);
    argv.push(script_path.to_string());
    let result = sandbox.exec_trusted(&argv, timeout_s)?;
    Ok(if result.success() {
        Ok(())
    } else {
        Err(failure_text("does not compile", &result))
    })
}

/// Checks what a TRAIN step left behind and parses the reported metrics.
pub fn validate_training_outputs(
    sandbox: &dyn Sandbox,
    train_result: &ToolResult,
    metric: Metric,
) -> (ValidationVerdict, Option<MetricReport>) {
    let mut list = Checklist::new();
    let exit = if train_result.denied {
        Err(format!(
            "training command was refused: {}",
            train_result.stderr.trim()
        ))
    } else if train_result.timed_out {
        Err("training run exceeded the tool timeout".to_string())
    } else if train_result.exit_code != 0 {
        Err(failure_text("training run failed", train_result))
    } else {
        Ok(())
    };
    if let Err(v) = list.check("exit_code", exit) {
        return (v, None);
    }
    let parsed = sandbox
        .read_file(METRICS_PATH)
        .map_err(|_| format!("`{METRICS_PATH}` was not written at the workspace root"))
        .and_then(|bytes| {
            serde_json::from_slice::<MetricReport>(&bytes).map_err(|e| {
                format!(
                    "`{METRICS_PATH}` must be {{\"train\": {{..}}, \"validation\": {{..}}}}: {e}"
                )
            })
        });
    let report = match list.check("metrics_file", parsed) {
        Ok(report) => report,
        Err(v) => return (v, None),
    };
    if let Err(v) = list.check("metrics_range", report.check(metric.name())) {
        return (v, None);
    }
    let artifacts = match sandbox.list_files(ARTIFACTS_DIR) {
        Ok(files) if !files.is_empty() => Ok(()),
        _ => Err(format!(
            "no model artifacts in `{ARTIFACTS_DIR}/`; save the trained model there"
        )),
    };
    if let Err(v) = list.check("artifacts", artifacts) {
        return (v, None);
    }
    (list.pass(), Some(report))
}

/// Parsed output of an inference script.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<String>,
    pub scores: Option<Vec<f64>>,
}

/// Checks a predictions CSV against the expected row count and label set.
///
/// `prediction` is required; `score` (probability of the positive class, in
/// `[0, 1]`) is required when the metric ranks by score.
pub fn parse_predictions(
    bytes: &[u8],
    expected_rows: usize,
    labels: &BTreeSet<String>,
    metric: Metric,
) -> Result<Predictions, String> {
    let table = Table::parse(bytes).map_err(|e| format!("output is not a CSV table: {e}"))?;
    let predictions = table
        .column("prediction")
        .map_err(|_| "output header must contain a `prediction` column".to_string())?;
    if predictions.len() != expected_rows {
        return Err(format!(
            "row count mismatch {}\u{2260}{}",
            predictions.len(),
            expected_rows
        ));
    }
    for (row, value) in predictions.iter().enumerate() {
        if !labels.contains(*value) {
            return Err(format!(
                "prediction `{value}` in row {} is not one of the training labels {:?}",
                row + 1,
                labels
            ));
        }
    }
    let scores = match (metric, table.column("score")) {
        (Metric::AveragePrecision, Err(_)) => return Err("score column required".to_string()),
        (_, Err(_)) => None,
        (_, Ok(column)) => {
            let mut scores = Vec::with_capacity(column.len());
            for (row, raw) in column.iter().enumerate() {
                let score: f64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| format!("score `{raw}` in row {} is not a number", row + 1))?;
                if !(0.0..=1.0).contains(&score) {
                    return Err(format!(
                        "score {score} in row {} is outside [0, 1]",
                        row + 1
                    ));
                }
                scores.push(score);
            }
            Some(scores)
        }
    };
    Ok(Predictions {
        labels: predictions.into_iter().map(str::to_string).collect(),
        scores,
    })
}

/// The four-check gate on an inference script: it parses, a label-stripped
/// sample of training rows can be staged, it runs on that sample, and its
/// output has the right shape.
pub fn validate_inference_script(
    sandbox: &mut dyn Sandbox,
    script_path: &str,
    manifest: &DatasetManifest,
    compile_cmd: &str,
    timeout_s: u64,
) -> Result<ValidationVerdict, SandboxError> {
    let mut list = Checklist::new();
    let syntax = match script_exists(sandbox, script_path) {
        Ok(()) => compile(sandbox, script_path, compile_cmd, timeout_s)?,
        Err(e) => Err(e),
    };
    if let Err(v) = list.check("syntax", syntax) {
        return Ok(v);
    }

    let staged = stage_dummy_input(sandbox, manifest);
    let (rows, labels) = match list.check("dummy_input", staged) {
        Ok(staged) => staged,
        Err(v) => return Ok(v),
    };

    sandbox.remove_file(DUMMY_OUTPUT_PATH)?;
    let args = [
        "--input".to_string(),
        DUMMY_INPUT_PATH.to_string(),
        "--output".to_string(),
        DUMMY_OUTPUT_PATH.to_string(),
    ];
    let result = sandbox.run_script(script_path, &args, timeout_s)?;
    let ran = if result.success() {
        Ok(())
    } else if result.denied {
        Err(format!("refused: {}", result.stderr.trim()))
    } else if result.timed_out {
        Err("inference run exceeded the tool timeout".to_string())
    } else {
        Err(failure_text("inference run failed", &result))
    };
    if let Err(v) = list.check("dummy_run", ran) {
        return Ok(v);
    }

    let format = sandbox
        .read_file(DUMMY_OUTPUT_PATH)
        .map_err(|_| format!("no output written to `{DUMMY_OUTPUT_PATH}`"))
        .and_then(|bytes| parse_predictions(&bytes, rows, &labels, manifest.metric).map(|_| ()));
    if let Err(v) = list.check("output_format", format) {
        return Ok(v);
    }
    Ok(list.pass())
}

fn stage_dummy_input(
    sandbox: &mut dyn Sandbox,
    manifest: &DatasetManifest,
) -> Result<(usize, BTreeSet<String>), String> {
    let table =
        Table::read(&manifest.train_path).map_err(|e| format!("cannot read training data: {e}"))?;
    let labels: BTreeSet<String> = table
        .column(&manifest.label_column)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(str::to_string)
        .collect();
    let sample = table
        .without_column(&manifest.label_column)
        .map_err(|e| e.to_string())?
        .head(DUMMY_ROWS);
    if sample.rows.is_empty() {
        return Err("training data has no rows".to_string());
    }
    sandbox
        .write_script(DUMMY_INPUT_PATH, &sample.to_csv_bytes())
        .map_err(|e| e.to_string())?;
    Ok((sample.rows.len(), labels))
}

fn failure_text(what: &str, result: &ToolResult) -> String {
    let tail = result.tail(1500);
    let tail = tail.trim();
    if tail.is_empty() {
        format!("{what} (exit code {})", result.exit_code)
    } else {
        format!("{what} (exit code {}):\n{tail}", result.exit_code)
    }
}
