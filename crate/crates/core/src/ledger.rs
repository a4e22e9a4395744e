//! Append-only, file-backed record of every run.
//!
//! ```text
//! <root>/<run_id>/
//!   run.json            identity, mode, method, backend flag, created_at
//!   manifest.json       dataset manifest (harness only)
//!   config.json         run config
//!   iterations/NNN/
//!     steps.jsonl       one StepRecord per line
//!     transcript.jsonl  one chat message per line
//!     metrics.json      training scalars
//!     reflection.json   reflection note (reflection.md holds the text)
//!     artifacts/        snapshot of the workspace after the iteration
//!   best.json           final outcome and selected iteration
//!   test_metrics.json   held-out evaluation (harness only)
//! ```
//!
//! Writes are flushed and synced before a call returns. Every string is
//! passed through the firewall's redaction before it reaches disk, and the
//! in-memory record is rebuilt from what was written, so [`Ledger::load_run`]
//! always reproduces the writer's view.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::firewall::{redact_with, Firewall};
use crate::model::{
    DatasetManifest, IterationRecord, MetricReport, Outcome, ReflectionNote, RunConfig, RunMode,
    RunRecord, StepKind, StepRecord, TranscriptRef,
};
use crate::sandbox::Sandbox;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("step ordering violated: {0}")]
    Order(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("run `{0}` is already finalized")]
    Finalized(String),

    #[error("run `{0}` not found in ledger")]
    UnknownRun(String),

    #[error("ledger entry is corrupt: {0}")]
    Corrupt(String),
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunHeader {
    run_id: String,
    mode: RunMode,
    method: String,
    unsafe_backend: bool,
    created_at: DateTime<Utc>,
}

/// Contents of `best.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub outcome: Outcome,
    pub best_iteration: Option<usize>,
    pub inference_script: Option<String>,
    /// Relative to the run directory.
    pub artifacts_dir: Option<String>,
    pub metric: String,
    pub validation_value: Option<f64>,
    pub failure_reason: Option<String>,
    pub finalized_at: DateTime<Utc>,
}

/// Contents of `test_metrics.json`, written by the held-out evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub run_id: String,
    pub metric: String,
    /// `None` when the evaluation itself failed.
    pub value: Option<f64>,
    pub n_rows: usize,
    pub error: Option<String>,
    pub evaluated_at: DateTime<Utc>,
}

/// A directory of runs.
#[derive(Debug, Clone)]
pub struct Ledger {
    root: PathBuf,
}

impl Ledger {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    /// Creates a run directory and writes its header files.
    ///
    /// Run ids are `<dataset>-<mode>-s<seed>-<n>` with the smallest free `n`,
    /// so identical inputs against empty ledgers get identical ids.
    pub fn create_run(
        &self,
        manifest: &DatasetManifest,
        config: &RunConfig,
        mode: RunMode,
        method: &str,
        unsafe_backend: bool,
    ) -> Result<RunWriter, LedgerError> {
        fs::create_dir_all(&self.root)?;
        let stem = format!("{}-{}-s{}", slug(&manifest.name), mode.label(), config.seed);
        let (run_id, dir) = (0u32..)
            .find_map(|n| {
                let id = format!("{stem}-{n}");
                let dir = self.root.join(&id);
                match fs::create_dir(&dir) {
                    Ok(()) => Some(Ok((id, dir))),
                    Err(e) if e.kind() == io::ErrorKind::AlreadyExists => None,
                    Err(e) => Some(Err(e)),
                }
            })
            .expect("unbounded id search")?;
        fs::create_dir_all(dir.join("iterations"))?;

        let redactions = Firewall::for_manifest(manifest).redactions();
        let header = RunHeader {
            run_id: run_id.clone(),
            mode,
            method: method.to_string(),
            unsafe_backend,
            created_at: Utc::now(),
        };
        // The manifest names the test split and is never shown to the agent.
        write_json(&dir.join("manifest.json"), manifest, &[])?;
        let config: RunConfig = write_json(&dir.join("config.json"), config, &redactions)?;
        let header: RunHeader = write_json(&dir.join("run.json"), &header, &redactions)?;

        Ok(RunWriter {
            dir,
            redactions,
            transcript_lines: Vec::new(),
            record: RunRecord {
                run_id: header.run_id,
                mode,
                method: header.method,
                manifest: manifest.clone(),
                config,
                iterations: Vec::new(),
                outcome: None,
                best: None,
                unsafe_backend,
                failure_reason: None,
                created_at: header.created_at,
            },
        })
    }

    /// Reconstructs a run from disk.
    pub fn load_run(&self, run_id: &str) -> Result<RunRecord, LedgerError> {
        let dir = self.run_dir(run_id);
        if !dir.join("run.json").is_file() {
            return Err(LedgerError::UnknownRun(run_id.to_string()));
        }
        let header: RunHeader = read_json(&dir.join("run.json"))?;
        let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
        let config: RunConfig = read_json(&dir.join("config.json"))?;

        let mut iterations = Vec::new();
        for index in 0.. {
            let it_dir = iteration_dir(&dir, index);
            if !it_dir.is_dir() {
                break;
            }
            let steps = read_jsonl::<StepRecord>(&it_dir.join("steps.jsonl"))?;
            let metrics = read_optional::<MetricReport>(&it_dir.join("metrics.json"))?;
            let reflection = read_optional::<ReflectionNote>(&it_dir.join("reflection.json"))?;
            iterations.push(IterationRecord {
                index,
                steps,
                metrics,
                reflection,
                artifacts_dir: artifacts_rel(index),
            });
        }

        let best = read_optional::<BestRecord>(&dir.join("best.json"))?;
        Ok(RunRecord {
            run_id: header.run_id,
            mode: header.mode,
            method: header.method,
            manifest,
            config,
            iterations,
            outcome: best.as_ref().map(|b| b.outcome),
            best: best.as_ref().and_then(|b| b.best_iteration),
            unsafe_backend: header.unsafe_backend,
            failure_reason: best.and_then(|b| b.failure_reason),
            created_at: header.created_at,
        })
    }

    /// Ids of all runs in the ledger, sorted.
    pub fn list_runs(&self) -> Result<Vec<String>, LedgerError> {
        let mut ids = Vec::new();
        if !self.root.is_dir() {
            return Ok(ids);
        }
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().join("run.json").is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load_best(&self, run_id: &str) -> Result<Option<BestRecord>, LedgerError> {
        read_optional(&self.run_dir(run_id).join("best.json"))
    }

    pub fn load_test_metrics(&self, run_id: &str) -> Result<Option<TestMetrics>, LedgerError> {
        read_optional(&self.run_dir(run_id).join("test_metrics.json"))
    }

    /// Records the held-out evaluation of a finalized run.
    pub fn record_test_metrics(&self, metrics: &TestMetrics) -> Result<(), LedgerError> {
        let dir = self.run_dir(&metrics.run_id);
        if !dir.join("best.json").is_file() {
            return Err(LedgerError::Precondition(format!(
                "run `{}` is not finalized",
                metrics.run_id
            )));
        }
        write_json(&dir.join("test_metrics.json"), metrics, &[])?;
        Ok(())
    }

    /// Transcript lines `[start, end)` of one iteration.
    pub fn read_transcript(
        &self,
        run_id: &str,
        iteration: usize,
        range: TranscriptRef,
    ) -> Result<Vec<serde_json::Value>, LedgerError> {
        let path = iteration_dir(&self.run_dir(run_id), iteration).join("transcript.jsonl");
        let lines: Vec<serde_json::Value> = read_jsonl(&path)?;
        if range.end > lines.len() || range.start > range.end {
            return Err(LedgerError::Corrupt(format!(
                "transcript range {}..{} out of bounds ({} lines)",
                range.start,
                range.end,
                lines.len()
            )));
        }
        Ok(lines[range.start..range.end].to_vec())
    }
}

/// Write handle for one run. Owned by exactly one pipeline.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    redactions: Vec<String>,
    transcript_lines: Vec<usize>,
    record: RunRecord,
}

impl RunWriter {
    pub fn run_id(&self) -> &str {
        &self.record.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn redactions(&self) -> &[String] {
        &self.redactions
    }

    fn ensure_open(&self) -> Result<(), LedgerError> {
        if self.record.is_finalized() {
            Err(LedgerError::Finalized(self.record.run_id.clone()))
        } else {
            Ok(())
        }
    }

    /// Starts iteration `len(iterations)`, closing the previous one.
    pub fn open_iteration(&mut self) -> Result<usize, LedgerError> {
        self.ensure_open()?;
        let index = self.record.iterations.len();
        if self.record.mode.pipeline(index).is_empty() {
            return Err(LedgerError::Order(format!(
                "{} runs have no iteration {index}",
                self.record.mode.label()
            )));
        }
        let dir = iteration_dir(&self.dir, index);
        fs::create_dir_all(dir.join("artifacts"))?;
        File::create(dir.join("steps.jsonl"))?.sync_all()?;
        File::create(dir.join("transcript.jsonl"))?.sync_all()?;
        self.record.iterations.push(IterationRecord {
            index,
            steps: Vec::new(),
            metrics: None,
            reflection: None,
            artifacts_dir: artifacts_rel(index),
        });
        self.transcript_lines.push(0);
        Ok(index)
    }

    /// Index of the iteration currently accepting records.
    pub fn current_iteration(&self) -> Option<usize> {
        self.record.iterations.len().checked_sub(1)
    }

    fn check_current(&self, iteration: usize) -> Result<(), LedgerError> {
        self.ensure_open()?;
        match self.current_iteration() {
            Some(current) if current == iteration => Ok(()),
            Some(current) if iteration < current => Err(LedgerError::Order(format!(
                "iteration {iteration} is closed; iteration {current} is open"
            ))),
            _ => Err(LedgerError::Order(format!(
                "iteration {iteration} is not open"
            ))),
        }
    }

    /// Appends chat messages to the iteration transcript and returns the
    /// line range they occupy.
    pub fn append_transcript<T: Serialize>(
        &mut self,
        iteration: usize,
        entries: &[T],
    ) -> Result<TranscriptRef, LedgerError> {
        self.check_current(iteration)?;
        let path = iteration_dir(&self.dir, iteration).join("transcript.jsonl");
        let mut lines = Vec::with_capacity(entries.len());
        for entry in entries {
            lines.push(redact_with(
                &serde_json::to_string(entry)?,
                &self.redactions,
            ));
        }
        append_lines(&path, &lines)?;
        let start = self.transcript_lines[iteration];
        let end = start + lines.len();
        self.transcript_lines[iteration] = end;
        Ok(TranscriptRef { start, end })
    }

    /// Appends a completed step, enforcing pipeline order.
    ///
    /// Passing `iteration == len(iterations)` opens that iteration first.
    pub fn record_step(&mut self, iteration: usize, step: StepRecord) -> Result<(), LedgerError> {
        self.ensure_open()?;
        if iteration == self.record.iterations.len() {
            if let Some(last) = self.record.iterations.last() {
                if last.steps.is_empty() {
                    return Err(LedgerError::Order(format!(
                        "iteration {} has no steps yet",
                        last.index
                    )));
                }
            }
            self.open_iteration()?;
        }
        self.check_current(iteration)?;
        self.check_step(iteration, &step)?;

        let path = iteration_dir(&self.dir, iteration).join("steps.jsonl");
        let line = redact_with(&serde_json::to_string(&step)?, &self.redactions);
        let stored: StepRecord = serde_json::from_str(&line)?;
        append_lines(&path, &[line])?;
        self.record.iterations[iteration].steps.push(stored);
        Ok(())
    }

    fn check_step(&self, iteration: usize, step: &StepRecord) -> Result<(), LedgerError> {
        let it = &self.record.iterations[iteration];
        let expected_order = self.record.mode.pipeline(iteration);
        let position = it.steps.len();
        let expected = expected_order.get(position).ok_or_else(|| {
            LedgerError::Order(format!("iteration {iteration} already has all its steps"))
        })?;
        if step.kind != *expected {
            return Err(LedgerError::Order(format!(
                "expected {expected} as step {position} of iteration {iteration}, got {}",
                step.kind
            )));
        }
        if let Some(prev) = it.steps.last() {
            if !prev.passed() {
                return Err(LedgerError::Order(format!(
                    "{} cannot follow failed step {}",
                    step.kind, prev.kind
                )));
            }
        }
        if step.attempts.is_empty() {
            return Err(LedgerError::Precondition(format!(
                "{} has no attempts",
                step.kind
            )));
        }
        let cap = self.record.config.max_step_attempts as usize;
        if step.attempts.len() > cap {
            return Err(LedgerError::Precondition(format!(
                "{} has {} attempts, cap is {cap}",
                step.kind,
                step.attempts.len()
            )));
        }
        if step.passed() && !step.attempts.last().is_some_and(|a| a.verdict.pass) {
            return Err(LedgerError::Precondition(format!(
                "{} is marked passed but its last attempt failed validation",
                step.kind
            )));
        }
        let lines = self.transcript_lines[iteration];
        if step
            .attempts
            .iter()
            .any(|a| a.transcript.end > lines || a.transcript.start > a.transcript.end)
        {
            return Err(LedgerError::Precondition(format!(
                "{} references transcript lines beyond the {lines} written",
                step.kind
            )));
        }
        if step.kind == StepKind::Reflect && it.reflection.is_none() {
            return Err(LedgerError::Precondition(
                "REFLECT step recorded before its reflection note".into(),
            ));
        }
        Ok(())
    }

    /// Stores the training scalars of an iteration whose TRAIN step passed.
    pub fn record_metrics(
        &mut self,
        iteration: usize,
        metrics: &MetricReport,
    ) -> Result<(), LedgerError> {
        self.check_current(iteration)?;
        let it = &self.record.iterations[iteration];
        if !it.step(StepKind::Train).is_some_and(StepRecord::passed) {
            return Err(LedgerError::Precondition(
                "metrics can only be recorded after TRAIN passed".into(),
            ));
        }
        if it.metrics.is_some() {
            return Err(LedgerError::Precondition(format!(
                "iteration {iteration} already has metrics"
            )));
        }
        let path = iteration_dir(&self.dir, iteration).join("metrics.json");
        let stored = write_json(&path, metrics, &self.redactions)?;
        self.record.iterations[iteration].metrics = Some(stored);
        Ok(())
    }

    pub fn record_reflection(
        &mut self,
        iteration: usize,
        note: &ReflectionNote,
    ) -> Result<(), LedgerError> {
        self.check_current(iteration)?;
        let it = &self.record.iterations[iteration];
        if it.metrics.is_none() {
            return Err(LedgerError::Precondition(
                "reflection requires the iteration's metrics".into(),
            ));
        }
        if it.reflection.is_some() {
            return Err(LedgerError::Precondition(format!(
                "iteration {iteration} already has a reflection"
            )));
        }
        let dir = iteration_dir(&self.dir, iteration);
        let stored: ReflectionNote =
            write_json(&dir.join("reflection.json"), note, &self.redactions)?;
        write_synced(&dir.join("reflection.md"), stored.text.as_bytes())?;
        self.record.iterations[iteration].reflection = Some(stored);
        Ok(())
    }

    /// Copies `work/`, `artifacts/` and `metrics.json` from the workspace
    /// into the iteration's artifact directory.
    pub fn snapshot_artifacts(
        &mut self,
        iteration: usize,
        sandbox: &dyn Sandbox,
    ) -> Result<(), LedgerError> {
        self.check_current(iteration)?;
        let dest = iteration_dir(&self.dir, iteration).join("artifacts");
        for rel in ["work", "artifacts", crate::validation::METRICS_PATH] {
            if sandbox.exists(rel) {
                sandbox
                    .copy_out(rel, &dest.join(rel))
                    .map_err(|e| LedgerError::Io(io::Error::other(e.to_string())))?;
            }
        }
        Ok(())
    }

    /// Selects the best iteration, writes `best.json` and freezes the run.
    pub fn finalize(&mut self, failure_reason: Option<String>) -> Result<&RunRecord, LedgerError> {
        self.ensure_open()?;
        let best = select_best_iteration(&self.record);
        let metric = self.record.manifest.metric.name().to_string();
        let (outcome, reason) = match best {
            Some(_) => (Outcome::Success, None),
            None => (
                Outcome::Failure,
                Some(failure_reason.unwrap_or_else(|| {
                    "no iteration produced a validated inference script".into()
                })),
            ),
        };
        let best_it = best.map(|i| &self.record.iterations[i]);
        let record = BestRecord {
            outcome,
            best_iteration: best,
            inference_script: best_it
                .and_then(|it| it.validated_inference_script().map(str::to_string)),
            artifacts_dir: best_it.map(|it| it.artifacts_dir.clone()),
            metric: metric.clone(),
            validation_value: best_it
                .and_then(|it| it.metrics.as_ref())
                .and_then(|m| m.validation_value(&metric)),
            failure_reason: reason,
            finalized_at: Utc::now(),
        };
        let stored: BestRecord =
            write_json(&self.dir.join("best.json"), &record, &self.redactions)?;
        self.record.outcome = Some(stored.outcome);
        self.record.best = stored.best_iteration;
        self.record.failure_reason = stored.failure_reason;
        Ok(&self.record)
    }
}

/// Among iterations with a validated inference script, the one with the
/// highest validation metric; ties go to the earliest iteration and an
/// iteration without metrics ranks below any with metrics.
pub fn select_best_iteration(record: &RunRecord) -> Option<usize> {
    let metric = record.manifest.metric.name();
    let mut best: Option<(usize, Option<f64>)> = None;
    for it in &record.iterations {
        if it.validated_inference_script().is_none() {
            continue;
        }
        let value = it.metrics.as_ref().and_then(|m| m.validation_value(metric));
        let better = match (&best, value) {
            (None, _) => true,
            (Some((_, None)), Some(_)) => true,
            (Some((_, Some(current))), Some(v)) => v > *current,
            _ => false,
        };
        if better {
            best = Some((it.index, value));
        }
    }
    best.map(|(index, _)| index)
}

/// Keys whose values differ between otherwise identical executions.
pub const TIMESTAMP_KEYS: [&str; 3] = ["created_at", "finalized_at", "evaluated_at"];

/// Every file under `run_dir`, with JSON and JSONL content re-serialized
/// without timestamp keys. Two executions of the same fixture and seed
/// produce equal snapshots.
pub fn normalized_snapshot(run_dir: &Path) -> io::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for entry in walkdir::WalkDir::new(run_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| io::Error::other(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(run_dir)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .replace('\\', "/");
        let bytes = fs::read(entry.path())?;
        let normalized = if rel.ends_with(".jsonl") {
            let text = String::from_utf8_lossy(&bytes);
            text.lines()
                .map(strip_timestamps_text)
                .collect::<Vec<_>>()
                .join("\n")
                .into_bytes()
        } else if rel.ends_with(".json") {
            strip_timestamps_text(&String::from_utf8_lossy(&bytes)).into_bytes()
        } else {
            bytes
        };
        out.insert(rel, normalized);
    }
    Ok(out)
}

fn strip_timestamps_text(text: &str) -> String {
    match serde_json::from_str::<serde_json::Value>(text) {
        Ok(mut value) => {
            strip_timestamps(&mut value);
            value.to_string()
        }
        Err(_) => text.to_string(),
    }
}

fn strip_timestamps(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for key in TIMESTAMP_KEYS {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timestamps);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timestamps),
        _ => {}
    }
}

fn iteration_dir(run_dir: &Path, index: usize) -> PathBuf {
    run_dir.join("iterations").join(format!("{index:03}"))
}

fn artifacts_rel(index: usize) -> String {
    format!("iterations/{index:03}/artifacts")
}

fn slug(name: &str) -> String {
    let slug: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c
            } else {
                '-'
            }
        })
        .collect();
    if slug.is_empty() {
        "run".to_string()
    } else {
        slug
    }
}

/// Serializes, redacts, writes and syncs; returns the value as stored.
fn write_json<T: Serialize + DeserializeOwned>(
    path: &Path,
    value: &T,
    redactions: &[String],
) -> Result<T, LedgerError> {
    let text = redact_with(&serde_json::to_string_pretty(value)?, redactions);
    write_synced(path, text.as_bytes())?;
    Ok(serde_json::from_str(&text)?)
}

fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut file = File::create(path)?;
    file.write_all(bytes)?;
    file.sync_all()
}

fn append_lines(path: &Path, lines: &[String]) -> io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = String::new();
    for line in lines {
        buf.push_str(line);
        buf.push('\n');
    }
    file.write_all(buf.as_bytes())?;
    file.sync_all()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, LedgerError> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| LedgerError::Corrupt(format!("{}: {e}", path.display())))
}

fn read_optional<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, LedgerError> {
    if path.is_file() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, LedgerError> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            LedgerError::Corrupt(format!("{} line {}: {e}", path.display(), n + 1))
        })?);
    }
    Ok(out)
}
