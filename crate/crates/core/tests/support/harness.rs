//! Datasets, scripted gateways and fake ledgers for integration tests.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use mlpilot_core::bench::{generate_synthetic, SyntheticKind, SyntheticSpec};
use mlpilot_core::gateway::{
    BackendReply, ChatBackend, ChatMessage, CompletionRequest, CostTable, Gateway, ScriptedBackend,
    ScriptedFixture, TransportError,
};
use mlpilot_core::ledger::{Ledger, TestMetrics};
use mlpilot_core::model::{
    Attempt, Backend, DatasetManifest, Metric, MetricReport, RunConfig, RunMode, StepKind, StepRecord,
    StepStatus, Task, TranscriptRef,
};
use mlpilot_core::pipeline::PipelineEnv;
use mlpilot_core::sandbox::ProcessFactory;
use mlpilot_core::validation::ValidationVerdict;
use serde_json::{json, Value};
use tempfile::TempDir;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/planted_motif")
}

/// A scratch directory with a planted-motif dataset and an empty ledger.
pub struct Workbench {
    pub dir: TempDir,
    pub manifest: DatasetManifest,
    pub ledger: Ledger,
    pub factory: ProcessFactory,
}

impl Workbench {
    pub fn new(n_train: usize, n_test: usize, seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            kind: SyntheticKind::PlantedMotif,
            n_train,
            n_test,
            seed,
            ..SyntheticSpec::default()
        };
        let out = generate_synthetic(&spec, &dir.path().join("data")).unwrap();
        let ledger = Ledger::new(dir.path().join("ledger"));
        Self {
            dir,
            manifest: out.manifest,
            ledger,
            factory: ProcessFactory::new("python3"),
        }
    }

    pub fn env<'a>(&'a self, gateway: &'a Gateway) -> PipelineEnv<'a> {
        PipelineEnv {
            gateway,
            sandboxes: &self.factory,
            ledger: &self.ledger,
        }
    }
}

pub fn plain_config(seed: u64, max_iterations: u32) -> RunConfig {
    RunConfig {
        seed,
        max_iterations,
        backend: Backend::PlainProcess,
        tool_timeout_s: 60,
        ..RunConfig::default()
    }
}

/// Gateway over a fixture given inline; includes resolve against the
/// bundled fixture directory.
pub fn scripted(value: Value) -> (Gateway, Arc<ScriptedBackend>) {
    let backend = Arc::new(ScriptedBackend::new(ScriptedFixture::from_value(value).unwrap()));
    (Gateway::new(backend.clone(), CostTable::default()), backend)
}

pub fn bundled(name: &str) -> (Gateway, Arc<ScriptedBackend>) {
    let fixture = ScriptedFixture::load(&fixtures_dir().join(name)).unwrap();
    let backend = Arc::new(ScriptedBackend::new(fixture));
    (Gateway::new(backend.clone(), CostTable::default()), backend)
}

/// Replies from a list and remembers every request it saw.
pub struct Recording {
    replies: Mutex<Vec<String>>,
    pub requests: Mutex<Vec<Vec<ChatMessage>>>,
}

impl Recording {
    pub fn new(replies: &[&str]) -> Arc<Self> {
        Arc::new(Self {
            replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
            requests: Mutex::new(Vec::new()),
        })
    }
}

impl ChatBackend for Recording {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<BackendReply, TransportError> {
        self.requests.lock().unwrap().push(request.messages.to_vec());
        let text = self
            .replies
            .lock()
            .unwrap()
            .pop()
            .ok_or_else(|| TransportError::Fatal("no more replies".into()))?;
        Ok(BackendReply {
            message: ChatMessage::assistant(text),
            prompt_tokens: 10,
            completion_tokens: 10,
            cost_usd: None,
        })
    }
}

pub fn tool_call(name: &str, arguments: Value) -> Value {
    json!({"tool_calls": [{"name": name, "arguments": arguments}]})
}

pub fn answer(value: Value) -> Value {
    json!({"content": value.to_string()})
}

/// Writes a tiny dataset so that manifests for made-up dataset names are
/// loadable; returns the manifest.
pub fn stub_manifest(root: &Path, name: &str) -> DatasetManifest {
    let dir = root.join("data").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    let train = dir.join("train.csv");
    let test = dir.join("test.csv");
    std::fs::write(&train, "x,label\n1,1\n0,0\n").unwrap();
    std::fs::write(&test, "x,label\n1,1\n").unwrap();
    DatasetManifest {
        name: name.to_string(),
        train_path: train,
        test_path: test,
        label_column: "label".into(),
        feature_columns: vec!["x".into()],
        task: Task::BinaryClassification,
        metric: Metric::AveragePrecision,
        description: None,
        positive_label: Some("1".into()),
    }
}

fn passed_step(kind: StepKind, output: Value) -> StepRecord {
    StepRecord {
        kind,
        attempts: vec![Attempt {
            transcript: TranscriptRef { start: 0, end: 0 },
            verdict: ValidationVerdict::passed(vec!["fixture".into()]),
            error: None,
        }],
        status: StepStatus::Passed,
        output,
    }
}

/// Records a finalized single-iteration run for `method` without executing
/// anything. `test_value: None` with `success` leaves the run unevaluated.
pub fn fake_run(
    ledger: &Ledger,
    manifest: &DatasetManifest,
    method: &str,
    seed: u64,
    success: bool,
    test_value: Option<f64>,
) -> String {
    let config = RunConfig {
        seed,
        method_label: Some(method.to_string()),
        ..RunConfig::default()
    };
    let mut writer = ledger
        .create_run(manifest, &config, RunMode::ZeroShot, method, false)
        .unwrap();
    let run_id = writer.run_id().to_string();
    let script = json!({"script_path": "work/solution.py"});
    writer.record_step(0, passed_step(StepKind::TrainScript, script.clone())).unwrap();
    if success {
        writer.record_step(0, passed_step(StepKind::Train, script)).unwrap();
        let mut metrics = MetricReport::default();
        metrics.train.insert(manifest.metric.name().into(), 0.9);
        metrics.validation.insert(manifest.metric.name().into(), 0.8);
        writer.record_metrics(0, &metrics).unwrap();
        writer
            .record_step(
                0,
                passed_step(StepKind::InferenceScript, json!({"script_path": "work/inference.py"})),
            )
            .unwrap();
    }
    writer.finalize(None).unwrap();
    if let (true, Some(value)) = (success, test_value) {
        ledger
            .record_test_metrics(&TestMetrics {
                run_id: run_id.clone(),
                metric: manifest.metric.name().into(),
                value: Some(value),
                n_rows: 1,
                error: None,
                evaluated_at: Utc::now(),
            })
            .unwrap();
    }
    run_id
}
