//! The iteration loop: steps with retry gates, reflection, best selection.

use log::{info, warn};
use serde_json::{json, Value};
use thiserror::Error;

use super::context::{
    build_context, format_scalar, render_reflections, PriorReflection, StepContext,
};
use super::prompts::Template;
use super::steps::{output_schema, step_spec, workspace_relative};
use crate::gateway::{
    drive_agent_turns, standard_tools, ChatMessage, Gateway, GatewayError, Role, RunBudget,
    ToolSchema, TurnError, TurnSettings,
};
use crate::ledger::{Ledger, RunWriter};
use crate::model::{
    Attempt, DatasetManifest, IterationRecord, Metric, MetricReport, ReflectionNote, RunConfig,
    RunMode, RunRecord, StepKind, StepRecord, StepStatus,
};
use crate::sandbox::{Sandbox, SandboxError, SandboxFactory, SandboxSpec};
use crate::validation::{
    validate_design, validate_inference_script, validate_script_compiles,
    validate_training_outputs, ValidationVerdict, METRICS_PATH,
};

/// Longest workspace listing shown to the agent.
const LISTING_LIMIT: usize = 200;
/// Per-message and total character budgets for the reflection transcript.
const REFLECT_MESSAGE_CHARS: usize = 2_000;
const REFLECT_TRANSCRIPT_CHARS: usize = 60_000;
/// Stored when the model twice returns an empty reflection.
pub const PLACEHOLDER_REFLECTION: &str =
    "No reflection was produced for this iteration. Re-check the train and validation metrics before changing the design.";

/// Shared services for a pipeline. The gateway and sandbox factory may be
/// shared across concurrent pipelines.
#[derive(Clone, Copy)]
pub struct PipelineEnv<'a> {
    pub gateway: &'a Gateway,
    pub sandboxes: &'a dyn SandboxFactory,
    pub ledger: &'a Ledger,
}

/// Runs the multi-iteration agent pipeline for one dataset and returns the
/// finalized record.
///
/// Only invalid inputs and ledger I/O failures are errors; everything that
/// goes wrong during the run ends up in the finalized record instead.
pub fn run_pipeline(
    manifest: &DatasetManifest,
    config: &RunConfig,
    env: PipelineEnv<'_>,
) -> Result<RunRecord, crate::Error> {
    manifest.validate_with_data()?;
    config.validate()?;
    let method = config
        .method_label
        .clone()
        .unwrap_or_else(|| format!("{}:{}", RunMode::Agent.label(), config.model_id));
    let backend = env.sandboxes.backend();
    if !backend.is_isolated() {
        warn!("tools run as plain host processes; this run is not isolated");
    }
    let mut writer = env.ledger.create_run(
        manifest,
        config,
        RunMode::Agent,
        &method,
        !backend.is_isolated(),
    )?;
    info!("run {} started", writer.run_id());

    let spec = SandboxSpec::for_dataset(manifest, config);
    let provisioned = spec
        .validate_against(&manifest.test_path)
        .and_then(|()| env.sandboxes.provision(spec));
    let mut sandbox = match provisioned {
        Ok(sandbox) => sandbox,
        Err(e) => {
            let record = writer.finalize(Some(format!("sandbox provisioning failed: {e}")))?;
            return Ok(record.clone());
        }
    };

    let mut runner = Runner {
        env,
        config,
        writer: &mut writer,
        budget: RunBudget::new(config.budget_usd),
        tools: standard_tools(),
    };
    let stop = runner.iterate(sandbox.as_mut());
    if let Err(e) = sandbox.teardown() {
        warn!("sandbox teardown failed: {e}");
    }
    let reason = match stop {
        Ok(reason) => reason,
        Err(e) => Some(format!("ledger error: {e}")),
    };
    let record = writer.finalize(reason)?;
    info!(
        "run {} finished: {:?}, best iteration {:?}",
        record.run_id, record.outcome, record.best
    );
    Ok(record.clone())
}

/// Why an iteration ended early.
enum Stop {
    /// A step exhausted its attempts.
    StepFailed(String),
    /// Budget, gateway or sandbox failure.
    Aborted(String),
}

struct Runner<'a, 'e> {
    env: PipelineEnv<'e>,
    config: &'a RunConfig,
    writer: &'a mut RunWriter,
    budget: RunBudget,
    tools: Vec<ToolSchema>,
}

/// Result of one step, as recorded plus what the orchestrator needs next.
pub struct StepOutcome {
    pub record: StepRecord,
    pub metrics: Option<MetricReport>,
    /// Set when the run cannot continue (budget, gateway, dead sandbox).
    pub abort: Option<String>,
}

impl Runner<'_, '_> {
    /// Runs iterations until the cap or a stop; returns the failure reason to
    /// record if no iteration qualifies as best.
    fn iterate(&mut self, sandbox: &mut dyn Sandbox) -> Result<Option<String>, crate::Error> {
        for _ in 0..self.config.max_iterations {
            let iteration = self.writer.open_iteration()?;
            let stop = self.run_iteration(iteration, sandbox)?;
            self.writer.snapshot_artifacts(iteration, sandbox)?;
            match stop {
                None => continue,
                Some(Stop::StepFailed(reason)) | Some(Stop::Aborted(reason)) => {
                    info!("iteration {iteration} stopped: {reason}");
                    return Ok(Some(reason));
                }
            }
        }
        Ok(None)
    }

    fn run_iteration(
        &mut self,
        iteration: usize,
        sandbox: &mut dyn Sandbox,
    ) -> Result<Option<Stop>, crate::Error> {
        let mut log: Vec<ChatMessage> = Vec::new();
        for &kind in RunMode::Agent.pipeline(iteration) {
            if kind == StepKind::Reflect {
                return self.reflect_step(iteration, &log);
            }
            let outcome = execute_step_with_retry(
                self.writer,
                iteration,
                kind,
                self.env.gateway,
                &mut self.budget,
                self.config,
                &self.tools,
                sandbox,
                &mut log,
            )?;
            let passed = outcome.record.passed();
            let attempts = outcome.record.attempts.len();
            let last_error = outcome
                .record
                .attempts
                .last()
                .and_then(|a| a.verdict.error.clone())
                .unwrap_or_default();
            self.writer.record_step(iteration, outcome.record)?;
            if let Some(metrics) = &outcome.metrics {
                self.writer.record_metrics(iteration, metrics)?;
            }
            if let Some(reason) = outcome.abort {
                return Ok(Some(Stop::Aborted(reason)));
            }
            if !passed {
                return Ok(Some(Stop::StepFailed(format!(
                    "{kind} failed validation after {attempts} attempt(s): {last_error}"
                ))));
            }
        }
        Ok(None)
    }

    fn reflect_step(
        &mut self,
        iteration: usize,
        log: &[ChatMessage],
    ) -> Result<Option<Stop>, crate::Error> {
        let record = self.writer.record();
        let it = &record.iterations[iteration];
        let prior = prior_reflections(record, iteration);
        let result = reflect(
            it,
            log,
            &prior,
            record.manifest.metric,
            self.env.gateway,
            &mut self.budget,
            self.config,
        );
        match result {
            Ok(outcome) => {
                let range = self
                    .writer
                    .append_transcript(iteration, &outcome.messages)?;
                self.writer.record_reflection(iteration, &outcome.note)?;
                self.writer.record_step(
                    iteration,
                    StepRecord {
                        kind: StepKind::Reflect,
                        attempts: vec![Attempt {
                            transcript: range,
                            verdict: ValidationVerdict::passed(vec!["non_empty".into()]),
                            error: None,
                        }],
                        status: StepStatus::Passed,
                        output: json!({"degenerate": outcome.note.degenerate}),
                    },
                )?;
                Ok(None)
            }
            Err(ReflectError::Gateway(e)) => {
                Ok(Some(Stop::Aborted(format!("reflection aborted: {e}"))))
            }
            Err(e @ ReflectError::MissingMetrics(_)) => Ok(Some(Stop::Aborted(e.to_string()))),
        }
    }
}

fn prior_reflections(record: &RunRecord, iteration: usize) -> Vec<PriorReflection> {
    build_context(record, iteration, StepKind::Reflect, Vec::new()).reflections
}

/// Drives one step to a verdict: agent turns, validation, and on failure the
/// validation error fed back for another attempt, up to the attempt cap.
///
/// Every message of every attempt is appended to the iteration transcript
/// (and to `log`, for the reflection step).
#[allow(clippy::too_many_arguments)]
pub fn execute_step_with_retry(
    writer: &mut RunWriter,
    iteration: usize,
    kind: StepKind,
    gateway: &Gateway,
    budget: &mut RunBudget,
    config: &RunConfig,
    tools: &[ToolSchema],
    sandbox: &mut dyn Sandbox,
    log: &mut Vec<ChatMessage>,
) -> Result<StepOutcome, crate::Error> {
    let listing = workspace_listing(sandbox);
    let ctx = build_context(writer.record(), iteration, kind, listing);
    let manifest = writer.record().manifest.clone();
    let mut messages = vec![
        ChatMessage::system(Template::System.render(&[])?),
        ChatMessage::user(step_prompt(&ctx, config)?),
    ];
    let mut written = 0;
    let mut attempts = Vec::new();
    let mut last_error = String::new();

    for attempt_no in 1..=config.max_step_attempts {
        if attempt_no > 1 {
            let feedback = Template::Feedback
                .render(&[("step", &kind.to_string()), ("error", &last_error)])?;
            messages.push(ChatMessage::user(feedback));
        }
        let result = run_attempt(
            kind,
            &manifest,
            gateway,
            budget,
            config,
            tools,
            sandbox,
            &mut messages,
        );

        let new = &messages[written..];
        let range = writer.append_transcript(iteration, new)?;
        log.extend_from_slice(new);
        written = messages.len();

        attempts.push(Attempt {
            transcript: range,
            verdict: result.verdict.clone(),
            error: result.abort.clone(),
        });
        if result.abort.is_some() || result.verdict.pass {
            let status = if result.verdict.pass {
                StepStatus::Passed
            } else {
                StepStatus::Failed
            };
            return Ok(StepOutcome {
                record: StepRecord {
                    kind,
                    attempts,
                    status,
                    output: result.output,
                },
                metrics: result.metrics,
                abort: result.abort,
            });
        }
        last_error = result.verdict.error.unwrap_or_default();
    }
    Ok(StepOutcome {
        record: StepRecord {
            kind,
            attempts,
            status: StepStatus::Failed,
            output: Value::Null,
        },
        metrics: None,
        abort: None,
    })
}

fn workspace_listing(sandbox: &dyn Sandbox) -> Vec<String> {
    let mut files = sandbox.list_files("").unwrap_or_default();
    if files.len() > LISTING_LIMIT {
        let hidden = files.len() - LISTING_LIMIT;
        files.truncate(LISTING_LIMIT);
        files.push(format!("... and {hidden} more"));
    }
    files
}

fn step_prompt(ctx: &StepContext, config: &RunConfig) -> Result<String, crate::Error> {
    let task_vars = ctx.task_vars();
    let vars: Vec<(&str, &str)> = task_vars.iter().map(|(k, v)| (*k, v.as_str())).collect();
    let task = Template::Task.render(&vars)?;
    let schema = output_schema(ctx.step).expect("tool steps have schemas");
    let timeout = config.tool_timeout_s.to_string();
    let step = step_spec(ctx.step).prompt_template.render(&[
        ("output_format", &schema.example()),
        ("timeout_s", &timeout),
    ])?;
    Ok(format!(
        "{}\n{}{}",
        task.trim_end(),
        separator(&ctx.render_history()),
        step
    ))
}

fn separator(history: &str) -> String {
    if history.is_empty() {
        "\n".to_string()
    } else {
        format!("\n{history}")
    }
}

struct AttemptResult {
    verdict: ValidationVerdict,
    output: Value,
    metrics: Option<MetricReport>,
    abort: Option<String>,
}

impl AttemptResult {
    fn fail(verdict: ValidationVerdict) -> Self {
        Self {
            verdict,
            output: Value::Null,
            metrics: None,
            abort: None,
        }
    }

    fn aborted(reason: String) -> Self {
        Self {
            verdict: ValidationVerdict::failed(vec!["aborted".into()], "aborted", &reason),
            output: Value::Null,
            metrics: None,
            abort: Some(reason),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_attempt(
    kind: StepKind,
    manifest: &DatasetManifest,
    gateway: &Gateway,
    budget: &mut RunBudget,
    config: &RunConfig,
    tools: &[ToolSchema],
    sandbox: &mut dyn Sandbox,
    messages: &mut Vec<ChatMessage>,
) -> AttemptResult {
    let schema = output_schema(kind).expect("tool steps have schemas");
    let settings = TurnSettings {
        model_id: &config.model_id,
        temperature: config.temperature,
        turn_cap: config.turn_cap,
        tool_timeout_s: config.tool_timeout_s,
    };
    let mut output =
        match drive_agent_turns(gateway, budget, settings, messages, tools, &schema, sandbox) {
            Ok(map) => Value::Object(map),
            Err(e) if e.is_fatal() => return AttemptResult::aborted(e.to_string()),
            Err(e) => {
                let id = match e {
                    TurnError::TurnCap(_) => "turn_cap",
                    _ => "schema",
                };
                return AttemptResult::fail(ValidationVerdict {
                    pass: false,
                    error: Some(e.to_string()),
                    checked: vec![id.to_string()],
                });
            }
        };
    if let Some(path) = output.get("script_path").and_then(Value::as_str) {
        output["script_path"] = json!(workspace_relative(path));
    }

    let checked = match validate_output(kind, &output, manifest, config, sandbox, messages) {
        Ok(checked) => checked,
        Err(e) => return AttemptResult::aborted(format!("sandbox failure: {e}")),
    };
    let (mut verdict, metrics) = checked;
    verdict.checked.insert(0, "schema".to_string());
    AttemptResult {
        output: if verdict.pass { output } else { Value::Null },
        verdict,
        metrics,
        abort: None,
    }
}

fn validate_output(
    kind: StepKind,
    output: &Value,
    manifest: &DatasetManifest,
    config: &RunConfig,
    sandbox: &mut dyn Sandbox,
    messages: &mut Vec<ChatMessage>,
) -> Result<(ValidationVerdict, Option<MetricReport>), SandboxError> {
    let script = output
        .get("script_path")
        .and_then(Value::as_str)
        .unwrap_or_default();
    let timeout = config.tool_timeout_s;
    Ok(match kind {
        StepKind::Explore => (ValidationVerdict::passed(Vec::new()), None),
        StepKind::Design => (validate_design(output), None),
        StepKind::TrainScript => (
            validate_script_compiles(sandbox, script, &config.guest_compile_cmd, timeout)?,
            None,
        ),
        StepKind::Train => {
            let args: Vec<String> = output
                .get("args")
                .and_then(Value::as_array)
                .map(|a| {
                    a.iter()
                        .filter_map(|v| v.as_str().map(str::to_string))
                        .collect()
                })
                .unwrap_or_default();
            sandbox.remove_file(METRICS_PATH)?;
            let result = sandbox.run_script(script, &args, timeout)?;
            messages.push(ChatMessage::user(format!(
                "[orchestrator] training run of `{script}` finished: {}",
                json!({
                    "exit_code": result.exit_code,
                    "timed_out": result.timed_out,
                    "stdout_tail": last_chars(&result.stdout, 2000),
                    "stderr_tail": last_chars(&result.stderr, 2000),
                })
            )));
            validate_training_outputs(sandbox, &result, manifest.metric)
        }
        StepKind::InferenceScript => (
            validate_inference_script(
                sandbox,
                script,
                manifest,
                &config.guest_compile_cmd,
                timeout,
            )?,
            None,
        ),
        StepKind::Reflect => unreachable!("REFLECT is not a tool step"),
    })
}

#[derive(Debug, Error)]
pub enum ReflectError {
    #[error("precondition failed: iteration {0} has no metrics to reflect on")]
    MissingMetrics(usize),

    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone)]
pub struct ReflectionOutcome {
    pub note: ReflectionNote,
    /// Messages exchanged with the model, for the transcript.
    pub messages: Vec<ChatMessage>,
}

/// Asks the model for a diagnosis of a finished iteration.
///
/// An empty reply is retried once; a second empty reply stores a placeholder
/// note flagged as degenerate.
pub fn reflect(
    iteration: &IterationRecord,
    transcript: &[ChatMessage],
    prior: &[PriorReflection],
    metric: Metric,
    gateway: &Gateway,
    budget: &mut RunBudget,
    config: &RunConfig,
) -> Result<ReflectionOutcome, ReflectError> {
    let metrics = iteration
        .metrics
        .clone()
        .ok_or(ReflectError::MissingMetrics(iteration.index))?;
    let prior_text = if prior.is_empty() {
        String::new()
    } else {
        render_reflections(prior, metric)
    };
    let prompt = Template::Reflect
        .render(&[
            ("iteration", &iteration.index.to_string()),
            ("metric", metric.name()),
            ("train_metrics", &format_map(&metrics.train, metric)),
            (
                "validation_metrics",
                &format_map(&metrics.validation, metric),
            ),
            ("prior_reflections", &prior_text),
            ("transcript", &render_transcript(transcript)),
        ])
        .expect("reflect template variables are complete");
    let mut messages = vec![
        ChatMessage::system(
            Template::System
                .render(&[])
                .expect("system template has no variables"),
        ),
        ChatMessage::user(prompt),
    ];
    let mut text = None;
    for _ in 0..2 {
        let (reply, _) =
            gateway.complete(budget, &messages, &[], &config.model_id, config.temperature)?;
        let content = reply.content.trim().to_string();
        messages.push(reply);
        if !content.is_empty() {
            text = Some(content);
            break;
        }
    }
    let degenerate = text.is_none();
    if degenerate {
        warn!(
            "empty reflection for iteration {}; storing placeholder",
            iteration.index
        );
    }
    Ok(ReflectionOutcome {
        note: ReflectionNote {
            text: text.unwrap_or_else(|| PLACEHOLDER_REFLECTION.to_string()),
            iteration_index: iteration.index,
            metrics_snapshot: metrics,
            degenerate,
        },
        messages,
    })
}

/// `accuracy=0.9100` style listing with the task metric first.
fn format_map(values: &std::collections::BTreeMap<String, f64>, metric: Metric) -> String {
    let mut parts = vec![format!(
        "{}={}",
        metric.name(),
        format_scalar(values.get(metric.name()))
    )];
    for (name, value) in values {
        if name != metric.name() {
            parts.push(format!("{name}={value:.4}"));
        }
    }
    parts.join(", ")
}

fn render_transcript(messages: &[ChatMessage]) -> String {
    let mut lines = Vec::new();
    for message in messages.iter().filter(|m| m.role != Role::System) {
        let role = match message.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        };
        let mut line = format!("[{role}] {}", clip(&message.content, REFLECT_MESSAGE_CHARS));
        for call in &message.tool_calls {
            line.push_str(&format!(
                "\n[{role} -> {}] {}",
                call.name,
                clip(&call.arguments, REFLECT_MESSAGE_CHARS)
            ));
        }
        lines.push(line);
    }
    let text = lines.join("\n");
    let count = text.chars().count();
    if count <= REFLECT_TRANSCRIPT_CHARS {
        text
    } else {
        // Keep the end of the iteration, where the results are.
        let tail: String = text
            .chars()
            .skip(count - REFLECT_TRANSCRIPT_CHARS)
            .collect();
        format!("[... earlier turns omitted ...]\n{tail}")
    }
}

fn last_chars(text: &str, max_chars: usize) -> String {
    let count = text.chars().count();
    text.chars().skip(count.saturating_sub(max_chars)).collect()
}

fn clip(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        text.to_string()
    } else {
        let head: String = text.chars().take(max_chars).collect();
        format!("{head} [...]")
    }
}
