//! Single-completion baseline: one prompt, one program, no tools or retries.

use log::{info, warn};
use serde_json::json;

use crate::gateway::{ChatMessage, Gateway, GatewayError, RunBudget};
use crate::ledger::RunWriter;
use crate::model::{
    Attempt, DatasetManifest, RunConfig, RunMode, RunRecord, StepKind, StepRecord, StepStatus,
};
use crate::pipeline::{manifest_task_vars, PipelineEnv, Template};
use crate::sandbox::{Sandbox, SandboxSpec};
use crate::validation::{
    validate_inference_script, validate_script_compiles, validate_training_outputs,
    ValidationVerdict, METRICS_PATH,
};

/// Where the extracted program is saved.
pub const SOLUTION_PATH: &str = "work/solution.py";
/// Where the program must leave its inference script.
pub const INFERENCE_PATH: &str = "work/inference.py";

/// First fenced code block in `text`, without the fence lines.
pub fn extract_code_block(text: &str) -> Option<String> {
    let start = text.find("```")?;
    let after_fence = &text[start + 3..];
    let body_start = after_fence.find('\n')? + 1;
    let body = &after_fence[body_start..];
    let end = body.find("```")?;
    Some(body[..end].to_string())
}

/// Prompt shared by every zero-shot run on a dataset.
pub fn zero_shot_prompt(manifest: &DatasetManifest) -> Result<String, crate::Error> {
    let vars = manifest_task_vars(manifest);
    let vars: Vec<(&str, &str)> = vars.iter().map(|(k, v)| (*k, v.as_str())).collect();
    let task = Template::Task.render(&vars)?;
    Ok(Template::ZeroShot.render(&[("task", task.trim_end())])?)
}

/// Runs the baseline and returns the finalized single-iteration record.
///
/// The completion's first fenced block is saved to [`SOLUTION_PATH`] and
/// executed once; the run succeeds iff it trains and leaves a conforming
/// inference script at [`INFERENCE_PATH`].
pub fn zero_shot_run(
    manifest: &DatasetManifest,
    config: &RunConfig,
    env: PipelineEnv<'_>,
) -> Result<RunRecord, crate::Error> {
    manifest.validate_with_data()?;
    config.validate()?;
    let method = config
        .method_label
        .clone()
        .unwrap_or_else(|| format!("{}:{}", RunMode::ZeroShot.label(), config.model_id));
    let isolated = env.sandboxes.backend().is_isolated();
    let mut writer =
        env.ledger
            .create_run(manifest, config, RunMode::ZeroShot, &method, !isolated)?;

    let spec = SandboxSpec::for_dataset(manifest, config);
    let provisioned = spec
        .validate_against(&manifest.test_path)
        .and_then(|()| env.sandboxes.provision(spec));
    let mut sandbox = match provisioned {
        Ok(s) => s,
        Err(e) => {
            return Ok(writer
                .finalize(Some(format!("sandbox provisioning failed: {e}")))?
                .clone())
        }
    };
    let reason = attempt(manifest, config, env.gateway, &mut writer, sandbox.as_mut());
    let snapshot = if writer.current_iteration().is_some() {
        writer.snapshot_artifacts(0, sandbox.as_ref())
    } else {
        Ok(())
    };
    if let Err(e) = sandbox.teardown() {
        warn!("sandbox teardown failed: {e}");
    }
    snapshot?;
    let record = writer.finalize(reason?)?;
    info!(
        "zero-shot run {} finished: {:?}",
        record.run_id, record.outcome
    );
    Ok(record.clone())
}

/// Returns the failure reason, if any.
fn attempt(
    manifest: &DatasetManifest,
    config: &RunConfig,
    gateway: &Gateway,
    writer: &mut RunWriter,
    sandbox: &mut dyn Sandbox,
) -> Result<Option<String>, crate::Error> {
    let it = writer.open_iteration()?;
    let mut budget = RunBudget::new(config.budget_usd);
    let messages = vec![
        ChatMessage::system(Template::System.render(&[])?),
        ChatMessage::user(zero_shot_prompt(manifest)?),
    ];
    let reply = match gateway.complete(
        &mut budget,
        &messages,
        &[],
        &config.model_id,
        config.temperature,
    ) {
        Ok((reply, _)) => reply,
        Err(e) => {
            let range = writer.append_transcript(it, &messages)?;
            record_failed(
                writer,
                it,
                StepKind::TrainScript,
                range,
                "aborted",
                &e.to_string(),
            )?;
            return Ok(Some(match e {
                GatewayError::Budget { .. } => format!("budget exhausted: {e}"),
                GatewayError::Transport { .. } => format!("model call failed: {e}"),
            }));
        }
    };
    let mut exchange = messages;
    exchange.push(reply.clone());
    let range = writer.append_transcript(it, &exchange)?;

    let Some(code) = extract_code_block(&reply.content) else {
        record_failed(
            writer,
            it,
            StepKind::TrainScript,
            range,
            "code_block",
            "no code block",
        )?;
        return Ok(Some("no code block".to_string()));
    };
    let timeout = config.tool_timeout_s;
    let compiled = match sandbox.write_script(SOLUTION_PATH, code.as_bytes()) {
        Ok(_) => {
            validate_script_compiles(sandbox, SOLUTION_PATH, &config.guest_compile_cmd, timeout)?
        }
        Err(e) => ValidationVerdict::failed(vec!["exists".into()], "exists", e.to_string()),
    };
    if !record(
        writer,
        it,
        StepKind::TrainScript,
        range,
        compiled,
        json!({"script_path": SOLUTION_PATH}),
    )? {
        return Ok(Some(failure(writer, it)));
    }

    sandbox.remove_file(METRICS_PATH)?;
    let result = sandbox.run_script(SOLUTION_PATH, &[], timeout)?;
    let range = writer.append_transcript(
        it,
        &[ChatMessage::user(format!(
            "[orchestrator] run of `{SOLUTION_PATH}` finished: {}",
            json!({"exit_code": result.exit_code, "timed_out": result.timed_out, "stderr_tail": result.tail(2000)})
        ))],
    )?;
    let (verdict, metrics) = validate_training_outputs(sandbox, &result, manifest.metric);
    if !record(
        writer,
        it,
        StepKind::Train,
        range,
        verdict,
        json!({"script_path": SOLUTION_PATH}),
    )? {
        return Ok(Some(failure(writer, it)));
    }
    if let Some(metrics) = metrics {
        writer.record_metrics(it, &metrics)?;
    }

    let verdict = validate_inference_script(
        sandbox,
        INFERENCE_PATH,
        manifest,
        &config.guest_compile_cmd,
        timeout,
    )?;
    let range = writer.append_transcript(
        it,
        &[ChatMessage::user(format!(
            "[orchestrator] inference script check: {}",
            verdict.error.as_deref().unwrap_or("passed")
        ))],
    )?;
    if !record(
        writer,
        it,
        StepKind::InferenceScript,
        range,
        verdict,
        json!({"script_path": INFERENCE_PATH}),
    )? {
        return Ok(Some(failure(writer, it)));
    }
    Ok(None)
}

fn record(
    writer: &mut RunWriter,
    iteration: usize,
    kind: StepKind,
    transcript: crate::model::TranscriptRef,
    verdict: ValidationVerdict,
    output: serde_json::Value,
) -> Result<bool, crate::Error> {
    let pass = verdict.pass;
    writer.record_step(
        iteration,
        StepRecord {
            kind,
            attempts: vec![Attempt {
                transcript,
                verdict,
                error: None,
            }],
            status: if pass {
                StepStatus::Passed
            } else {
                StepStatus::Failed
            },
            output: if pass {
                output
            } else {
                serde_json::Value::Null
            },
        },
    )?;
    Ok(pass)
}

fn record_failed(
    writer: &mut RunWriter,
    iteration: usize,
    kind: StepKind,
    transcript: crate::model::TranscriptRef,
    check: &str,
    message: &str,
) -> Result<(), crate::Error> {
    let verdict = ValidationVerdict::failed(vec![check.to_string()], check, message);
    record(
        writer,
        iteration,
        kind,
        transcript,
        verdict,
        serde_json::Value::Null,
    )?;
    Ok(())
}

fn failure(writer: &RunWriter, iteration: usize) -> String {
    let step = writer.record().iterations[iteration]
        .steps
        .last()
        .expect("a step was recorded");
    let error = step
        .attempts
        .last()
        .and_then(|a| a.verdict.error.clone())
        .unwrap_or_default();
    format!("{} failed: {error}", step.kind)
}
