//! The agent's tool set and its dispatch onto a sandbox.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::ToolCall;
use crate::sandbox::{screen_script, PathDecision, Sandbox, SandboxError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    /// JSON Schema of the argument object.
    pub parameters: Value,
}

pub const BASH: &str = "bash";
pub const WRITE_FILE: &str = "write_file";
pub const RUN_SCRIPT: &str = "run_script";

/// `bash`, `write_file` and `run_script`.
pub fn standard_tools() -> Vec<ToolSchema> {
    vec![
        ToolSchema {
            name: BASH.into(),
            description: "Run a shell command with /workspace as the working directory. \
                          Returns exit code, stdout and stderr."
                .into(),
            parameters: json!({
                "type": "object",
                "properties": {"command": {"type": "string"}},
                "required": ["command"],
                "additionalProperties": false
            }),
        },
        ToolSchema {
            name: WRITE_FILE.into(),
            description: "Create or overwrite a file. `path` is relative to /workspace.".into(),
            parameters: json!({
                "type": "object",
                "properties": {"path": {"type": "string"}, "content": {"type": "string"}},
                "required": ["path", "content"],
                "additionalProperties": false
            }),
        },
        ToolSchema {
            name: RUN_SCRIPT.into(),
            description: "Run a Python script from the workspace with optional arguments.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "path": {"type": "string"},
                    "args": {"type": "array", "items": {"type": "string"}}
                },
                "required": ["path"],
                "additionalProperties": false
            }),
        },
    ]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BashArgs {
    command: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WriteFileArgs {
    path: String,
    content: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunScriptArgs {
    path: String,
    #[serde(default)]
    args: Vec<String>,
}

/// Executes one tool call and renders the tool-message content.
///
/// Problems the agent can fix (bad arguments, unknown tool, policy denial)
/// come back as content; only a dead sandbox is an error.
pub fn execute_tool_call(
    sandbox: &mut dyn Sandbox,
    call: &ToolCall,
    timeout_s: u64,
) -> Result<String, SandboxError> {
    let result = match call.name.as_str() {
        BASH => match parse::<BashArgs>(call) {
            Ok(args) => sandbox
                .exec_shell(&args.command, timeout_s)
                .map(|r| json!(r)),
            Err(e) => Ok(e),
        },
        WRITE_FILE => match parse::<WriteFileArgs>(call) {
            Ok(args) => match screen_content(sandbox, &args.content)
                .and_then(|()| sandbox.write_script(&args.path, args.content.as_bytes()))
            {
                Ok(written) => Ok(json!({"written": written, "bytes": args.content.len()})),
                Err(SandboxError::Policy(reason)) => Ok(json!({"denied": true, "error": reason})),
                Err(e) => Err(e),
            },
            Err(e) => Ok(e),
        },
        RUN_SCRIPT => match parse::<RunScriptArgs>(call) {
            Ok(args) => sandbox
                .run_script(&args.path, &args.args, timeout_s)
                .map(|r| json!(r)),
            Err(e) => Ok(e),
        },
        other => Ok(json!({
            "error": format!("unknown tool `{other}`; available tools: {BASH}, {WRITE_FILE}, {RUN_SCRIPT}")
        })),
    };
    match result {
        Ok(value) => Ok(value.to_string()),
        Err(SandboxError::Stale) => Err(SandboxError::Stale),
        Err(e @ SandboxError::Provision { .. }) => Err(e),
        Err(e) => Ok(json!({"error": e.to_string()}).to_string()),
    }
}

/// File contents are screened like script bodies, so withheld paths never
/// land in the workspace (and from there in artifact snapshots).
fn screen_content(sandbox: &dyn Sandbox, content: &str) -> Result<(), SandboxError> {
    match screen_script(sandbox.spec(), sandbox.workspace(), content, &[]) {
        PathDecision::Allow => Ok(()),
        PathDecision::Deny(reason) => Err(SandboxError::Policy(reason)),
    }
}

fn parse<T: for<'de> Deserialize<'de>>(call: &ToolCall) -> Result<T, Value> {
    serde_json::from_str(&call.arguments)
        .map_err(|e| json!({"error": format!("invalid arguments for `{}`: {e}", call.name)}))
}
