//! The tool-use loop of one step attempt.

use serde_json::{Map, Value};
use thiserror::Error;

use super::tools::execute_tool_call;
use super::{
    parse_structured_output, ChatMessage, Gateway, GatewayError, OutputSchema, RunBudget,
    SchemaError, ToolSchema,
};
use crate::sandbox::{Sandbox, SandboxError};

#[derive(Debug, Error)]
pub enum TurnError {
    /// The final answer did not match the step's schema.
    #[error("[schema] {0}")]
    Schema(SchemaError),

    #[error("[turn_cap] no final answer within {0} model turns")]
    TurnCap(u32),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

impl TurnError {
    /// Errors that end the run rather than just the attempt.
    pub fn is_fatal(&self) -> bool {
        matches!(self, TurnError::Gateway(_) | TurnError::Sandbox(_))
    }
}

/// Model and limits for one attempt.
#[derive(Debug, Clone, Copy)]
pub struct TurnSettings<'a> {
    pub model_id: &'a str,
    pub temperature: Option<f64>,
    pub turn_cap: u32,
    pub tool_timeout_s: u64,
}

/// Alternates model turns and tool executions until the model answers
/// without tool calls, then parses that answer against `schema`.
///
/// Every message exchanged is appended to `messages`; each tool call gets
/// exactly one tool message in reply.
#[allow(clippy::too_many_arguments)]
pub fn drive_agent_turns(
    gateway: &Gateway,
    budget: &mut RunBudget,
    settings: TurnSettings<'_>,
    messages: &mut Vec<ChatMessage>,
    tools: &[ToolSchema],
    schema: &OutputSchema,
    sandbox: &mut dyn Sandbox,
) -> Result<Map<String, Value>, TurnError> {
    sandbox.ensure_live()?;
    for _ in 0..settings.turn_cap {
        let (reply, _usage) = gateway.complete(
            budget,
            messages,
            tools,
            settings.model_id,
            settings.temperature,
        )?;
        let calls = reply.tool_calls.clone();
        let content = reply.content.clone();
        messages.push(reply);
        if calls.is_empty() {
            return parse_structured_output(&content, schema).map_err(TurnError::Schema);
        }
        for call in &calls {
            let output = execute_tool_call(sandbox, call, settings.tool_timeout_s)?;
            messages.push(ChatMessage::tool(call.id.clone(), output));
        }
    }
    Err(TurnError::TurnCap(settings.turn_cap))
}
