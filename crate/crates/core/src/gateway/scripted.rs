//! Replays canned model turns from a JSON fixture.
//!
//! The reply to call `i` depends only on the fixture and `i`, so a run driven
//! by a fixture is reproducible. Fixture format:
//!
//! ```json
//! {
//!   "responses": [
//!     {"tool_calls": [{"name": "bash", "arguments": {"command": "ls data"}}]},
//!     {"content": {"$include": "design.json"}, "prompt_tokens": 900},
//!     {"transport_error": "connection reset"},
//!     {"content": "...", "repeat": 5, "expect_prompt_contains": "[output_format]"}
//!   ]
//! }
//! ```
//!
//! Any object of the form `{"$include": "relative/path"}` is replaced by the
//! contents of that file (relative to the fixture) before parsing.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendReply, ChatBackend, ChatMessage, CompletionRequest, ToolCall, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedToolCall {
    pub name: String,
    /// An object is serialized; a string is passed through verbatim, which
    /// lets fixtures emit malformed arguments.
    pub arguments: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptedResponse {
    pub content: Option<String>,
    pub tool_calls: Vec<ScriptedToolCall>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_usd: Option<f64>,
    /// Fails the call unless some message in the request contains this text.
    pub expect_prompt_contains: Option<String>,
    /// Simulates a transient transport failure for this call.
    pub transport_error: Option<String>,
    /// Number of consecutive calls answered by this entry (default 1).
    pub repeat: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedFixture {
    pub responses: Vec<ScriptedResponse>,
}

impl ScriptedFixture {
    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        let mut value: Value = serde_json::from_str(&text)?;
        resolve_includes(&mut value, path.parent().unwrap_or(Path::new(".")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, crate::Error> {
        let raw: ScriptedFixture = serde_json::from_value(value)?;
        Ok(raw.expanded())
    }

    /// Unrolls `repeat` counts so that entry `i` answers call `i`.
    fn expanded(self) -> Self {
        let mut responses = Vec::new();
        for mut entry in self.responses {
            let times = entry.repeat.take().unwrap_or(1);
            for _ in 0..times {
                responses.push(entry.clone());
            }
        }
        Self { responses }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

fn resolve_includes(value: &mut Value, base: &Path) -> Result<(), crate::Error> {
    match value {
        Value::Object(map) => {
            if map.len() == 1 {
                if let Some(Value::String(rel)) = map.get("$include") {
                    let text = std::fs::read_to_string(base.join(rel))?;
                    *value = Value::String(text);
                    return Ok(());
                }
            }
            for child in map.values_mut() {
                resolve_includes(child, base)?;
            }
        }
        Value::Array(items) => {
            for child in items {
                resolve_includes(child, base)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Deterministic backend over a [`ScriptedFixture`]. Use one instance per run.
#[derive(Debug)]
pub struct ScriptedBackend {
    fixture: ScriptedFixture,
    cursor: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(fixture: ScriptedFixture) -> Self {
        Self {
            fixture,
            cursor: AtomicUsize::new(0),
        }
    }

    /// Number of calls answered so far.
    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }

    /// The reply to call `index`, independent of any state.
    pub fn reply_at(
        &self,
        index: usize,
        request: &CompletionRequest<'_>,
    ) -> Result<BackendReply, TransportError> {
        let entry = self.fixture.responses.get(index).ok_or_else(|| {
            TransportError::Fatal(format!(
                "scripted fixture exhausted after {} calls",
                self.fixture.len()
            ))
        })?;
        if let Some(message) = &entry.transport_error {
            return Err(TransportError::Transient(message.clone()));
        }
        if let Some(needle) = &entry.expect_prompt_contains {
            if !request
                .messages
                .iter()
                .any(|m| m.content.contains(needle.as_str()))
            {
                return Err(TransportError::Fatal(format!(
                    "scripted call {index}: no message contains {needle:?}"
                )));
            }
        }
        let tool_calls = entry
            .tool_calls
            .iter()
            .enumerate()
            .map(|(j, call)| ToolCall {
                id: format!("call_{index}_{j}"),
                name: call.name.clone(),
                arguments: match &call.arguments {
                    Value::String(raw) => raw.clone(),
                    other => other.to_string(),
                },
            })
            .collect();
        Ok(BackendReply {
            message: ChatMessage {
                tool_calls,
                ..ChatMessage::assistant(entry.content.clone().unwrap_or_default())
            },
            prompt_tokens: entry.prompt_tokens,
            completion_tokens: entry.completion_tokens,
            cost_usd: entry.cost_usd,
        })
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<BackendReply, TransportError> {
        let index = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.reply_at(index, request)
    }
}
