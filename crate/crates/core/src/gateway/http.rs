//! Chat-completions backend over HTTP(S), compatible with any server that
//! speaks the common `/chat/completions` JSON protocol with tool calling.

use std::time::Duration;

use serde_json::{json, Value};

use super::{
    BackendReply, ChatBackend, ChatMessage, CompletionRequest, Role, ToolCall, TransportError,
};

/// Environment variables consulted for the endpoint, in order.
pub const BASE_URL_VARS: [&str; 2] = ["MLPILOT_API_BASE", "OPENAI_BASE_URL"];
pub const API_KEY_VARS: [&str; 2] = ["MLPILOT_API_KEY", "OPENAI_API_KEY"];
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent,
        }
    }

    /// Endpoint and key from the environment.
    pub fn from_env() -> Self {
        let first = |vars: &[&str]| {
            vars.iter()
                .find_map(|v| std::env::var(v).ok().filter(|s| !s.is_empty()))
        };
        Self::new(
            first(&BASE_URL_VARS).unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
            first(&API_KEY_VARS),
        )
    }

    fn body(request: &CompletionRequest<'_>) -> Value {
        let messages: Vec<Value> = request.messages.iter().map(encode_message).collect();
        let mut body = json!({
            "model": request.model_id,
            "messages": messages,
        });
        if !request.tools.is_empty() {
            body["tools"] = request
                .tools
                .iter()
                .map(|t| {
                    json!({
                        "type": "function",
                        "function": {
                            "name": t.name,
                            "description": t.description,
                            "parameters": t.parameters,
                        }
                    })
                })
                .collect();
        }
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        body
    }
}

fn encode_message(message: &ChatMessage) -> Value {
    let role = match message.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut out = json!({"role": role, "content": message.content});
    if !message.tool_calls.is_empty() {
        out["tool_calls"] = message
            .tool_calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "type": "function",
                    "function": {"name": c.name, "arguments": c.arguments},
                })
            })
            .collect();
    }
    if let Some(id) = &message.tool_call_id {
        out["tool_call_id"] = json!(id);
    }
    out
}

/// Parses a `/chat/completions` response body.
pub(crate) fn decode_reply(body: &Value) -> Result<BackendReply, TransportError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| TransportError::Fatal("response has no choices[0].message".into()))?;
    let content = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let mut tool_calls = Vec::new();
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        for (i, call) in calls.iter().enumerate() {
            let function = call.get("function").unwrap_or(&Value::Null);
            tool_calls.push(ToolCall {
                id: call
                    .get("id")
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("call_{i}")),
                name: function
                    .get("name")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string(),
                arguments: match function.get("arguments") {
                    Some(Value::String(s)) => s.clone(),
                    Some(other) => other.to_string(),
                    None => "{}".to_string(),
                },
            });
        }
    }
    let tokens = |key: &str| {
        body.pointer(&format!("/usage/{key}"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok(BackendReply {
        message: ChatMessage {
            tool_calls,
            ..ChatMessage::assistant(content)
        },
        prompt_tokens: tokens("prompt_tokens"),
        completion_tokens: tokens("completion_tokens"),
        cost_usd: None,
    })
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<BackendReply, TransportError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut call = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(Self::body(request))
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(TransportError::Transient(format!(
                "HTTP {status}: {}",
                snippet(&text)
            )));
        }
        if status >= 400 {
            return Err(TransportError::Fatal(format!(
                "HTTP {status}: {}",
                snippet(&text)
            )));
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| TransportError::Fatal(format!("response is not JSON: {e}")))?;
        decode_reply(&body)
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(300).collect()
}
