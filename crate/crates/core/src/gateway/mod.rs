//! Provider-agnostic chat completions with tool calling, cost accounting
//! and a scripted backend for replayable runs.

mod agent;
mod http;
mod scripted;
mod structured;
mod tools;

pub use agent::{drive_agent_turns, TurnError, TurnSettings};
pub use http::{HttpBackend, API_KEY_VARS, BASE_URL_VARS};
pub use scripted::{ScriptedBackend, ScriptedFixture, ScriptedResponse, ScriptedToolCall};
pub use structured::{parse_structured_output, FieldKind, FieldSpec, OutputSchema, SchemaError};
pub use tools::{execute_tool_call, standard_tools, ToolSchema};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    /// Raw JSON argument payload as produced by the model.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }

    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletionUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub est_cost_usd: f64,
}

/// What a backend hands back for one model turn.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub message: ChatMessage,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Cost reported by the backend itself, overriding the cost table.
    pub cost_usd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    /// Worth retrying: connection problems, rate limits, server errors.
    #[error("transient transport error: {0}")]
    Transient(String),
    #[error("transport error: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest<'a> {
    pub model_id: &'a str,
    pub messages: &'a [ChatMessage],
    pub tools: &'a [ToolSchema],
    pub temperature: Option<f64>,
}

/// One chat-completion provider. Implementations must be safe to call from
/// several runs at once.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<BackendReply, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("budget exhausted: spent ${spent:.4} of ${limit:.4}")]
    Budget { spent: f64, limit: f64 },

    #[error("model call failed after {attempts} tries: {message}")]
    Transport { attempts: u32, message: String },
}

/// Per-run spending cap and running total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBudget {
    pub limit_usd: f64,
    pub spent_usd: f64,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl RunBudget {
    pub fn new(limit_usd: f64) -> Self {
        Self {
            limit_usd,
            spent_usd: 0.0,
            calls: 0,
            prompt_tokens: 0,
            completion_tokens: 0,
        }
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        if self.spent_usd >= self.limit_usd {
            Err(GatewayError::Budget {
                spent: self.spent_usd,
                limit: self.limit_usd,
            })
        } else {
            Ok(())
        }
    }

    fn charge(&mut self, usage: &CompletionUsage) {
        self.spent_usd += usage.est_cost_usd;
        self.calls += 1;
        self.prompt_tokens += usage.prompt_tokens;
        self.completion_tokens += usage.completion_tokens;
    }
}

/// USD per token, per model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub prompt_usd_per_token: f64,
    pub completion_usd_per_token: f64,
}

/// Per-model token prices, loaded from a JSON object keyed by model id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostTable {
    prices: BTreeMap<String, ModelPrice>,
}

impl CostTable {
    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn insert(&mut self, model_id: impl Into<String>, price: ModelPrice) {
        self.prices.insert(model_id.into(), price);
    }

    /// Estimated cost of a call; unknown models cost nothing.
    pub fn cost(&self, model_id: &str, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        match self.prices.get(model_id) {
            Some(p) => {
                p.prompt_usd_per_token * prompt_tokens as f64
                    + p.completion_usd_per_token * completion_tokens as f64
            }
            None => {
                warn_unpriced(model_id);
                0.0
            }
        }
    }
}

/// Warns once per process about each model without a price.
fn warn_unpriced(model_id: &str) {
    static WARNED: Mutex<BTreeSet<String>> = Mutex::new(BTreeSet::new());
    let mut warned = WARNED.lock().unwrap_or_else(|p| p.into_inner());
    if warned.insert(model_id.to_string()) {
        warn!("no price for model `{model_id}`; counting its calls as free");
    }
}

pub const MAX_TRANSPORT_TRIES: u32 = 3;

/// Budget-checked, retrying front end over a [`ChatBackend`].
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    costs: CostTable,
    backoff_base: Duration,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, costs: CostTable) -> Self {
        Self {
            backend,
            costs,
            backoff_base: Duration::from_millis(500),
        }
    }

    /// Base delay for exponential backoff (doubles after each failed try).
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    /// One model turn. The budget is checked before anything is sent and
    /// charged with the call's estimated cost afterwards.
    pub fn complete(
        &self,
        budget: &mut RunBudget,
        messages: &[ChatMessage],
        tools: &[ToolSchema],
        model_id: &str,
        temperature: Option<f64>,
    ) -> Result<(ChatMessage, CompletionUsage), GatewayError> {
        budget.check()?;
        let request = CompletionRequest {
            model_id,
            messages,
            tools,
            temperature,
        };
        let mut tries = 0;
        let reply = loop {
            tries += 1;
            match self.backend.complete(&request) {
                Ok(reply) => break reply,
                Err(TransportError::Transient(message)) if tries < MAX_TRANSPORT_TRIES => {
                    let delay = self.backoff_base * 2u32.pow(tries - 1);
                    warn!("model call failed ({message}); retrying in {delay:?}");
                    thread::sleep(delay);
                }
                Err(TransportError::Transient(message)) | Err(TransportError::Fatal(message)) => {
                    return Err(GatewayError::Transport {
                        attempts: tries,
                        message,
                    })
                }
            }
        };
        let est_cost_usd = reply.cost_usd.unwrap_or_else(|| {
            self.costs
                .cost(model_id, reply.prompt_tokens, reply.completion_tokens)
        });
        let usage = CompletionUsage {
            prompt_tokens: reply.prompt_tokens,
            completion_tokens: reply.completion_tokens,
            est_cost_usd: est_cost_usd.max(0.0),
        };
        budget.charge(&usage);
        let mut message = reply.message;
        message.role = Role::Assistant;
        Ok((message, usage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        failures: usize,
        calls: AtomicUsize,
        fatal: bool,
    }

    impl ChatBackend for Flaky {
        fn complete(&self, _: &CompletionRequest<'_>) -> Result<BackendReply, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                return Err(if self.fatal {
                    TransportError::Fatal("401".into())
                } else {
                    TransportError::Transient("reset".into())
                });
            }
            Ok(BackendReply {
                message: ChatMessage::assistant("ok"),
                prompt_tokens: 1000,
                completion_tokens: 100,
                cost_usd: None,
            })
        }
    }

    fn gateway(failures: usize, fatal: bool) -> (Gateway, Arc<Flaky>) {
        let backend = Arc::new(Flaky {
            failures,
            calls: AtomicUsize::new(0),
            fatal,
        });
        let mut costs = CostTable::default();
        costs.insert(
            "m",
            ModelPrice {
                prompt_usd_per_token: 1e-6,
                completion_usd_per_token: 4e-6,
            },
        );
        let gw = Gateway::new(backend.clone(), costs).with_backoff(Duration::from_millis(1));
        (gw, backend)
    }

    #[test]
    fn retries_transient_errors_up_to_three_tries() {
        let (gw, backend) = gateway(2, false);
        let mut budget = RunBudget::new(1.0);
        let (msg, usage) = gw.complete(&mut budget, &[], &[], "m", None).unwrap();
        assert_eq!(msg.content, "ok");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
        assert!((usage.est_cost_usd - 0.0014).abs() < 1e-15);

        let (gw, backend) = gateway(3, false);
        let err = gw.complete(&mut budget, &[], &[], "m", None).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let (gw, backend) = gateway(1, true);
        let mut budget = RunBudget::new(1.0);
        assert!(gw.complete(&mut budget, &[], &[], "m", None).is_err());
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn zero_budget_blocks_before_dispatch() {
        let (gw, backend) = gateway(0, false);
        let mut budget = RunBudget::new(0.0);
        let err = gw.complete(&mut budget, &[], &[], "m", None).unwrap_err();
        assert!(matches!(err, GatewayError::Budget { .. }));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn unknown_model_is_free() {
        let (gw, _) = gateway(0, false);
        let mut budget = RunBudget::new(1.0);
        let (_, usage) = gw.complete(&mut budget, &[], &[], "other", None).unwrap();
        assert_eq!(usage.est_cost_usd, 0.0);
        assert_eq!(budget.calls, 1);
    }

    #[test]
    fn message_wire_format() {
        let msg = ChatMessage::tool("call_1", "{}");
        let json = serde_json::to_string(&msg).unwrap();
        assert_eq!(
            json,
            r#"{"role":"tool","content":"{}","tool_call_id":"call_1"}"#
        );
        assert_eq!(serde_json::from_str::<ChatMessage>(&json).unwrap(), msg);
    }
}
