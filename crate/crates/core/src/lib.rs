//! Orchestrates LLM-driven machine-learning experiments as a fixed pipeline of
//! validated steps, with sandboxed tools, an append-only run ledger and a
//! held-out test split the agent never sees.

pub mod bench;
pub mod dataset;
pub mod firewall;
pub mod gateway;
pub mod ledger;
pub mod model;
pub mod pipeline;
pub mod sandbox;
pub mod stats;
pub mod validation;

use thiserror::Error;

/// Crate-level error for operations that cross module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Manifest(#[from] model::ManifestError),

    #[error(transparent)]
    Config(#[from] model::ConfigError),

    #[error(transparent)]
    Table(#[from] dataset::TableError),

    #[error(transparent)]
    Sandbox(#[from] sandbox::SandboxError),

    #[error(transparent)]
    Stats(#[from] stats::StatsError),

    #[error(transparent)]
    Ledger(#[from] ledger::LedgerError),

    #[error(transparent)]
    Prompt(#[from] pipeline::PromptError),

    #[error(transparent)]
    Gateway(#[from] gateway::GatewayError),

    #[error(transparent)]
    Synth(#[from] bench::SynthError),

    #[error("precondition failed: {0}")]
    Precondition(String),
}
