//! The agent pipeline: step definitions, prompts, context assembly and the
//! iteration loop.

mod context;
mod engine;
mod prompts;
mod steps;

pub use context::{build_context, manifest_task_vars, PriorReflection, StepContext};
pub use engine::{
    execute_step_with_retry, reflect, run_pipeline, PipelineEnv, ReflectError, ReflectionOutcome,
    StepOutcome, PLACEHOLDER_REFLECTION,
};
pub use prompts::{render, PromptError, Template, PROMPT_VERSION};
pub use steps::{output_schema, step_spec, workspace_relative, OutputContract, StepSpec};
