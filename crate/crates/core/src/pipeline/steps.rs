//! Static description of each pipeline step.

use serde::{Deserialize, Serialize};

use super::prompts::Template;
use crate::gateway::{FieldKind, OutputSchema};
use crate::model::StepKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputContract {
    TextSummary,
    DesignRecord,
    ScriptFile,
    Execution,
    ReflectionText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepSpec {
    pub kind: StepKind,
    pub output_contract: OutputContract,
    /// Identifier of the validator that gates the step.
    pub validator: &'static str,
    pub prompt_template: Template,
}

pub fn step_spec(kind: StepKind) -> StepSpec {
    let (output_contract, validator, prompt_template) = match kind {
        StepKind::Explore => (OutputContract::TextSummary, "schema", Template::Explore),
        StepKind::Design => (
            OutputContract::DesignRecord,
            "design_fields",
            Template::Design,
        ),
        StepKind::TrainScript => (
            OutputContract::ScriptFile,
            "script_compiles",
            Template::TrainScript,
        ),
        StepKind::Train => (
            OutputContract::Execution,
            "training_outputs",
            Template::Train,
        ),
        StepKind::InferenceScript => (
            OutputContract::ScriptFile,
            "inference_script",
            Template::InferenceScript,
        ),
        StepKind::Reflect => (
            OutputContract::ReflectionText,
            "non_empty",
            Template::Reflect,
        ),
    };
    StepSpec {
        kind,
        output_contract,
        validator,
        prompt_template,
    }
}

/// Schema of the final JSON answer for tool-using steps. REFLECT answers in
/// plain text and has none.
pub fn output_schema(kind: StepKind) -> Option<OutputSchema> {
    let name = kind.to_string();
    Some(match kind {
        StepKind::Explore => OutputSchema::new(name).required("summary", FieldKind::Text),
        StepKind::Design => OutputSchema::new(name)
            .required("split_strategy", FieldKind::Text)
            .required("representation", FieldKind::Text)
            .required("architecture", FieldKind::Text)
            .required("hyperparameters", FieldKind::ScalarMap),
        StepKind::TrainScript | StepKind::InferenceScript => {
            OutputSchema::new(name).required("script_path", FieldKind::Text)
        }
        StepKind::Train => OutputSchema::new(name)
            .required("script_path", FieldKind::Text)
            .optional("args", FieldKind::TextList),
        StepKind::Reflect => return None,
    })
}

/// Accepts `/workspace/x`, `./x` and `x` for the same workspace file.
pub fn workspace_relative(path: &str) -> String {
    let path = path.trim();
    let path = path
        .strip_prefix(crate::sandbox::GUEST_ROOT)
        .map(|rest| rest.trim_start_matches('/'))
        .unwrap_or(path);
    path.trim_start_matches("./").to_string()
}
