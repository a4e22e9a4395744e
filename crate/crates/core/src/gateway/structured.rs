//! Strict parsing of a step's final answer.
//!
//! The answer must be a single JSON object, optionally wrapped in one fenced
//! code block. Unknown fields are rejected and errors name the first field
//! that violates the schema.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Non-empty string.
    Text,
    /// Array of strings.
    TextList,
    /// Object whose values are strings, numbers or booleans.
    ScalarMap,
    Bool,
}

impl FieldKind {
    fn describe(self) -> &'static str {
        match self {
            FieldKind::Text => "a non-empty string",
            FieldKind::TextList => "an array of strings",
            FieldKind::ScalarMap => "an object of scalar values",
            FieldKind::Bool => "a boolean",
        }
    }

    fn accepts(self, value: &Value) -> bool {
        match self {
            FieldKind::Text => value.as_str().is_some_and(|s| !s.trim().is_empty()),
            FieldKind::TextList => value
                .as_array()
                .is_some_and(|items| items.iter().all(Value::is_string)),
            FieldKind::ScalarMap => value.as_object().is_some_and(|map| {
                map.values()
                    .all(|v| v.is_string() || v.is_number() || v.is_boolean())
            }),
            FieldKind::Bool => value.is_boolean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub required: bool,
}

/// Expected shape of a step's final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSchema {
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

impl OutputSchema {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            fields: Vec::new(),
        }
    }

    pub fn required(mut self, name: &str, kind: FieldKind) -> Self {
        self.fields.push(FieldSpec {
            name: name.to_string(),
            kind,
            required: true,
        });
        self
    }

    pub fn optional(mut self, name: &str, kind: FieldKind) -> Self {
        self.fields.push(FieldSpec {
            name: name.to_string(),
            kind,
            required: false,
        });
        self
    }

    /// A compact example for prompts, e.g. `{"summary": "<string>"}`.
    pub fn example(&self) -> String {
        let parts: Vec<String> = self
            .fields
            .iter()
            .map(|f| {
                let placeholder = match f.kind {
                    FieldKind::Text => "\"<string>\"",
                    FieldKind::TextList => "[\"<string>\", ...]",
                    FieldKind::ScalarMap => "{\"<name>\": <value>, ...}",
                    FieldKind::Bool => "<true|false>",
                };
                let optional = if f.required { "" } else { " (optional)" };
                format!("\"{}\"{optional}: {placeholder}", f.name)
            })
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("final answer is not valid JSON: {0}")]
    Syntax(String),

    #[error("final answer must be a JSON object")]
    NotObject,

    #[error("missing required field `{0}`")]
    Missing(String),

    #[error("field `{field}` must be {expected}")]
    WrongType {
        field: String,
        expected: &'static str,
    },

    #[error("unknown field `{0}`")]
    Unknown(String),
}

impl SchemaError {
    /// The field the error is about, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            SchemaError::Missing(f) | SchemaError::Unknown(f) => Some(f),
            SchemaError::WrongType { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// Parses `content` against `schema`.
pub fn parse_structured_output(
    content: &str,
    schema: &OutputSchema,
) -> Result<Map<String, Value>, SchemaError> {
    let body = strip_fence(content.trim());
    let value: Value =
        serde_json::from_str(body).map_err(|e| SchemaError::Syntax(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(SchemaError::NotObject);
    };
    for field in &schema.fields {
        match map.get(&field.name) {
            None if field.required => return Err(SchemaError::Missing(field.name.clone())),
            None => {}
            Some(value) if !field.kind.accepts(value) => {
                return Err(SchemaError::WrongType {
                    field: field.name.clone(),
                    expected: field.kind.describe(),
                })
            }
            Some(_) => {}
        }
    }
    if let Some(unknown) = map
        .keys()
        .find(|k| !schema.fields.iter().any(|f| &f.name == *k))
    {
        return Err(SchemaError::Unknown(unknown.clone()));
    }
    Ok(map)
}

fn strip_fence(text: &str) -> &str {
    let Some(rest) = text.strip_prefix("```") else {
        return text;
    };
    let Some(inner) = rest.strip_suffix("```") else {
        return text;
    };
    // Drop the info string (`json`) on the opening line.
    match inner.split_once('\n') {
        Some((_, body)) => body.trim(),
        None => inner.trim(),
    }
}
