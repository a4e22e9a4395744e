//! Versioned prompt templates with `{{name}}` placeholders.

use thiserror::Error;

/// Version of the bundled template set, recorded with every run.
pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    System,
    Task,
    Explore,
    Design,
    TrainScript,
    Train,
    InferenceScript,
    Feedback,
    Reflect,
    ZeroShot,
}

impl Template {
    pub fn id(self) -> &'static str {
        match self {
            Template::System => "system",
            Template::Task => "task",
            Template::Explore => "step_explore",
            Template::Design => "step_design",
            Template::TrainScript => "step_train_script",
            Template::Train => "step_train",
            Template::InferenceScript => "step_inference_script",
            Template::Feedback => "feedback",
            Template::Reflect => "reflect",
            Template::ZeroShot => "zero_shot",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            Template::System => include_str!("../../prompts/v1/system.txt"),
            Template::Task => include_str!("../../prompts/v1/task.txt"),
            Template::Explore => include_str!("../../prompts/v1/step_explore.txt"),
            Template::Design => include_str!("../../prompts/v1/step_design.txt"),
            Template::TrainScript => include_str!("../../prompts/v1/step_train_script.txt"),
            Template::Train => include_str!("../../prompts/v1/step_train.txt"),
            Template::InferenceScript => include_str!("../../prompts/v1/step_inference_script.txt"),
            Template::Feedback => include_str!("../../prompts/v1/feedback.txt"),
            Template::Reflect => include_str!("../../prompts/v1/reflect.txt"),
            Template::ZeroShot => include_str!("../../prompts/v1/zero_shot.txt"),
        }
    }

    pub fn render(self, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        render(self.text(), vars).map_err(|e| match e {
            PromptError::Missing { name, .. } => PromptError::Missing {
                template: self.id().to_string(),
                name,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template `{template}` needs a value for `{name}`")]
    Missing { template: String, name: String },
}

/// Substitutes `{{name}}` placeholders in one pass; substituted text is not
/// scanned again. Braces that do not enclose an identifier are left alone.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let name_end = after.find("}}");
        let name = name_end.map(|end| after[..end].trim());
        match name {
            Some(name) if is_identifier(name) => {
                let value = vars
                    .iter()
                    .find(|(key, _)| *key == name)
                    .map(|(_, value)| *value)
                    .ok_or_else(|| PromptError::Missing {
                        template: String::new(),
                        name: name.to_string(),
                    })?;
                out.push_str(value);
                rest = &after[name_end.unwrap_or(0) + 2..];
            }
            _ => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn is_identifier(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_and_reports_missing() {
        assert_eq!(
            render("a {{x}} b {{ y }}", &[("x", "1"), ("y", "{{x}}")]).unwrap(),
            "a 1 b {{x}}"
        );
        let err = render("{{nope}}", &[]).unwrap_err();
        assert!(err.to_string().contains("nope"));
        assert_eq!(
            render("{\"a\": {{x}}}", &[("x", "1")]).unwrap(),
            "{\"a\": 1}"
        );
        assert_eq!(render("{{ not an id }}", &[]).unwrap(), "{{ not an id }}");
    }

    #[test]
    fn bundled_templates_name_their_placeholders() {
        let all = [
            Template::System,
            Template::Task,
            Template::Explore,
            Template::Design,
            Template::TrainScript,
            Template::Train,
            Template::InferenceScript,
            Template::Feedback,
            Template::Reflect,
            Template::ZeroShot,
        ];
        for template in all {
            assert!(!template.text().trim().is_empty(), "{}", template.id());
        }
        let err = Template::Feedback
            .render(&[("step", "DESIGN")])
            .unwrap_err();
        assert_eq!(
            err,
            PromptError::Missing {
                template: "feedback".into(),
                name: "error".into()
            }
        );
    }
}
