//! Few-shot prompt templates with `{{name}}` placeholders.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template is missing placeholder {{{{{0}}}}}")]
    MissingPlaceholder(String),
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    /// Fails unless every name in `required` occurs as a placeholder.
    pub fn new(text: impl Into<String>, required: &[&str]) -> Result<Self, TemplateError> {
        let text = text.into();
        for name in required {
            if !text.contains(&format!("{{{{{name}}}}}")) {
                return Err(TemplateError::MissingPlaceholder((*name).to_owned()));
            }
        }
        Ok(Self { text })
    }

    pub fn from_file(path: &Path, required: &[&str]) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        Self::new(text, required)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Single left-to-right pass; substituted values are never re-scanned.
    /// Unknown placeholders are left as they are.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let value = after
                .find("}}")
                .and_then(|close| values.iter().find(|(k, _)| *k == &after[..close]).map(|(_, v)| (close, v)));
            match value {
                Some((close, v)) => {
                    out.push_str(v);
                    rest = &after[close + 2..];
                }
                None => {
                    out.push_str("{{");
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// The three prompts used by the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub initial_planning: PromptTemplate,
    pub replanning: PromptTemplate,
    pub reasoning: PromptTemplate,
}

pub const INITIAL_PLANNING_PLACEHOLDERS: &[&str] = &["question", "topic_entities"];
pub const REPLANNING_PLACEHOLDERS: &[&str] = &["question", "topic_entities", "relations"];
pub const REASONING_PLACEHOLDERS: &[&str] = &["question", "paths"];

impl Default for PromptSet {
    fn default() -> Self {
        let t = |text: &str| PromptTemplate { text: text.to_owned() };
        Self {
            initial_planning: t(include_str!("../prompts/initial_planning.txt")),
            replanning: t(include_str!("../prompts/replanning.txt")),
            reasoning: t(include_str!("../prompts/reasoning.txt")),
        }
    }
}
