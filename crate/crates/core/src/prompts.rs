//! Prompt templates and few-shot examples, loaded from editable files.
//!
//! A prompt directory holds `reasoning_template.txt`, `reasoning_format.txt`,
//! `reasoning_details.txt`, `reasoning_examples.txt`, `grounding_template.txt`,
//! `grounding_format.txt`, `grounding_details.txt` and `grounding_example.txt`.
//! The bundled set is compiled in.

use std::path::{Path, PathBuf};

use crate::model::{parse_rule_text, RuleTextError};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("failed to read prompt file {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("template `{template}` must contain {placeholder} exactly once")]
    Placeholder {
        template: &'static str,
        placeholder: &'static str,
    },
    #[error("few-shot example {index}: {message}")]
    BadExample { index: usize, message: String },
    #[error("few-shot example {index} output does not parse: {error}")]
    ExampleOutput { index: usize, error: RuleTextError },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotExample {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone)]
pub struct ReasoningPrompts {
    pub template: String,
    pub format: String,
    pub details: String,
    pub examples: Vec<FewShotExample>,
}

#[derive(Debug, Clone)]
pub struct GroundingPrompts {
    pub template: String,
    pub format: String,
    pub details: String,
    pub example: String,
}

const REASONING_TEMPLATE: &str = include_str!("../data/prompts/reasoning_template.txt");
const REASONING_FORMAT: &str = include_str!("../data/prompts/reasoning_format.txt");
const REASONING_DETAILS: &str = include_str!("../data/prompts/reasoning_details.txt");
const REASONING_EXAMPLES: &str = include_str!("../data/prompts/reasoning_examples.txt");
const GROUNDING_TEMPLATE: &str = include_str!("../data/prompts/grounding_template.txt");
const GROUNDING_FORMAT: &str = include_str!("../data/prompts/grounding_format.txt");
const GROUNDING_DETAILS: &str = include_str!("../data/prompts/grounding_details.txt");
const GROUNDING_EXAMPLE: &str = include_str!("../data/prompts/grounding_example.txt");

pub(crate) const REASONING_PLACEHOLDERS: [&str; 4] =
    ["{{format}}", "{{details}}", "{{scenario}}", "{{examples}}"];
pub(crate) const GROUNDING_PLACEHOLDERS: [&str; 5] = [
    "{{format}}",
    "{{details}}",
    "{{scenario}}",
    "{{returns}}",
    "{{example}}",
];

fn read(dir: &Path, name: &str) -> Result<String, PromptError> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
        path,
        message: e.to_string(),
    })
}

fn check_placeholders(
    template: &str,
    name: &'static str,
    placeholders: &[&'static str],
) -> Result<(), PromptError> {
    for &placeholder in placeholders {
        if template.matches(placeholder).count() != 1 {
            return Err(PromptError::Placeholder {
                template: name,
                placeholder,
            });
        }
    }
    Ok(())
}

/// Splits an examples file into input/output pairs:
///
/// ```text
/// --- example ---
/// input:
/// <lines>
/// output:
/// <rule-text document>
/// ```
pub fn parse_examples(text: &str) -> Result<Vec<FewShotExample>, PromptError> {
    let mut examples = Vec::new();
    let mut blocks = text.split("--- example ---\n");
    let preamble = blocks.next().unwrap_or_default();
    if !preamble.trim().is_empty() {
        return Err(PromptError::BadExample {
            index: 0,
            message: "text before the first `--- example ---` marker".into(),
        });
    }
    for (i, block) in blocks.enumerate() {
        let index = i + 1;
        let body = block
            .strip_prefix("input:\n")
            .ok_or_else(|| PromptError::BadExample {
                index,
                message: "missing `input:` line".into(),
            })?;
        let (input, output) =
            body.split_once("\noutput:\n")
                .ok_or_else(|| PromptError::BadExample {
                    index,
                    message: "missing `output:` line".into(),
                })?;
        parse_rule_text(output).map_err(|error| PromptError::ExampleOutput { index, error })?;
        examples.push(FewShotExample {
            input: input.trim_end().to_string(),
            output: output.trim_end().to_string(),
        });
    }
    Ok(examples)
}

impl ReasoningPrompts {
    pub fn bundled() -> Self {
        Self::from_parts(
            REASONING_TEMPLATE,
            REASONING_FORMAT,
            REASONING_DETAILS,
            REASONING_EXAMPLES,
        )
        .expect("bundled reasoning prompts are valid")
    }

    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        Self::from_parts(
            &read(dir, "reasoning_template.txt")?,
            &read(dir, "reasoning_format.txt")?,
            &read(dir, "reasoning_details.txt")?,
            &read(dir, "reasoning_examples.txt")?,
        )
    }

    pub fn from_parts(
        template: &str,
        format: &str,
        details: &str,
        examples: &str,
    ) -> Result<Self, PromptError> {
        check_placeholders(template, "reasoning_template", &REASONING_PLACEHOLDERS)?;
        Ok(ReasoningPrompts {
            template: template.to_string(),
            format: format.trim_end().to_string(),
            details: details.trim_end().to_string(),
            examples: parse_examples(examples)?,
        })
    }
}

impl GroundingPrompts {
    pub fn bundled() -> Self {
        Self::from_parts(
            GROUNDING_TEMPLATE,
            GROUNDING_FORMAT,
            GROUNDING_DETAILS,
            GROUNDING_EXAMPLE,
        )
        .expect("bundled grounding prompts are valid")
    }

    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        Self::from_parts(
            &read(dir, "grounding_template.txt")?,
            &read(dir, "grounding_format.txt")?,
            &read(dir, "grounding_details.txt")?,
            &read(dir, "grounding_example.txt")?,
        )
    }

    pub fn from_parts(
        template: &str,
        format: &str,
        details: &str,
        example: &str,
    ) -> Result<Self, PromptError> {
        check_placeholders(template, "grounding_template", &GROUNDING_PLACEHOLDERS)?;
        Ok(GroundingPrompts {
            template: template.to_string(),
            format: format.trim_end().to_string(),
            details: details.trim_end().to_string(),
            example: example.trim_end().to_string(),
        })
    }
}
