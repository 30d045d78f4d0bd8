//! Stage one: infer a standardized natural-language rule.

use crate::context::{render_scenario_text, ContextSnapshot, DeviceCatalog, ScenarioDetail};
use crate::llm::{CompletionRequest, LlmBackend, LlmError};
use crate::model::{parse_rule_text, serialize_rule_text, NlRule, RuleTextError};
use crate::normalizer::{describe_user, ExpressionError, UserExpression};
use crate::prompts::{FewShotExample, ReasoningPrompts};

#[derive(Debug, thiserror::Error)]
pub enum ReasoningError {
    #[error("the reasoning prompt needs at least one example")]
    NoExamples,
    #[error(transparent)]
    Expression(#[from] ExpressionError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("model output is not a rule document ({error})")]
    Unparseable { raw: String, error: RuleTextError },
}

/// Result of a successful inference.
#[derive(Debug, Clone)]
pub struct Inference {
    pub rule: NlRule,
    pub raw: String,
    /// Whether the repair round was needed.
    pub repaired: bool,
}

fn render_examples(examples: &[FewShotExample]) -> String {
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        out.push_str(&format!(
            "Example {}\nInput:\n{}\nOutput:\n{}\n\n",
            i + 1,
            ex.input,
            ex.output
        ));
    }
    out.trim_end().to_string()
}

impl ReasoningPrompts {
    /// System prompt: output format, details, layout, then the examples.
    pub fn build(
        &self,
        catalog: &DeviceCatalog,
        snapshot: Option<&ContextSnapshot>,
        examples: &[FewShotExample],
    ) -> Result<String, ReasoningError> {
        if examples.is_empty() {
            return Err(ReasoningError::NoExamples);
        }
        let scenario = render_scenario_text(catalog, snapshot, ScenarioDetail::LayoutOnly);
        Ok(self
            .template
            .replace("{{format}}", &self.format)
            .replace("{{details}}", &self.details)
            .replace("{{scenario}}", &scenario)
            .replace("{{examples}}", &render_examples(examples)))
    }
}

/// Builds the reasoning system prompt from the bundled templates.
pub fn build_reasoning_prompt(
    catalog: &DeviceCatalog,
    snapshot: Option<&ContextSnapshot>,
    examples: &[FewShotExample],
) -> Result<String, ReasoningError> {
    ReasoningPrompts::bundled().build(catalog, snapshot, examples)
}

/// The user message: environment block, the current draft when refining,
/// then the standardized sentence.
pub fn reasoning_user_message(
    expr: &UserExpression,
    snapshot: &ContextSnapshot,
    current: Option<&NlRule>,
) -> Result<String, ExpressionError> {
    let sentence = describe_user(expr)?;
    let mut out = snapshot.render();
    out.push('\n');
    if let Some(rule) = current {
        out.push_str("Current rule:\n");
        out.push_str(&serialize_rule_text(rule));
    }
    out.push_str(&sentence);
    Ok(out)
}

/// Cuts a rule document out of model output that may carry code fences
/// or a sentence of preamble.
pub fn extract_rule_text(raw: &str) -> String {
    let lines: Vec<&str> = raw.lines().collect();
    let Some(start) = lines
        .iter()
        .position(|l| l.trim_start().starts_with("OPERATION:"))
    else {
        return raw.to_string();
    };
    let mut doc = String::new();
    for line in &lines[start..] {
        if line.trim_start().starts_with("```") {
            break;
        }
        doc.push_str(line);
        doc.push('\n');
    }
    doc
}

fn repair_message(user_message: &str, raw: &str, error: &RuleTextError) -> String {
    format!(
        "{user_message}\n\nYour previous reply could not be read as a rule document ({error}).\nPrevious reply:\n{raw}\nReply again with the corrected rule document only."
    )
}

/// Asks the model for a rule; one repair round is attempted when the reply
/// does not parse.
pub fn infer_rule(
    backend: &dyn LlmBackend,
    system_prompt: &str,
    user_message: &str,
) -> Result<Inference, ReasoningError> {
    let raw = backend.complete(&CompletionRequest::new(system_prompt, user_message))?;
    let first_error = match parse_rule_text(&extract_rule_text(&raw)) {
        Ok(rule) => {
            return Ok(Inference {
                rule,
                raw,
                repaired: false,
            })
        }
        Err(e) => e,
    };
    tracing::debug!(error = %first_error, "reasoning output unparseable, asking for a repair");
    let retry = repair_message(user_message, &raw, &first_error);
    let raw2 = backend.complete(&CompletionRequest::new(system_prompt, retry))?;
    match parse_rule_text(&extract_rule_text(&raw2)) {
        Ok(rule) => Ok(Inference {
            rule,
            raw: raw2,
            repaired: true,
        }),
        Err(error) => Err(ReasoningError::Unparseable { raw: raw2, error }),
    }
}
