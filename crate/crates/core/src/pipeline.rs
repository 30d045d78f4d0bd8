//! The two-stage pipeline: normalize, reason, ground, validate.

use std::sync::Arc;

use serde::Serialize;

use crate::context::{ContextSnapshot, DeviceCatalog};
use crate::grounding::{ground_rule, Grounding};
use crate::llm::{LlmBackend, LlmError};
use crate::model::{GroundedRule, NlRule, Operation};
use crate::normalizer::UserExpression;
use crate::prompts::{GroundingPrompts, ReasoningPrompts};
use crate::reasoning::{infer_rule, reasoning_user_message, Inference, ReasoningError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error("grounding failed: {0}")]
    Grounding(#[from] LlmError),
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutput {
    pub nl_rule: NlRule,
    pub grounded: GroundedRule,
    #[serde(skip)]
    pub reasoning_raw: String,
    #[serde(skip)]
    pub grounding_raw: String,
}

/// Prompts are built once; the reasoning prompt describes the layout only,
/// the environment goes in each user message.
#[derive(Clone)]
pub struct Pipeline {
    catalog: Arc<DeviceCatalog>,
    backend: Arc<dyn LlmBackend>,
    reasoning_prompt: String,
    grounding_prompt: String,
}

impl Pipeline {
    pub fn new(
        catalog: Arc<DeviceCatalog>,
        backend: Arc<dyn LlmBackend>,
        reasoning: &ReasoningPrompts,
        grounding: &GroundingPrompts,
    ) -> Result<Self, ReasoningError> {
        let reasoning_prompt = reasoning.build(&catalog, None, &reasoning.examples)?;
        let grounding_prompt = grounding.build(&catalog);
        Ok(Pipeline {
            catalog,
            backend,
            reasoning_prompt,
            grounding_prompt,
        })
    }

    /// Pipeline with the bundled prompts.
    pub fn bundled(catalog: Arc<DeviceCatalog>, backend: Arc<dyn LlmBackend>) -> Self {
        Self::new(
            catalog,
            backend,
            &ReasoningPrompts::bundled(),
            &GroundingPrompts::bundled(),
        )
        .expect("bundled prompts have examples")
    }

    pub fn catalog(&self) -> &Arc<DeviceCatalog> {
        &self.catalog
    }

    pub fn reasoning_prompt(&self) -> &str {
        &self.reasoning_prompt
    }

    pub fn grounding_prompt(&self) -> &str {
        &self.grounding_prompt
    }

    /// Stage one. With a `current` draft the model may answer with a MODIFY
    /// document, which is merged into the draft.
    pub fn infer(
        &self,
        expr: &UserExpression,
        snapshot: &ContextSnapshot,
        current: Option<&NlRule>,
    ) -> Result<Inference, ReasoningError> {
        let user = reasoning_user_message(expr, snapshot, current)?;
        let mut inference = infer_rule(self.backend.as_ref(), &self.reasoning_prompt, &user)?;
        if let (Some(base), Operation::Modify) = (current, inference.rule.operation) {
            inference.rule = base.apply_modification(&inference.rule);
        }
        Ok(inference)
    }

    /// Stage two plus validation.
    pub fn ground(&self, nl: &NlRule) -> Result<Grounding, LlmError> {
        ground_rule(
            self.backend.as_ref(),
            &self.grounding_prompt,
            &self.catalog,
            nl,
        )
    }

    pub fn run(
        &self,
        expr: &UserExpression,
        snapshot: &ContextSnapshot,
    ) -> Result<PipelineOutput, PipelineError> {
        let inference = self.infer(expr, snapshot, None)?;
        let grounding = self.ground(&inference.rule)?;
        Ok(PipelineOutput {
            nl_rule: inference.rule,
            grounded: grounding.rule,
            reasoning_raw: inference.raw,
            grounding_raw: grounding.raw,
        })
    }
}
