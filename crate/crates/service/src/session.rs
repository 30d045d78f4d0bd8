//! Refinement sessions: each expression or direct edit is one round that
//! replaces the draft; confirm deploys the draft.

use awareauto_core::context::ContextSnapshot;
use awareauto_core::engine::Deployment;
use awareauto_core::llm::LlmError;
use awareauto_core::model::{
    parse_rule_text, GroundedRule, GroundingError, NlRule, Operation, RuleTextError,
};
use awareauto_core::normalizer::{ExpressionError, UserExpression};
use awareauto_core::pipeline::Pipeline;
use awareauto_core::reasoning::ReasoningError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Open,
    Deployed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Reasoning,
    Grounding,
    Deploying,
}

/// What the user supplied in one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RoundInput {
    Expression {
        expression: UserExpression,
        snapshot: Box<ContextSnapshot>,
    },
    Edit {
        document: String,
    },
    Confirm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Draft {
    pub nl_rule: NlRule,
    pub grounded: GroundedRule,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistoryEntry {
    /// Absent for confirmations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    pub input: RoundInput,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nl_rule: Option<NlRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grounded: Option<GroundedRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deployment: Option<Deployment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Why a round produced no new draft.
#[derive(Debug, thiserror::Error)]
pub enum RoundError {
    #[error(transparent)]
    Expression(#[from] ExpressionError),
    #[error("rule document: {0}")]
    Document(RuleTextError),
    #[error("model output is not a rule document ({error})")]
    Unparseable { raw: String, error: RuleTextError },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("MODIFY names no deployed rule{}", .0.as_deref().map(|n| format!(" `{n}`")).unwrap_or_default())]
    UnknownBase(Option<String>),
    #[error("the reasoning prompt has no examples")]
    NoExamples,
}

impl From<ReasoningError> for RoundError {
    fn from(e: ReasoningError) -> Self {
        match e {
            ReasoningError::NoExamples => RoundError::NoExamples,
            ReasoningError::Expression(e) => RoundError::Expression(e),
            ReasoningError::Llm(e) => RoundError::Llm(e),
            ReasoningError::Unparseable { raw, error } => RoundError::Unparseable { raw, error },
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("a request for this session is already in progress")]
    Busy,
    #[error("the session is closed: its rule was deployed")]
    Closed,
    #[error("there is no draft to confirm")]
    NoDraft,
    #[error("the draft is not feasible")]
    Infeasible(Vec<GroundingError>),
    #[error(transparent)]
    Round(#[from] RoundError),
}

/// Rules already deployed, by name, for MODIFY documents that arrive
/// without a draft.
pub trait RuleLookup {
    fn deployed_rule(&self, name: &str) -> Option<NlRule>;
}

impl<F: Fn(&str) -> Option<NlRule>> RuleLookup for F {
    fn deployed_rule(&self, name: &str) -> Option<NlRule> {
        self(name)
    }
}

/// No deployed rules.
pub fn no_rules(_: &str) -> Option<NlRule> {
    None
}

/// Resolves a MODIFY against the deployed rule it names when there is no
/// draft to merge into.
pub fn resolve_base(
    rule: NlRule,
    draft: Option<&NlRule>,
    lookup: &dyn RuleLookup,
) -> Result<NlRule, RoundError> {
    if rule.operation != Operation::Modify || draft.is_some() {
        return Ok(rule);
    }
    let base = rule
        .name
        .as_deref()
        .and_then(|n| lookup.deployed_rule(n))
        .ok_or_else(|| RoundError::UnknownBase(rule.name.clone()))?;
    let mut merged = base.apply_modification(&rule);
    merged.operation = Operation::Modify;
    Ok(merged)
}

/// Stage one of an expression round.
pub fn infer_draft(
    pipeline: &Pipeline,
    draft: Option<&NlRule>,
    expression: &UserExpression,
    snapshot: &ContextSnapshot,
    lookup: &dyn RuleLookup,
) -> Result<NlRule, RoundError> {
    let inference = pipeline.infer(expression, snapshot, draft)?;
    resolve_base(inference.rule, draft, lookup)
}

/// Parses a directly edited document; a MODIFY document is merged into the
/// draft.
pub fn edit_draft(
    draft: Option<&NlRule>,
    document: &str,
    lookup: &dyn RuleLookup,
) -> Result<NlRule, RoundError> {
    let rule = parse_rule_text(document).map_err(RoundError::Document)?;
    match (draft, rule.operation) {
        (Some(base), Operation::Modify) => Ok(base.apply_modification(&rule)),
        _ => resolve_base(rule, draft, lookup),
    }
}

pub fn ground_draft(pipeline: &Pipeline, nl_rule: NlRule) -> Result<Draft, RoundError> {
    let grounding = pipeline.ground(&nl_rule)?;
    Ok(Draft {
        nl_rule,
        grounded: grounding.rule,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Session {
    pub id: u64,
    pub round: u32,
    pub state: SessionState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pending: Option<Stage>,
    pub draft_nl: Option<NlRule>,
    pub draft_grounded: Option<GroundedRule>,
    pub history: Vec<HistoryEntry>,
    pub deployed: Option<Deployment>,
}

impl Session {
    pub fn new(id: u64) -> Self {
        Session {
            id,
            round: 0,
            state: SessionState::Open,
            pending: None,
            draft_nl: None,
            draft_grounded: None,
            history: Vec::new(),
            deployed: None,
        }
    }

    fn ready(&self) -> Result<(), SessionError> {
        if self.state == SessionState::Deployed {
            return Err(SessionError::Closed);
        }
        if self.pending.is_some() {
            return Err(SessionError::Busy);
        }
        Ok(())
    }

    /// Starts a round and returns the draft it works from.
    pub fn begin(&mut self, stage: Stage) -> Result<Option<NlRule>, SessionError> {
        self.ready()?;
        self.pending = Some(stage);
        Ok(self.draft_nl.clone())
    }

    /// Ends the round started by [`Session::begin`]. A failed round counts
    /// and leaves the draft unchanged.
    pub fn finish(
        &mut self,
        input: RoundInput,
        outcome: Result<Draft, RoundError>,
    ) -> Result<Draft, RoundError> {
        self.pending = None;
        self.round += 1;
        let mut entry = HistoryEntry {
            round: Some(self.round),
            input,
            nl_rule: None,
            grounded: None,
            deployment: None,
            error: None,
        };
        match outcome {
            Ok(draft) => {
                entry.nl_rule = Some(draft.nl_rule.clone());
                entry.grounded = Some(draft.grounded.clone());
                self.history.push(entry);
                self.draft_nl = Some(draft.nl_rule.clone());
                self.draft_grounded = Some(draft.grounded.clone());
                Ok(draft)
            }
            Err(e) => {
                entry.error = Some(e.to_string());
                self.history.push(entry);
                Err(e)
            }
        }
    }

    /// The draft is feasible and may be deployed.
    pub fn confirmable(&self) -> Result<GroundedRule, SessionError> {
        self.ready()?;
        let grounded = self.draft_grounded.as_ref().ok_or(SessionError::NoDraft)?;
        if !grounded.feasible {
            return Err(SessionError::Infeasible(grounded.errors.clone()));
        }
        Ok(grounded.clone())
    }

    /// Starts a confirmation: the draft must be feasible.
    pub fn begin_confirm(&mut self) -> Result<GroundedRule, SessionError> {
        let grounded = self.confirmable()?;
        self.pending = Some(Stage::Deploying);
        Ok(grounded)
    }

    /// Ends an in-flight confirmation that could not deploy.
    pub fn abort(&mut self) {
        self.pending = None;
    }

    pub fn confirmed(&mut self, deployment: Deployment) {
        self.pending = None;
        self.history.push(HistoryEntry {
            round: None,
            input: RoundInput::Confirm,
            nl_rule: self.draft_nl.clone(),
            grounded: self.draft_grounded.clone(),
            deployment: Some(deployment.clone()),
            error: None,
        });
        self.deployed = Some(deployment);
        self.state = SessionState::Deployed;
    }

    /// One expression round, run to completion.
    pub fn express(
        &mut self,
        pipeline: &Pipeline,
        expression: UserExpression,
        snapshot: ContextSnapshot,
        lookup: &dyn RuleLookup,
    ) -> Result<Draft, SessionError> {
        let draft = self.begin(Stage::Reasoning)?;
        let outcome = infer_draft(pipeline, draft.as_ref(), &expression, &snapshot, lookup)
            .and_then(|nl| ground_draft(pipeline, nl));
        let input = RoundInput::Expression {
            expression,
            snapshot: Box::new(snapshot),
        };
        Ok(self.finish(input, outcome)?)
    }

    /// One direct-edit round, run to completion.
    pub fn edit(
        &mut self,
        pipeline: &Pipeline,
        document: String,
        lookup: &dyn RuleLookup,
    ) -> Result<Draft, SessionError> {
        let draft = self.begin(Stage::Grounding)?;
        let outcome =
            edit_draft(draft.as_ref(), &document, lookup).and_then(|nl| ground_draft(pipeline, nl));
        Ok(self.finish(RoundInput::Edit { document }, outcome)?)
    }
}
