//! Data shipped with the crate: the demo home, the labeled corpus, a suite
//! of hallucinated groundings and the recorded model replies.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::context::{ContextSnapshot, DeviceCatalog};
use crate::eval::{parse_corpus, EvalCase};
use crate::model::{ErrorCode, NlRule};
use crate::normalizer::UserExpression;

pub const CATALOG_JSON: &str = include_str!("../data/catalog.json");
pub const CORPUS_JSON: &str = include_str!("../data/corpus.json");
pub const HALLUCINATIONS_JSON: &str = include_str!("../data/hallucinations.json");
pub const SLEEP_MODE_SESSION_JSON: &str = include_str!("../data/sessions/sleep_mode.json");

pub fn catalog() -> DeviceCatalog {
    DeviceCatalog::from_json(CATALOG_JSON).expect("bundled catalog is valid")
}

pub fn corpus() -> Vec<EvalCase> {
    parse_corpus(CORPUS_JSON).expect("bundled corpus is valid")
}

/// Directory of the recorded replies for the corpus and session scripts.
pub fn fixture_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures"))
}

/// A grounding reply that claims feasibility for capabilities the home
/// does not have, with the error codes validation must find.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HallucinationCase {
    pub id: String,
    pub rule: NlRule,
    pub reply: String,
    pub expected: Vec<ErrorCode>,
}

pub fn hallucination_suite() -> Vec<HallucinationCase> {
    serde_json::from_str(HALLUCINATIONS_JSON).expect("bundled hallucination suite is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptedInput {
    Expression,
    Edit,
}

/// One user input of a refinement session, with the replies the scripted
/// model gives for it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedRound {
    pub kind: ScriptedInput,
    #[serde(default)]
    pub expression: Option<UserExpression>,
    #[serde(default)]
    pub document: Option<String>,
    #[serde(default)]
    pub reasoning: Vec<String>,
    #[serde(default)]
    pub grounding: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionScript {
    pub id: String,
    pub snapshot: ContextSnapshot,
    pub rounds: Vec<ScriptedRound>,
}

/// Expression, correction, direct edit: the sleep-mode refinement.
pub fn sleep_mode_session() -> SessionScript {
    serde_json::from_str(SLEEP_MODE_SESSION_JSON).expect("bundled session script is valid")
}
