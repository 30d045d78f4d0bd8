//! Corpus replay and the success metrics.
//!
//! Correctness and completeness are judged structurally against the gold
//! rule rather than by a human reader.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::context::{ContextSnapshot, DeviceCatalog};
use crate::grounding::validate_grounded;
use crate::model::{
    rules_equivalent, ErrorCode, GroundedRule, NlRule, StepKind, TriggerId, NAME_TRIGGER,
};
use crate::normalizer::UserExpression;
use crate::pipeline::Pipeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    MultiParameter,
    DynamicParameters,
    MultimodalParameters,
    FuzzyExpression,
    RedundantExpressions,
    ComplexBranch,
    TimeRelatedTrigger,
    TimeDependentAction,
    Combination,
}

impl Complexity {
    pub const ALL: [Complexity; 9] = [
        Complexity::MultiParameter,
        Complexity::DynamicParameters,
        Complexity::MultimodalParameters,
        Complexity::FuzzyExpression,
        Complexity::RedundantExpressions,
        Complexity::ComplexBranch,
        Complexity::TimeRelatedTrigger,
        Complexity::TimeDependentAction,
        Complexity::Combination,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Complexity::MultiParameter => "Multi-parameter",
            Complexity::DynamicParameters => "Dynamic parameters",
            Complexity::MultimodalParameters => "Multimodal parameters",
            Complexity::FuzzyExpression => "Fuzzy expression",
            Complexity::RedundantExpressions => "Redundant expressions",
            Complexity::ComplexBranch => "Complex branch",
            Complexity::TimeRelatedTrigger => "Time-related trigger",
            Complexity::TimeDependentAction => "Time-dependent action",
            Complexity::Combination => "Combination",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseInput {
    pub expression: UserExpression,
    #[serde(default)]
    pub snapshot: ContextSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub id: String,
    pub complexity: Complexity,
    pub input: CaseInput,
    pub gold_nl: NlRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_grounded: Option<GroundedRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_infeasible_reason: Option<BTreeSet<ErrorCode>>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus is not valid JSON at `{path}`: {message}")]
    Json { path: String, message: String },
    #[error("case `{0}` needs exactly one of gold_grounded and gold_infeasible_reason")]
    GoldShape(String),
    #[error("duplicate case id `{0}`")]
    DuplicateId(String),
    #[error("failed to read corpus {path}: {message}")]
    Io { path: String, message: String },
}

pub fn parse_corpus(text: &str) -> Result<Vec<EvalCase>, CorpusError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cases: Vec<EvalCase> =
        serde_path_to_error::deserialize(de).map_err(|e| CorpusError::Json {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    let mut ids = HashSet::new();
    for case in &cases {
        if case.gold_grounded.is_some() == case.gold_infeasible_reason.is_some() {
            return Err(CorpusError::GoldShape(case.id.clone()));
        }
        if !ids.insert(case.id.as_str()) {
            return Err(CorpusError::DuplicateId(case.id.clone()));
        }
    }
    Ok(cases)
}

pub fn load_corpus(path: &std::path::Path) -> Result<Vec<EvalCase>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_corpus(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CaseScore {
    pub correctness: bool,
    pub completeness: bool,
    pub executability: bool,
    pub env_conformance: bool,
    pub success: bool,
}

impl CaseScore {
    pub fn new(
        correctness: bool,
        completeness: bool,
        executability: bool,
        env_conformance: bool,
    ) -> Self {
        CaseScore {
            correctness,
            completeness,
            executability,
            env_conformance,
            success: correctness && completeness && executability && env_conformance,
        }
    }
}

fn norm(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end_matches(['.', '!', ','])
        .to_lowercase()
}

fn step_key(kind: &StepKind) -> String {
    match kind {
        StepKind::Command(text) => norm(text),
        StepKind::Wait(d) => format!("wait {}", d.as_secs()),
    }
}

fn same_name(a: &Option<String>, b: &Option<String>) -> bool {
    a.as_deref().map(norm) == b.as_deref().map(norm)
}

/// Maps prediction trigger ids to gold ids by description; the name
/// trigger maps to itself.
fn match_triggers(gold: &NlRule, pred: &NlRule) -> BTreeMap<TriggerId, TriggerId> {
    let mut used = HashSet::new();
    let mut map = BTreeMap::new();
    for p in &pred.triggers {
        let key = norm(&p.description);
        if let Some(g) = gold
            .triggers
            .iter()
            .find(|g| !used.contains(&g.id) && norm(&g.description) == key)
        {
            used.insert(g.id);
            map.insert(p.id, g.id);
        }
    }
    map.insert(NAME_TRIGGER, NAME_TRIGGER);
    map
}

/// Every gold trigger and step has a counterpart and the name agrees.
pub fn completeness(gold: &NlRule, pred: &NlRule) -> bool {
    let map = match_triggers(gold, pred);
    let matched: HashSet<TriggerId> = map.values().copied().collect();
    if !gold.triggers.iter().all(|t| matched.contains(&t.id)) {
        return false;
    }
    let mut available: BTreeMap<String, usize> = BTreeMap::new();
    for step in pred.groups.iter().flat_map(|g| &g.steps) {
        *available.entry(step_key(&step.kind)).or_default() += 1;
    }
    for step in gold.groups.iter().flat_map(|g| &g.steps) {
        match available.get_mut(&step_key(&step.kind)) {
            Some(n) if *n > 0 => *n -= 1,
            _ => return false,
        }
    }
    same_name(&gold.name, &pred.name)
}

/// Same operation, no spurious triggers, matched triggers agree on mode
/// and delay, groups correspond one to one by trigger set, and matched
/// steps keep their order.
pub fn correctness(gold: &NlRule, pred: &NlRule) -> bool {
    if gold.operation != pred.operation {
        return false;
    }
    let map = match_triggers(gold, pred);
    for p in &pred.triggers {
        let Some(g) = map.get(&p.id).and_then(|gid| gold.trigger(*gid)) else {
            return false;
        };
        if g.mode != p.mode || g.delay != p.delay {
            return false;
        }
    }
    if gold.groups.len() != pred.groups.len() {
        return false;
    }
    let mut unused: Vec<_> = gold.groups.iter().collect();
    for pg in &pred.groups {
        let mapped: BTreeSet<TriggerId> = pg
            .trigger_ids
            .iter()
            .filter_map(|t| map.get(t).copied())
            .collect();
        if mapped.len() != pg.trigger_ids.len() {
            return false;
        }
        let Some(pos) = unused
            .iter()
            .position(|g| g.trigger_ids == mapped && steps_in_order(&g.steps, &pg.steps))
        else {
            return false;
        };
        unused.remove(pos);
    }
    true
}

fn steps_in_order(gold: &[crate::model::ActionStep], pred: &[crate::model::ActionStep]) -> bool {
    let gold_keys: Vec<String> = gold.iter().map(|s| step_key(&s.kind)).collect();
    let pred_keys: Vec<String> = pred.iter().map(|s| step_key(&s.kind)).collect();
    let common: Vec<&String> = pred_keys.iter().filter(|k| gold_keys.contains(k)).collect();
    let mut it = gold_keys.iter();
    common.iter().all(|k| it.any(|g| g == *k))
}

/// Scores one prediction against its gold labels. Total.
pub fn score_case(
    case: &EvalCase,
    predicted_nl: &NlRule,
    predicted: &GroundedRule,
    catalog: &DeviceCatalog,
) -> CaseScore {
    let validated = validate_grounded(catalog, predicted);
    let gold_infeasible = case.gold_infeasible_reason.is_some();
    let executability = validated.feasible || (gold_infeasible && !validated.feasible);
    let env_conformance = if validated.feasible {
        case.gold_grounded
            .as_ref()
            .is_some_and(|g| rules_equivalent(&validated, g))
    } else {
        case.gold_infeasible_reason.as_ref() == Some(&validated.error_codes())
    };
    CaseScore::new(
        correctness(&case.gold_nl, predicted_nl),
        completeness(&case.gold_nl, predicted_nl),
        executability,
        env_conformance,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    pub complexity: Complexity,
    pub score: CaseScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Counts of passing cases per column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub cases: usize,
    pub correctness: usize,
    pub completeness: usize,
    pub executability: usize,
    pub env_conformance: usize,
    pub success: usize,
}

impl Tally {
    pub fn add(&mut self, s: &CaseScore) {
        self.cases += 1;
        self.correctness += usize::from(s.correctness);
        self.completeness += usize::from(s.completeness);
        self.executability += usize::from(s.executability);
        self.env_conformance += usize::from(s.env_conformance);
        self.success += usize::from(s.success);
    }

    pub fn rates(&self) -> Rates {
        Rates {
            correctness: rate(self.correctness, self.cases),
            completeness: rate(self.completeness, self.cases),
            executability: rate(self.executability, self.cases),
            env_conformance: rate(self.env_conformance, self.cases),
            success: rate(self.success, self.cases),
        }
    }
}

/// Percentage in [0, 100]; 0 for an empty denominator.
pub fn rate(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

/// `count/total` as a percentage with the given number of decimals.
pub fn format_rate(count: usize, total: usize, decimals: usize) -> String {
    format!("{:.*}", decimals, rate(count, total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub correctness: f64,
    pub completeness: f64,
    pub executability: f64,
    pub env_conformance: f64,
    pub success: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub complexity: Option<Complexity>,
    pub label: String,
    pub tally: Tally,
    pub rates: Rates,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub note: String,
    pub rows: Vec<ReportRow>,
    pub overall: Option<ReportRow>,
    pub cases: Vec<CaseResult>,
}

const NOTE: &str = "correctness and completeness are scored structurally against gold labels";

impl EvalReport {
    /// Folds results in case-id order; classes without cases are omitted.
    pub fn from_results(mut cases: Vec<CaseResult>) -> Self {
        cases.sort_by(|a, b| a.id.cmp(&b.id));
        let mut per_class: BTreeMap<Complexity, Tally> = BTreeMap::new();
        let mut overall = Tally::default();
        for c in &cases {
            per_class.entry(c.complexity).or_default().add(&c.score);
            overall.add(&c.score);
        }
        let rows = Complexity::ALL
            .iter()
            .filter_map(|k| {
                per_class.get(k).map(|t| ReportRow {
                    complexity: Some(*k),
                    label: k.label().to_string(),
                    tally: *t,
                    rates: t.rates(),
                })
            })
            .collect();
        let overall = (overall.cases > 0).then(|| ReportRow {
            complexity: None,
            label: "Overall".to_string(),
            tally: overall,
            rates: overall.rates(),
        });
        EvalReport {
            note: NOTE.to_string(),
            rows,
            overall,
            cases,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table in the column layout of the paper's results table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Note: {}.", self.note);
        if self.is_empty() {
            out.push_str("no cases\n");
            return out;
        }
        let _ = writeln!(
            out,
            "{:<24}{:>5}  {:^27}  {:^32}  {:>12}",
            "", "", "Intent Consistency", "Feasibility", ""
        );
        let _ = writeln!(
            out,
            "{:<24}{:>5}  {:>12}  {:>13}  {:>13}  {:>17}  {:>12}",
            "Complexity",
            "N",
            "Correctness",
            "Completeness",
            "Executability",
            "Env Conformance",
            "Success Rate"
        );
        for row in self.rows.iter().chain(self.overall.iter()) {
            let t = &row.tally;
            let _ = writeln!(
                out,
                "{:<24}{:>5}  {:>12}  {:>13}  {:>13}  {:>17}  {:>12}",
                row.label,
                t.cases,
                format_rate(t.correctness, t.cases, 1),
                format_rate(t.completeness, t.cases, 1),
                format_rate(t.executability, t.cases, 1),
                format_rate(t.env_conformance, t.cases, 1),
                format_rate(t.success, t.cases, 1),
            );
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_table())
    }
}

/// Runs one case; a pipeline failure scores all false.
pub fn run_case(case: &EvalCase, pipeline: &Pipeline) -> CaseResult {
    let (score, error) = match pipeline.run(&case.input.expression, &case.input.snapshot) {
        Ok(out) => (
            score_case(case, &out.nl_rule, &out.grounded, pipeline.catalog()),
            None,
        ),
        Err(e) => (CaseScore::default(), Some(e.to_string())),
    };
    CaseResult {
        id: case.id.clone(),
        complexity: case.complexity,
        score,
        error,
    }
}

pub fn run_corpus(corpus: &[EvalCase], pipeline: &Pipeline) -> EvalReport {
    EvalReport::from_results(corpus.iter().map(|c| run_case(c, pipeline)).collect())
}
