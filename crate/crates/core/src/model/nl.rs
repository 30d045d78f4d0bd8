//! Reasoning-stage rules and the line-oriented rule-text document format.
//!
//! ```text
//! OPERATION: CREATE|MODIFY|DELETE
//! NAME: <text>|NONE
//! TRIGGERS:
//!   T<i> | EVENT | <text>
//!   T<i> | STATE | <text>
//!   T<i> | STATE(<int><unit>) | <text>
//! ACTIONS:
//!   G<k> WHEN T<i>[,T<j>...]:
//!     A<m> | <text>
//!     A<m> | WAIT <int><unit>
//! ```
//!
//! `T0` is reserved for the implicit voice trigger of a named rule: groups
//! may reference it without declaring it under `TRIGGERS`.

use std::collections::{BTreeSet, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::duration::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Create,
    Modify,
    Delete,
}

impl Operation {
    pub fn keyword(self) -> &'static str {
        match self {
            Operation::Create => "CREATE",
            Operation::Modify => "MODIFY",
            Operation::Delete => "DELETE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerMode {
    Event,
    State,
}

impl fmt::Display for TriggerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriggerMode::Event => "event",
            TriggerMode::State => "state",
        })
    }
}

macro_rules! label {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl $name {
            fn parse(text: &str) -> Option<Self> {
                let digits = text.strip_prefix($prefix)?;
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                digits.parse().ok().map($name)
            }
        }
    };
}

label!(TriggerId, "T");
label!(GroupId, "G");
label!(ActionId, "A");

/// Reserved id of the implicit voice-name trigger.
pub const NAME_TRIGGER: TriggerId = TriggerId(0);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerSpec {
    pub id: TriggerId,
    pub description: String,
    pub mode: TriggerMode,
    pub delay: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepKind {
    Command(String),
    Wait(Duration),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionStep {
    pub id: ActionId,
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionGroup {
    pub id: GroupId,
    pub trigger_ids: BTreeSet<TriggerId>,
    pub steps: Vec<ActionStep>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NlRule {
    pub operation: Operation,
    pub name: Option<String>,
    pub triggers: Vec<TriggerSpec>,
    pub groups: Vec<ActionGroup>,
}

/// Invariant violations of an [`NlRule`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleInvariantError {
    #[error("duplicate trigger id {0}")]
    DuplicateTrigger(TriggerId),
    #[error("duplicate group id {0}")]
    DuplicateGroup(GroupId),
    #[error("duplicate action id {action} in group {group}")]
    DuplicateAction { group: GroupId, action: ActionId },
    #[error("trigger id T0 is reserved for the rule-name trigger")]
    ReservedTrigger,
    #[error("group {group} refers to undefined trigger {trigger}")]
    DanglingTrigger { group: GroupId, trigger: TriggerId },
    #[error("group {group} refers to the rule-name trigger T0 but the rule has no name")]
    NameTriggerWithoutName { group: GroupId },
    #[error("group {0} has no triggers")]
    GroupWithoutTriggers(GroupId),
    #[error("group {0} has no action steps")]
    GroupWithoutSteps(GroupId),
    #[error("a CREATE rule needs at least one action group")]
    CreateWithoutGroups,
    #[error("event trigger {0} cannot carry a delay")]
    EventWithDelay(TriggerId),
    #[error("wait step {action} in group {group} must be positive")]
    ZeroWait { group: GroupId, action: ActionId },
    #[error("empty description on {0}")]
    EmptyText(String),
    #[error("{0} rules must name the rule they change")]
    MissingReference(&'static str),
}

impl NlRule {
    pub fn trigger(&self, id: TriggerId) -> Option<&TriggerSpec> {
        self.triggers.iter().find(|t| t.id == id)
    }

    /// Checks every invariant; returns the ids of triggers no group uses.
    /// A MODIFY document may reference triggers of the rule it edits.
    pub fn validate(&self) -> Result<Vec<TriggerId>, RuleInvariantError> {
        let mut seen = HashSet::new();
        for t in &self.triggers {
            if t.id == NAME_TRIGGER {
                return Err(RuleInvariantError::ReservedTrigger);
            }
            if !seen.insert(t.id) {
                return Err(RuleInvariantError::DuplicateTrigger(t.id));
            }
            if t.description.trim().is_empty() {
                return Err(RuleInvariantError::EmptyText(t.id.to_string()));
            }
            if t.mode == TriggerMode::Event && !t.delay.is_zero() {
                return Err(RuleInvariantError::EventWithDelay(t.id));
            }
        }
        let mut groups = HashSet::new();
        let mut referenced = HashSet::new();
        for g in &self.groups {
            if !groups.insert(g.id) {
                return Err(RuleInvariantError::DuplicateGroup(g.id));
            }
            if g.trigger_ids.is_empty() {
                return Err(RuleInvariantError::GroupWithoutTriggers(g.id));
            }
            if g.steps.is_empty() {
                return Err(RuleInvariantError::GroupWithoutSteps(g.id));
            }
            for &tid in &g.trigger_ids {
                if tid == NAME_TRIGGER {
                    if self.name.is_none() {
                        return Err(RuleInvariantError::NameTriggerWithoutName { group: g.id });
                    }
                } else if !seen.contains(&tid) && self.operation != Operation::Modify {
                    return Err(RuleInvariantError::DanglingTrigger {
                        group: g.id,
                        trigger: tid,
                    });
                }
                referenced.insert(tid);
            }
            let mut actions = HashSet::new();
            for step in &g.steps {
                if !actions.insert(step.id) {
                    return Err(RuleInvariantError::DuplicateAction {
                        group: g.id,
                        action: step.id,
                    });
                }
                match &step.kind {
                    StepKind::Wait(d) if d.is_zero() => {
                        return Err(RuleInvariantError::ZeroWait {
                            group: g.id,
                            action: step.id,
                        })
                    }
                    StepKind::Command(text) if text.trim().is_empty() => {
                        return Err(RuleInvariantError::EmptyText(format!(
                            "{}/{}",
                            g.id, step.id
                        )))
                    }
                    _ => {}
                }
            }
        }
        match self.operation {
            Operation::Create if self.groups.is_empty() => {
                return Err(RuleInvariantError::CreateWithoutGroups)
            }
            Operation::Delete if self.name.is_none() => {
                return Err(RuleInvariantError::MissingReference("DELETE"))
            }
            _ => {}
        }
        Ok(self
            .triggers
            .iter()
            .map(|t| t.id)
            .filter(|id| !referenced.contains(id))
            .collect())
    }

    /// Applies a MODIFY document to this rule: triggers and groups are
    /// upserted by id, then triggers no group references are dropped.
    pub fn apply_modification(&self, delta: &NlRule) -> NlRule {
        let mut merged = self.clone();
        if let Some(name) = &delta.name {
            merged.name = Some(name.clone());
        }
        for t in &delta.triggers {
            match merged.triggers.iter_mut().find(|x| x.id == t.id) {
                Some(slot) => *slot = t.clone(),
                None => merged.triggers.push(t.clone()),
            }
        }
        for g in &delta.groups {
            match merged.groups.iter_mut().find(|x| x.id == g.id) {
                Some(slot) => *slot = g.clone(),
                None => merged.groups.push(g.clone()),
            }
        }
        let used: HashSet<TriggerId> = merged
            .groups
            .iter()
            .flat_map(|g| g.trigger_ids.iter().copied())
            .collect();
        merged.triggers.retain(|t| used.contains(&t.id));
        merged
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleTextErrorKind {
    #[error("expected `{0}`")]
    Expected(&'static str),
    #[error("unknown operation `{0}`")]
    UnknownOperation(String),
    #[error("malformed trigger line (expected `T<i> | EVENT|STATE|STATE(<dur>) | <text>`)")]
    MalformedTrigger,
    #[error("unknown trigger mode `{0}`")]
    UnknownMode(String),
    #[error("bad duration: {0}")]
    BadDuration(String),
    #[error("malformed group header (expected `G<k> WHEN T<i>[,T<j>...]:`)")]
    MalformedGroup,
    #[error("malformed action line (expected `A<m> | <text>` or `A<m> | WAIT <dur>`)")]
    MalformedAction,
    #[error("action line outside of a group")]
    ActionOutsideGroup,
    #[error("unexpected content after the ACTIONS section")]
    Unexpected,
    #[error("{0}")]
    Invariant(#[from] RuleInvariantError),
}

/// Parse failure with a 1-based location.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct RuleTextError {
    pub line: usize,
    pub column: usize,
    pub kind: RuleTextErrorKind,
}

struct Cursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        let lines: Vec<_> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        let last_line = text.lines().count().max(1);
        Cursor {
            lines,
            pos: 0,
            last_line,
        }
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.lines.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.peek();
        if item.is_some() {
            self.pos += 1;
        }
        item
    }

    fn end_error(&self, expected: &'static str) -> RuleTextError {
        RuleTextError {
            line: self.last_line,
            column: 1,
            kind: RuleTextErrorKind::Expected(expected),
        }
    }
}

fn err(line: usize, raw: &str, field: &str, kind: RuleTextErrorKind) -> RuleTextError {
    let column = column_of(raw, field);
    RuleTextError { line, column, kind }
}

/// 1-based char column of `field` inside `raw` (both from the same line).
fn column_of(raw: &str, field: &str) -> usize {
    let offset = (field.as_ptr() as usize)
        .checked_sub(raw.as_ptr() as usize)
        .filter(|&o| o <= raw.len())
        .unwrap_or(0);
    raw[..offset].chars().count() + 1
}

fn header<'a>(
    cur: &mut Cursor<'a>,
    key: &'static str,
) -> Result<(usize, &'a str, &'a str), RuleTextError> {
    let (line, raw) = cur.next().ok_or_else(|| cur.end_error(key))?;
    let body = raw.trim_start();
    match body.strip_prefix(key) {
        Some(rest) => Ok((line, raw, rest.trim())),
        None => Err(err(line, raw, body, RuleTextErrorKind::Expected(key))),
    }
}

/// Parses a rule-text document into a validated [`NlRule`].
pub fn parse_rule_text(text: &str) -> Result<NlRule, RuleTextError> {
    let mut cur = Cursor::new(text);

    let (line, raw, op_text) = header(&mut cur, "OPERATION:")?;
    let operation = match op_text {
        "CREATE" => Operation::Create,
        "MODIFY" => Operation::Modify,
        "DELETE" => Operation::Delete,
        other => {
            return Err(err(
                line,
                raw,
                op_text,
                RuleTextErrorKind::UnknownOperation(other.to_string()),
            ))
        }
    };

    let (_, _, name_text) = header(&mut cur, "NAME:")?;
    let name = match name_text {
        "" | "NONE" => None,
        n => Some(n.to_string()),
    };

    let (triggers_line, _, rest) = header(&mut cur, "TRIGGERS:")?;
    let mut first_line_of = Vec::new();
    if !rest.is_empty() {
        return Err(RuleTextError {
            line: triggers_line,
            column: 10,
            kind: RuleTextErrorKind::Expected("end of line after TRIGGERS:"),
        });
    }

    let mut triggers = Vec::new();
    while let Some((line, raw)) = cur.peek() {
        let body = raw.trim();
        if body.starts_with("ACTIONS:") {
            break;
        }
        cur.next();
        let trigger = parse_trigger_line(line, raw, body)?;
        first_line_of.push((line, raw));
        triggers.push(trigger);
    }

    let (_, _, rest) = header(&mut cur, "ACTIONS:")?;
    if !rest.is_empty() {
        return Err(cur.end_error("end of line after ACTIONS:"));
    }

    let mut groups: Vec<ActionGroup> = Vec::new();
    let mut group_lines = Vec::new();
    while let Some((line, raw)) = cur.next() {
        let body = raw.trim();
        if body.starts_with('G') && body.contains(" WHEN ") {
            let group = parse_group_header(line, raw, body)?;
            group_lines.push((line, raw));
            groups.push(group);
        } else if body.starts_with('A') {
            let step = parse_action_line(line, raw, body)?;
            match groups.last_mut() {
                Some(g) => g.steps.push(step),
                None => {
                    return Err(err(line, raw, body, RuleTextErrorKind::ActionOutsideGroup));
                }
            }
        } else {
            return Err(err(line, raw, body, RuleTextErrorKind::Unexpected));
        }
    }

    let rule = NlRule {
        operation,
        name,
        triggers,
        groups,
    };
    rule.validate()
        .map_err(|e| locate_invariant(e, &first_line_of, &group_lines))?;
    Ok(rule)
}

fn locate_invariant(
    e: RuleInvariantError,
    trigger_lines: &[(usize, &str)],
    group_lines: &[(usize, &str)],
) -> RuleTextError {
    let (line, column) = match &e {
        RuleInvariantError::DuplicateTrigger(id) | RuleInvariantError::EventWithDelay(id) => {
            find_line(trigger_lines, &id.to_string())
        }
        RuleInvariantError::DuplicateGroup(g)
        | RuleInvariantError::GroupWithoutTriggers(g)
        | RuleInvariantError::GroupWithoutSteps(g)
        | RuleInvariantError::NameTriggerWithoutName { group: g }
        | RuleInvariantError::DuplicateAction { group: g, .. }
        | RuleInvariantError::ZeroWait { group: g, .. } => find_line(group_lines, &g.to_string()),
        RuleInvariantError::DanglingTrigger { group, trigger } => {
            let (line, _) = find_line(group_lines, &group.to_string());
            let raw = group_lines
                .iter()
                .find(|(l, _)| *l == line)
                .map(|(_, r)| *r)
                .unwrap_or("");
            let column = raw
                .find(&trigger.to_string())
                .map(|o| raw[..o].chars().count() + 1)
                .unwrap_or(1);
            (line, column)
        }
        RuleInvariantError::ReservedTrigger => find_line(trigger_lines, "T0"),
        _ => (1, 1),
    };
    RuleTextError {
        line,
        column,
        kind: RuleTextErrorKind::Invariant(e),
    }
}

fn find_line(lines: &[(usize, &str)], label: &str) -> (usize, usize) {
    lines
        .iter()
        .rev()
        .find(|(_, raw)| {
            let body = raw.trim_start();
            body.starts_with(label)
                && body[label.len()..]
                    .chars()
                    .next()
                    .is_none_or(|c| !c.is_ascii_digit())
        })
        .map(|(line, raw)| (*line, raw.len() - raw.trim_start().len() + 1))
        .unwrap_or((1, 1))
}

fn parse_trigger_line(line: usize, raw: &str, body: &str) -> Result<TriggerSpec, RuleTextError> {
    let mut parts = body.splitn(3, '|');
    let (Some(id_text), Some(mode_text), Some(desc)) = (parts.next(), parts.next(), parts.next())
    else {
        return Err(err(line, raw, body, RuleTextErrorKind::MalformedTrigger));
    };
    let id_text = id_text.trim();
    let id = TriggerId::parse(id_text)
        .ok_or_else(|| err(line, raw, body, RuleTextErrorKind::MalformedTrigger))?;
    let mode_trim = mode_text.trim();
    let (mode, delay) = match mode_trim {
        "EVENT" => (TriggerMode::Event, Duration::ZERO),
        "STATE" => (TriggerMode::State, Duration::ZERO),
        m if m.starts_with("STATE(") && m.ends_with(')') => {
            let inner = &m["STATE(".len()..m.len() - 1];
            let d = inner.parse::<Duration>().map_err(|e| {
                err(
                    line,
                    raw,
                    trim_ref(mode_text),
                    RuleTextErrorKind::BadDuration(e.to_string()),
                )
            })?;
            (TriggerMode::State, d)
        }
        m => {
            return Err(err(
                line,
                raw,
                trim_ref(mode_text),
                RuleTextErrorKind::UnknownMode(m.to_string()),
            ))
        }
    };
    let description = desc.trim();
    if description.is_empty() {
        return Err(err(
            line,
            raw,
            desc,
            RuleTextErrorKind::Invariant(RuleInvariantError::EmptyText(id.to_string())),
        ));
    }
    Ok(TriggerSpec {
        id,
        description: description.to_string(),
        mode,
        delay,
    })
}

fn trim_ref(s: &str) -> &str {
    s.trim()
}

fn parse_group_header(line: usize, raw: &str, body: &str) -> Result<ActionGroup, RuleTextError> {
    let malformed = || err(line, raw, body, RuleTextErrorKind::MalformedGroup);
    let (id_text, rest) = body.split_once(" WHEN ").ok_or_else(malformed)?;
    let id = GroupId::parse(id_text.trim()).ok_or_else(malformed)?;
    let list = rest.trim().strip_suffix(':').ok_or_else(malformed)?;
    let mut trigger_ids = BTreeSet::new();
    for item in list.split(',') {
        let item_trim = item.trim();
        let tid = TriggerId::parse(item_trim)
            .ok_or_else(|| err(line, raw, item_trim, RuleTextErrorKind::MalformedGroup))?;
        trigger_ids.insert(tid);
    }
    Ok(ActionGroup {
        id,
        trigger_ids,
        steps: Vec::new(),
    })
}

fn parse_action_line(line: usize, raw: &str, body: &str) -> Result<ActionStep, RuleTextError> {
    let malformed = || err(line, raw, body, RuleTextErrorKind::MalformedAction);
    let (id_text, rest) = body.split_once('|').ok_or_else(malformed)?;
    let id = ActionId::parse(id_text.trim()).ok_or_else(malformed)?;
    let text = rest.trim();
    let kind = match text.strip_prefix("WAIT ") {
        Some(dur) => StepKind::Wait(dur.trim().parse().map_err(|e: super::DurationError| {
            err(
                line,
                raw,
                dur.trim(),
                RuleTextErrorKind::BadDuration(e.to_string()),
            )
        })?),
        None if text.is_empty() => return Err(malformed()),
        None => StepKind::Command(text.to_string()),
    };
    Ok(ActionStep { id, kind })
}

/// Renders a rule as a rule-text document.
pub fn serialize_rule_text(rule: &NlRule) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "OPERATION: {}", rule.operation.keyword());
    let _ = writeln!(out, "NAME: {}", rule.name.as_deref().unwrap_or("NONE"));
    out.push_str("TRIGGERS:\n");
    for t in &rule.triggers {
        let mode = match (t.mode, t.delay.is_zero()) {
            (TriggerMode::Event, _) => "EVENT".to_string(),
            (TriggerMode::State, true) => "STATE".to_string(),
            (TriggerMode::State, false) => format!("STATE({})", t.delay),
        };
        let _ = writeln!(out, "  {} | {} | {}", t.id, mode, t.description);
    }
    out.push_str("ACTIONS:\n");
    for g in &rule.groups {
        let ids: Vec<String> = g.trigger_ids.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(out, "  {} WHEN {}:", g.id, ids.join(","));
        for s in &g.steps {
            match &s.kind {
                StepKind::Command(text) => {
                    let _ = writeln!(out, "    {} | {}", s.id, text);
                }
                StepKind::Wait(d) => {
                    let _ = writeln!(out, "    {} | WAIT {}", s.id, d);
                }
            }
        }
    }
    out
}

impl fmt::Display for NlRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_rule_text(self))
    }
}

/// Serialized as its rule-text document.
impl Serialize for NlRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&serialize_rule_text(self))
    }
}

impl<'de> Deserialize<'de> for NlRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_rule_text(&text).map_err(serde::de::Error::custom)
    }
}
