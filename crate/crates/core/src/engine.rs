//! Discrete-event automation engine over virtual time.
//!
//! Time is in whole seconds. At each instant, work driven by time (WAIT
//! continuations and state holds reaching their delay) runs before inputs
//! at that instant. Commands change the actuated map only; they are not fed
//! back as inputs, so one rule never triggers another.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::context::{
    DeviceCatalog, InterfaceKind, LookupMiss, NearestTarget, USER_POSITION_INTERFACE,
    USER_POSITION_TARGET,
};
use crate::grounding::validate_grounded;
use crate::model::{
    canonicalize, Condition, Duration, GroundedRule, GroundingError, Operation, TriggerMode,
    TIMER_TARGET,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub u64);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// An occurrence: matches event triggers and updates state.
    #[default]
    Event,
    /// A state change only.
    State,
}

/// One simulated input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: u64,
    pub target: String,
    pub interface: String,
    pub value: String,
    #[serde(default)]
    pub kind: InputKind,
}

/// One executed command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTrace {
    pub time: u64,
    pub rule: RuleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_name: Option<String>,
    pub pair: usize,
    pub step: usize,
    pub target: String,
    pub interface: String,
    pub parameter: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateEntry {
    pub target: String,
    pub interface: String,
    pub value: String,
    pub since: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeployedRule {
    pub id: RuleId,
    pub deployed_at: u64,
    pub rule: GroundedRule,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("rule is not feasible: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Infeasible(Vec<GroundingError>),
    #[error("no deployed rule named `{0}`")]
    UnknownRule(String),
    #[error("no deployed rule {0}")]
    UnknownRuleId(RuleId),
    #[error("cannot go back in time from {now}s to {requested}s")]
    TimeTravel { now: u64, requested: u64 },
    #[error("`{target}` has no observable `{interface}`")]
    UnknownInput { target: String, interface: String },
    #[error("`{value}` is not a valid value of {target} {interface}")]
    BadValue {
        target: String,
        interface: String,
        value: String,
    },
}

/// Result of applying a grounded rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum Deployment {
    Deployed {
        id: RuleId,
        replaced: Option<RuleId>,
    },
    Withdrawn {
        id: RuleId,
    },
}

/// The simulator's clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: u64,
}

impl VirtualClock {
    pub fn now(&self) -> u64 {
        self.now
    }

    fn set(&mut self, t: u64) {
        self.now = t;
    }
}

type Key = (String, String);

fn key(target: &str, interface: &str) -> Key {
    (
        target.trim().to_lowercase(),
        interface.trim().to_lowercase(),
    )
}

#[derive(Debug, Clone)]
struct Trigger {
    key: Key,
    condition: Condition,
    mode: TriggerMode,
    delay: u64,
    since: Option<u64>,
}

#[derive(Debug, Clone)]
enum Step {
    Command {
        target: String,
        nearest: Option<String>,
        interface: String,
        parameter: String,
    },
    Wait(u64),
}

#[derive(Debug, Clone)]
struct Pair {
    triggers: Vec<Trigger>,
    steps: Vec<Step>,
    all_state: bool,
    armed: bool,
}

#[derive(Debug, Clone)]
struct Rule {
    id: RuleId,
    deployed_at: u64,
    grounded: GroundedRule,
    pairs: Vec<Pair>,
}

#[derive(Debug, Clone)]
struct Value {
    target: String,
    interface: String,
    value: String,
    since: u64,
}

/// The rule store and simulator.
pub struct Engine {
    catalog: Arc<DeviceCatalog>,
    clock: VirtualClock,
    rules: Vec<Rule>,
    next_id: u64,
    state: BTreeMap<Key, Value>,
    actuated: BTreeMap<Key, Value>,
    events_now: Vec<(Key, String)>,
    /// (due, rule, pair, step, seq)
    pending: BTreeSet<(u64, RuleId, usize, usize, u64)>,
    /// (due, rule, pair)
    wakeups: BTreeSet<(u64, RuleId, usize)>,
    seq: u64,
    trace: Vec<ActionTrace>,
}

impl Engine {
    pub fn new(catalog: Arc<DeviceCatalog>) -> Self {
        Engine {
            catalog,
            clock: VirtualClock::default(),
            rules: Vec::new(),
            next_id: 1,
            state: BTreeMap::new(),
            actuated: BTreeMap::new(),
            events_now: Vec::new(),
            pending: BTreeSet::new(),
            wakeups: BTreeSet::new(),
            seq: 0,
            trace: Vec::new(),
        }
    }

    pub fn catalog(&self) -> &DeviceCatalog {
        &self.catalog
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn trace(&self) -> &[ActionTrace] {
        &self.trace
    }

    /// The trace as JSON lines.
    pub fn export_trace(&self) -> String {
        self.trace
            .iter()
            .map(|t| serde_json::to_string(t).expect("trace entry serializes") + "\n")
            .collect()
    }

    pub fn rules(&self) -> Vec<DeployedRule> {
        self.rules
            .iter()
            .map(|r| DeployedRule {
                id: r.id,
                deployed_at: r.deployed_at,
                rule: r.grounded.clone(),
            })
            .collect()
    }

    pub fn rule_named(&self, name: &str) -> Option<DeployedRule> {
        self.find_named(name).map(|i| {
            let r = &self.rules[i];
            DeployedRule {
                id: r.id,
                deployed_at: r.deployed_at,
                rule: r.grounded.clone(),
            }
        })
    }

    pub fn state(&self) -> Vec<StateEntry> {
        Self::entries(&self.state)
    }

    pub fn actuated(&self) -> Vec<StateEntry> {
        Self::entries(&self.actuated)
    }

    fn entries(map: &BTreeMap<Key, Value>) -> Vec<StateEntry> {
        map.values()
            .map(|v| StateEntry {
                target: v.target.clone(),
                interface: v.interface.clone(),
                value: v.value.clone(),
                since: v.since,
            })
            .collect()
    }

    fn find_named(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.rules.iter().position(|r| {
            r.grounded
                .name
                .as_deref()
                .is_some_and(|n| n.trim().eq_ignore_ascii_case(name))
        })
    }

    /// Applies a grounded rule. CREATE and MODIFY deploy it, replacing a
    /// deployed rule of the same name; DELETE withdraws the named rule.
    /// The rule is validated again and must be feasible.
    pub fn deploy(&mut self, rule: &GroundedRule) -> Result<Deployment, EngineError> {
        let checked = validate_grounded(&self.catalog, rule);
        if !checked.feasible {
            return Err(EngineError::Infeasible(checked.errors));
        }
        if checked.operation == Operation::Delete {
            let name = checked.name.clone().unwrap_or_default();
            let idx = self
                .find_named(&name)
                .ok_or(EngineError::UnknownRule(name))?;
            let id = self.rules[idx].id;
            self.remove(idx);
            return Ok(Deployment::Withdrawn { id });
        }
        let replaced = match checked.name.as_deref().and_then(|n| self.find_named(n)) {
            Some(idx) => {
                let id = self.rules[idx].id;
                self.remove(idx);
                Some(id)
            }
            None => None,
        };
        let id = RuleId(self.next_id);
        self.next_id += 1;
        let mut canonical = canonicalize(&checked);
        canonical.name = checked.name.clone();
        let compiled = self.compile(id, canonical);
        self.rules.push(compiled);
        let idx = self.rules.len() - 1;
        self.start_holds(idx);
        for p in 0..self.rules[idx].pairs.len() {
            if self.rules[idx].pairs[p].all_state && self.evaluate_state_pair(idx, p) {
                self.run(idx, p, 0);
            }
        }
        tracing::debug!(rule = %id, "deployed");
        Ok(Deployment::Deployed { id, replaced })
    }

    pub fn withdraw(&mut self, id: RuleId) -> Result<(), EngineError> {
        let idx = self
            .rules
            .iter()
            .position(|r| r.id == id)
            .ok_or(EngineError::UnknownRuleId(id))?;
        self.remove(idx);
        Ok(())
    }

    pub fn withdraw_named(&mut self, name: &str) -> Result<RuleId, EngineError> {
        let idx = self
            .find_named(name)
            .ok_or_else(|| EngineError::UnknownRule(name.to_string()))?;
        let id = self.rules[idx].id;
        self.remove(idx);
        Ok(id)
    }

    fn remove(&mut self, idx: usize) {
        let id = self.rules.remove(idx).id;
        self.pending.retain(|p| p.1 != id);
        self.wakeups.retain(|w| w.1 != id);
    }

    fn spelling(&self, target: &str) -> String {
        self.catalog
            .device(target)
            .map(|d| d.target.clone())
            .unwrap_or_else(|| target.trim().to_string())
    }

    fn interface_spelling(&self, target: &str, interface: &str, kind: InterfaceKind) -> String {
        self.catalog
            .lookup_interface(target, interface, kind)
            .map(|(_, i)| i.name.clone())
            .unwrap_or_else(|_| interface.trim().to_string())
    }

    fn compile(&self, id: RuleId, mut rule: GroundedRule) -> Rule {
        for pair in &mut rule.ta_pairs {
            for t in &mut pair.triggers {
                t.interface =
                    self.interface_spelling(&t.target, &t.interface, InterfaceKind::Query);
                t.target = self.spelling(&t.target);
            }
            for a in &mut pair.actions {
                if NearestTarget::parse(&a.target).is_none()
                    && !a.target.eq_ignore_ascii_case(TIMER_TARGET)
                {
                    a.interface =
                        self.interface_spelling(&a.target, &a.interface, InterfaceKind::Operation);
                    a.target = self.spelling(&a.target);
                }
            }
        }
        let pairs = rule
            .ta_pairs
            .iter()
            .map(|pair| {
                let triggers: Vec<Trigger> = pair
                    .triggers
                    .iter()
                    .map(|t| Trigger {
                        key: key(&t.target, &t.interface),
                        condition: Condition::parse(&t.condition),
                        mode: t.mode,
                        delay: t.delay.as_secs(),
                        since: None,
                    })
                    .collect();
                let steps = pair
                    .actions
                    .iter()
                    .map(|a| {
                        if a.target.eq_ignore_ascii_case(TIMER_TARGET) {
                            let d: Duration =
                                a.parameter.trim().parse().expect("validated duration");
                            Step::Wait(d.as_secs())
                        } else {
                            Step::Command {
                                target: a.target.clone(),
                                nearest: NearestTarget::parse(&a.target).map(|n| n.kind),
                                interface: a.interface.clone(),
                                parameter: a.parameter.clone(),
                            }
                        }
                    })
                    .collect();
                Pair {
                    all_state: triggers.iter().all(|t| t.mode == TriggerMode::State),
                    triggers,
                    steps,
                    armed: true,
                }
            })
            .collect();
        Rule {
            id,
            deployed_at: self.now(),
            grounded: rule,
            pairs,
        }
    }

    fn start_holds(&mut self, idx: usize) {
        let now = self.now();
        let id = self.rules[idx].id;
        for p in 0..self.rules[idx].pairs.len() {
            let all_state = self.rules[idx].pairs[p].all_state;
            for t in 0..self.rules[idx].pairs[p].triggers.len() {
                let trig = &self.rules[idx].pairs[p].triggers[t];
                let holds = self
                    .state
                    .get(&trig.key)
                    .is_some_and(|v| trig.condition.holds(&v.value));
                let delay = trig.delay;
                self.rules[idx].pairs[p].triggers[t].since = holds.then_some(now);
                if holds && all_state && delay > 0 {
                    self.wakeups.insert((now + delay, id, p));
                }
            }
        }
    }

    /// Runs everything due up to and including `to`, then sets the clock.
    pub fn advance(&mut self, to: u64) -> Result<(), EngineError> {
        if to < self.now() {
            return Err(EngineError::TimeTravel {
                now: self.now(),
                requested: to,
            });
        }
        loop {
            let next_pending = self.pending.first().map(|p| p.0);
            let next_wake = self.wakeups.first().map(|w| w.0);
            let next = match (next_pending, next_wake) {
                (Some(a), Some(b)) => a.min(b),
                (a, b) => match a.or(b) {
                    Some(t) => t,
                    None => break,
                },
            };
            if next > to {
                break;
            }
            self.set_time(next);
            self.timed_work(next);
        }
        self.set_time(to);
        Ok(())
    }

    fn set_time(&mut self, t: u64) {
        if t != self.now() {
            self.events_now.clear();
        }
        self.clock.set(t);
    }

    fn rule_index(&self, id: RuleId) -> Option<usize> {
        self.rules.iter().position(|r| r.id == id)
    }

    fn timed_work(&mut self, t: u64) {
        let mut items: Vec<(RuleId, usize, usize, u64)> = Vec::new();
        while let Some(&(due, r, p)) = self.wakeups.first() {
            if due != t {
                break;
            }
            self.wakeups.pop_first();
            if let Some(idx) = self.rule_index(r) {
                if self.evaluate_state_pair(idx, p) {
                    items.push((r, p, 0, 0));
                }
            }
        }
        while let Some(&(due, r, p, step, seq)) = self.pending.first() {
            if due != t {
                break;
            }
            self.pending.pop_first();
            items.push((r, p, step, seq));
        }
        items.sort();
        for (r, p, step, _) in items {
            if let Some(idx) = self.rule_index(r) {
                self.run(idx, p, step);
            }
        }
    }

    fn satisfied(trigger: &Trigger, now: u64) -> bool {
        trigger.since.is_some_and(|s| now - s >= trigger.delay)
    }

    /// Edge detection for a pair of state triggers only.
    fn evaluate_state_pair(&mut self, idx: usize, p: usize) -> bool {
        let now = self.now();
        let pair = &mut self.rules[idx].pairs[p];
        let ok = pair.triggers.iter().all(|t| Self::satisfied(t, now));
        if !ok {
            pair.armed = true;
            return false;
        }
        if pair.armed {
            pair.armed = false;
            return true;
        }
        false
    }

    fn check_input(
        &self,
        target: &str,
        interface: &str,
        value: &str,
    ) -> Result<(String, String), EngineError> {
        match self
            .catalog
            .lookup_interface(target, interface, InterfaceKind::Query)
        {
            Ok((device, iface)) => {
                if let Some(domain) = &iface.returns {
                    if !domain.admits(value) {
                        return Err(EngineError::BadValue {
                            target: target.to_string(),
                            interface: interface.to_string(),
                            value: value.to_string(),
                        });
                    }
                }
                Ok((device.target.clone(), iface.name.clone()))
            }
            Err(
                LookupMiss::UnknownTarget | LookupMiss::UnknownInterface | LookupMiss::WrongKind,
            ) => Err(EngineError::UnknownInput {
                target: target.to_string(),
                interface: interface.to_string(),
            }),
        }
    }

    fn update_state(&mut self, target: String, interface: String, value: &str) -> Key {
        let now = self.now();
        let k = key(&target, &interface);
        let changed = self.state.get(&k).is_none_or(|v| v.value != value);
        if changed {
            self.state.insert(
                k.clone(),
                Value {
                    target,
                    interface,
                    value: value.to_string(),
                    since: now,
                },
            );
        }
        for rule in &mut self.rules {
            for (p, pair) in rule.pairs.iter_mut().enumerate() {
                for trig in pair.triggers.iter_mut().filter(|t| t.key == k) {
                    if trig.condition.holds(value) {
                        if trig.since.is_none() {
                            trig.since = Some(now);
                            if pair.all_state && trig.delay > 0 {
                                self.wakeups.insert((now + trig.delay, rule.id, p));
                            }
                        }
                    } else {
                        trig.since = None;
                    }
                }
            }
        }
        k
    }

    /// Sets a state value at the current time without an event occurrence.
    pub fn set_state(
        &mut self,
        target: &str,
        interface: &str,
        value: &str,
    ) -> Result<(), EngineError> {
        let (t, i) = self.check_input(target, interface, value)?;
        self.update_state(t, i, value.trim());
        for idx in 0..self.rules.len() {
            for p in 0..self.rules[idx].pairs.len() {
                if self.rules[idx].pairs[p].all_state && self.evaluate_state_pair(idx, p) {
                    self.run(idx, p, 0);
                }
            }
        }
        Ok(())
    }

    /// An event occurrence at the current time; it also sets the state.
    pub fn inject(
        &mut self,
        target: &str,
        interface: &str,
        value: &str,
    ) -> Result<(), EngineError> {
        let (t, i) = self.check_input(target, interface, value)?;
        let value = value.trim();
        let k = self.update_state(t, i, value);
        self.events_now.push((k.clone(), value.to_string()));
        let now = self.now();
        for idx in 0..self.rules.len() {
            for p in 0..self.rules[idx].pairs.len() {
                let fire = {
                    let pair = &self.rules[idx].pairs[p];
                    if pair.all_state {
                        None
                    } else {
                        let events = &self.events_now;
                        let is_event = |t: &Trigger| t.mode == TriggerMode::Event;
                        let hit = pair
                            .triggers
                            .iter()
                            .any(|t| is_event(t) && t.key == k && t.condition.holds(value));
                        let others = pair.triggers.iter().all(|t| {
                            if is_event(t) {
                                events
                                    .iter()
                                    .any(|(ek, ev)| *ek == t.key && t.condition.holds(ev))
                            } else {
                                Self::satisfied(t, now)
                            }
                        });
                        Some(hit && others)
                    }
                };
                let fire = match fire {
                    Some(f) => f,
                    None => self.evaluate_state_pair(idx, p),
                };
                if fire {
                    self.run(idx, p, 0);
                }
            }
        }
        Ok(())
    }

    /// Advances to the event's time and applies it.
    pub fn apply(&mut self, event: &SimEvent) -> Result<(), EngineError> {
        self.advance(event.time)?;
        match event.kind {
            InputKind::Event => self.inject(&event.target, &event.interface, &event.value),
            InputKind::State => self.set_state(&event.target, &event.interface, &event.value),
        }
    }

    fn resolve_nearest(&self, kind: &str) -> Option<String> {
        let position = self
            .state
            .get(&key(USER_POSITION_TARGET, USER_POSITION_INTERFACE))
            .map(|v| v.value.as_str());
        self.catalog
            .nearest_of_kind(kind, position)
            .map(|d| d.target.clone())
    }

    fn run(&mut self, idx: usize, p: usize, from: usize) {
        let now = self.now();
        let id = self.rules[idx].id;
        let name = self.rules[idx].grounded.name.clone();
        let steps = self.rules[idx].pairs[p].steps.clone();
        for (s, step) in steps.iter().enumerate().skip(from) {
            match step {
                Step::Wait(d) => {
                    self.seq += 1;
                    self.pending.insert((now + d, id, p, s + 1, self.seq));
                    return;
                }
                Step::Command {
                    target,
                    nearest,
                    interface,
                    parameter,
                } => {
                    let target = match nearest {
                        Some(kind) => match self.resolve_nearest(kind) {
                            Some(t) => t,
                            None => {
                                tracing::warn!(%kind, "no device to resolve the nearest target");
                                continue;
                            }
                        },
                        None => target.clone(),
                    };
                    let interface = if nearest.is_some() {
                        self.interface_spelling(&target, interface, InterfaceKind::Operation)
                    } else {
                        interface.clone()
                    };
                    self.actuated.insert(
                        key(&target, &interface),
                        Value {
                            target: target.clone(),
                            interface: interface.clone(),
                            value: parameter.clone(),
                            since: now,
                        },
                    );
                    self.trace.push(ActionTrace {
                        time: now,
                        rule: id,
                        rule_name: name.clone(),
                        pair: p,
                        step: s,
                        target,
                        interface,
                        parameter: parameter.clone(),
                    });
                }
            }
        }
    }
}

/// Replays inputs in order on `engine` and runs on to `horizon`.
pub fn simulate(engine: &mut Engine, events: &[SimEvent], horizon: u64) -> Result<(), EngineError> {
    for e in events {
        engine.apply(e)?;
    }
    engine.advance(horizon.max(engine.now()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_action_tuple, parse_trigger_tuple, TaPair};

    fn engine() -> Engine {
        Engine::new(Arc::new(
            DeviceCatalog::from_json(include_str!("../data/catalog.json")).unwrap(),
        ))
    }

    fn rule(name: Option<&str>, pairs: &[(&[&str], &[&str])]) -> GroundedRule {
        GroundedRule {
            operation: Operation::Create,
            name: name.map(str::to_string),
            feasible: true,
            ta_pairs: pairs
                .iter()
                .map(|(t, a)| TaPair {
                    triggers: t.iter().map(|s| parse_trigger_tuple(s).unwrap()).collect(),
                    actions: a.iter().map(|s| parse_action_tuple(s).unwrap()).collect(),
                })
                .collect(),
            errors: vec![],
        }
    }

    fn fired(e: &Engine) -> Vec<(u64, String)> {
        e.trace()
            .iter()
            .map(|t| {
                (
                    t.time,
                    format!("{}-{}-{}", t.target, t.interface, t.parameter),
                )
            })
            .collect()
    }

    #[test]
    fn activity_delay_trigger() {
        let mut e = engine();
        e.deploy(&rule(
            None,
            &[(
                &["ActivitySensor-isThereUserActivity-false-state(10mins)"],
                &["TV-switch-off"],
            )],
        ))
        .unwrap();
        e.set_state("ActivitySensor", "isThereUserActivity", "false")
            .unwrap();
        e.advance(599).unwrap();
        assert!(e.trace().is_empty());
        e.advance(600).unwrap();
        assert_eq!(fired(&e), vec![(600, "TV-switch-off".to_string())]);
        e.advance(5000).unwrap();
        assert_eq!(e.trace().len(), 1);
    }

    #[test]
    fn activity_interrupt_restarts_the_hold() {
        let mut e = engine();
        e.deploy(&rule(
            None,
            &[(
                &["ActivitySensor-isThereUserActivity-false-state(10mins)"],
                &["TV-switch-off"],
            )],
        ))
        .unwrap();
        e.set_state("ActivitySensor", "isThereUserActivity", "false")
            .unwrap();
        e.advance(300).unwrap();
        e.set_state("ActivitySensor", "isThereUserActivity", "true")
            .unwrap();
        e.advance(310).unwrap();
        e.set_state("ActivitySensor", "isThereUserActivity", "false")
            .unwrap();
        e.advance(909).unwrap();
        assert!(e.trace().is_empty());
        e.advance(910).unwrap();
        assert_eq!(fired(&e), vec![(910, "TV-switch-off".to_string())]);
    }

    #[test]
    fn timer_sequence() {
        let mut e = engine();
        e.deploy(&rule(
            None,
            &[(
                &["TV-switch-on-event"],
                &[
                    "air conditioner-switch-on",
                    "timer-wait-10mins",
                    "air conditioner-switch-off",
                ],
            )],
        ))
        .unwrap();
        e.advance(5).unwrap();
        e.inject("tv", "switch", "on").unwrap();
        e.advance(2000).unwrap();
        assert_eq!(
            fired(&e),
            vec![
                (5, "air conditioner-switch-on".into()),
                (605, "air conditioner-switch-off".into())
            ]
        );
        assert_eq!(e.actuated()[0].value, "off");
    }

    #[test]
    fn branch_rule() {
        let mut e = engine();
        e.deploy(&rule(
            None,
            &[
                (
                    &["ActivitySensor-userActivity-watching TV-state"],
                    &["ceiling light-switch-on"],
                ),
                (
                    &[
                        "ActivitySensor-userActivity-watching TV-state",
                        "environment sensor-isRaining-true-state",
                    ],
                    &["ceiling light-lightColor-warm"],
                ),
            ],
        ))
        .unwrap();
        e.set_state("environment sensor", "isRaining", "true")
            .unwrap();
        e.advance(10).unwrap();
        e.set_state("ActivitySensor", "userActivity", "watching TV")
            .unwrap();
        assert_eq!(
            fired(&e),
            vec![
                (10, "ceiling light-switch-on".into()),
                (10, "ceiling light-lightColor-warm".into())
            ]
        );
    }

    #[test]
    fn event_needs_state_and_does_not_chain() {
        let mut e = engine();
        e.deploy(&rule(
            None,
            &[(
                &[
                    "door sensor-doorState-open-event",
                    "Clock-dayPeriod-night-state",
                ],
                &["TV-switch-on"],
            )],
        ))
        .unwrap();
        e.deploy(&rule(
            None,
            &[(&["TV-switch-on-event"], &["fan-switch-on"])],
        ))
        .unwrap();
        e.inject("door sensor", "doorState", "open").unwrap();
        assert!(e.trace().is_empty());
        e.set_state("Clock", "dayPeriod", "night").unwrap();
        assert!(e.trace().is_empty());
        e.inject("door sensor", "doorState", "open").unwrap();
        assert_eq!(fired(&e), vec![(0, "TV-switch-on".into())]);
    }

    #[test]
    fn named_rule_runs_by_voice_and_replaces() {
        let mut e = engine();
        let movie = rule(
            Some("movie mode"),
            &[(
                &["VoiceAssistant-ruleName-movie mode-event"],
                &["curtains-curtainPosition-closed"],
            )],
        );
        let Deployment::Deployed { id, replaced: None } = e.deploy(&movie).unwrap() else {
            panic!()
        };
        e.inject("VoiceAssistant", "ruleName", "Movie Mode")
            .unwrap();
        assert_eq!(e.trace().len(), 1);
        let Deployment::Deployed { replaced, .. } = e.deploy(&movie).unwrap() else {
            panic!()
        };
        assert_eq!(replaced, Some(id));
        assert_eq!(e.rules().len(), 1);
        let mut del = movie.clone();
        del.operation = Operation::Delete;
        del.ta_pairs.clear();
        assert!(matches!(
            e.deploy(&del).unwrap(),
            Deployment::Withdrawn { .. }
        ));
        assert!(e.rules().is_empty());
    }

    #[test]
    fn withdraw_cancels_pending_steps() {
        let mut e = engine();
        let Deployment::Deployed { id, .. } = e
            .deploy(&rule(
                None,
                &[(
                    &["TV-switch-on-event"],
                    &["timer-wait-1min", "fan-switch-on"],
                )],
            ))
            .unwrap()
        else {
            panic!()
        };
        e.inject("TV", "switch", "on").unwrap();
        e.withdraw(id).unwrap();
        e.advance(120).unwrap();
        assert!(e.trace().is_empty());
    }

    #[test]
    fn nearest_light_follows_the_user() {
        let mut e = engine();
        e.deploy(&rule(
            None,
            &[(
                &["ActivitySensor-userPosture-sitting-event"],
                &["@nearest(light, user)-switch-on"],
            )],
        ))
        .unwrap();
        e.set_state("ActivitySensor", "userPosition", "sofa")
            .unwrap();
        e.inject("ActivitySensor", "userPosture", "sitting")
            .unwrap();
        e.set_state("ActivitySensor", "userPosition", "desk")
            .unwrap();
        e.inject("ActivitySensor", "userPosture", "sitting")
            .unwrap();
        assert_eq!(
            fired(&e),
            vec![
                (0, "sofa light-switch-on".into()),
                (0, "desk light-switch-on".into())
            ]
        );
    }

    #[test]
    fn rejects_infeasible_and_bad_inputs() {
        let mut e = engine();
        let bad = rule(
            None,
            &[(&["ActivitySensor-UserEnter-true-event"], &["TV-switch-on"])],
        );
        assert!(matches!(e.deploy(&bad), Err(EngineError::Infeasible(errs)) if !errs.is_empty()));
        assert!(matches!(
            e.inject("TV", "volumeLevel", "3"),
            Err(EngineError::UnknownInput { .. })
        ));
        assert!(matches!(
            e.inject("TV", "switch", "blue"),
            Err(EngineError::BadValue { .. })
        ));
        e.advance(10).unwrap();
        assert!(matches!(
            e.advance(5),
            Err(EngineError::TimeTravel {
                now: 10,
                requested: 5
            })
        ));
    }

    #[test]
    fn state_pair_fires_once_per_edge_and_at_deploy() {
        let mut e = engine();
        e.set_state("environment sensor", "currentTemperature", "30")
            .unwrap();
        e.deploy(&rule(
            None,
            &[(
                &["environment sensor-currentTemperature->28-state"],
                &["air conditioner-switch-on"],
            )],
        ))
        .unwrap();
        e.set_state("environment sensor", "currentTemperature", "31")
            .unwrap();
        e.set_state("environment sensor", "currentTemperature", "20")
            .unwrap();
        e.set_state("environment sensor", "currentTemperature", "29")
            .unwrap();
        assert_eq!(e.trace().len(), 2);
    }

    #[test]
    fn trace_exports_json_lines() {
        let mut e = engine();
        e.deploy(&rule(
            Some("x"),
            &[(&["TV-switch-on-event"], &["fan-switch-on"])],
        ))
        .unwrap();
        e.inject("TV", "switch", "on").unwrap();
        assert_eq!(
            e.export_trace(),
            "{\"time\":0,\"rule\":1,\"rule_name\":\"x\",\"pair\":0,\"step\":0,\"target\":\"fan\",\"interface\":\"switch\",\"parameter\":\"on\"}\n"
        );
    }
}
