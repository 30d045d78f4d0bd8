//! Brute-force reference interpreter: steps virtual time one second at a
//! time and recomputes every condition from the full input history.
//! Also generates random rule/trace instances over a small home.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashMap;

use awareauto_core::engine::{InputKind, SimEvent};
use awareauto_core::model::{
    canonicalize, Duration, GroundedAction, GroundedRule, GroundedTrigger, Operation, TaPair,
    TriggerMode,
};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fire {
    pub time: u64,
    pub rule: u64,
    pub pair: usize,
    pub step: usize,
    pub target: String,
    pub interface: String,
    pub parameter: String,
}

fn holds(condition: &str, value: &str) -> bool {
    let c = condition.trim();
    let (op, lit) = ["!=", "<=", ">=", "=", "<", ">"]
        .iter()
        .find_map(|op| c.strip_prefix(op).map(|rest| (*op, rest.trim())))
        .unwrap_or(("=", c));
    let nums = (lit.parse::<f64>(), value.trim().parse::<f64>());
    if let (Ok(l), Ok(v)) = nums {
        return match op {
            "=" => v == l,
            "!=" => v != l,
            "<" => v < l,
            "<=" => v <= l,
            ">" => v > l,
            _ => v >= l,
        };
    }
    let eq = lit.to_lowercase() == value.trim().to_lowercase();
    match op {
        "=" => eq,
        "!=" => !eq,
        _ => false,
    }
}

fn seconds(text: &str) -> u64 {
    let t = text.trim();
    for (suffix, mult) in [("mins", 60), ("min", 60), ("h", 3600), ("s", 1)] {
        if let Some(n) = t.strip_suffix(suffix) {
            return n.trim().parse::<u64>().expect("duration number") * mult;
        }
    }
    panic!("bad duration {t}")
}

fn key(target: &str, interface: &str) -> (String, String) {
    (target.to_lowercase(), interface.to_lowercase())
}

struct Interp<'a> {
    rules: &'a [GroundedRule],
    history: HashMap<(String, String), Vec<(u64, String)>>,
    armed: Vec<Vec<bool>>,
    pending: Vec<(u64, usize, usize, usize, u64)>,
    seq: u64,
    out: Vec<Fire>,
}

impl Interp<'_> {
    fn state_ok(&self, t: &GroundedTrigger, now: u64) -> bool {
        let Some(h) = self.history.get(&key(&t.target, &t.interface)) else {
            return false;
        };
        let mut since = None;
        for (at, v) in h.iter().rev() {
            if holds(&t.condition, v) {
                since = Some(*at);
            } else {
                break;
            }
        }
        since.is_some_and(|s| now - s >= t.delay.as_secs())
    }

    fn all_state(pair: &TaPair) -> bool {
        pair.triggers.iter().all(|t| t.mode == TriggerMode::State)
    }

    fn eval_state_pair(&mut self, r: usize, p: usize, now: u64) -> bool {
        let pair = &self.rules[r].ta_pairs[p];
        let ok = pair.triggers.iter().all(|t| self.state_ok(t, now));
        if !ok {
            self.armed[r][p] = true;
            false
        } else if self.armed[r][p] {
            self.armed[r][p] = false;
            true
        } else {
            false
        }
    }

    fn run(&mut self, r: usize, p: usize, from: usize, now: u64) {
        let actions: &[GroundedAction] = &self.rules[r].ta_pairs[p].actions;
        for (s, a) in actions.iter().enumerate().skip(from) {
            if a.target.eq_ignore_ascii_case("timer") {
                self.seq += 1;
                self.pending
                    .push((now + seconds(&a.parameter), r, p, s + 1, self.seq));
                return;
            }
            self.out.push(Fire {
                time: now,
                rule: r as u64 + 1,
                pair: p,
                step: s,
                target: a.target.clone(),
                interface: a.interface.clone(),
                parameter: a.parameter.clone(),
            });
        }
    }
}

/// Rules are deployed in order at time 0; inputs must be sorted by time.
pub fn run_oracle(rules: &[GroundedRule], events: &[SimEvent], horizon: u64) -> Vec<Fire> {
    let mut it = Interp {
        rules,
        history: HashMap::new(),
        armed: rules.iter().map(|r| vec![true; r.ta_pairs.len()]).collect(),
        pending: Vec::new(),
        seq: 0,
        out: Vec::new(),
    };
    for now in 0..=horizon {
        let mut items = Vec::new();
        for r in 0..rules.len() {
            for p in 0..rules[r].ta_pairs.len() {
                if Interp::all_state(&rules[r].ta_pairs[p]) && it.eval_state_pair(r, p, now) {
                    items.push((r, p, 0usize, 0u64));
                }
            }
        }
        let (due, rest): (Vec<_>, Vec<_>) = it.pending.iter().partition(|x| x.0 == now);
        it.pending = rest;
        items.extend(due.into_iter().map(|(_, r, p, s, q)| (r, p, s, q)));
        items.sort();
        for (r, p, s, _) in items {
            it.run(r, p, s, now);
        }

        let mut events_now: Vec<(String, String, String)> = Vec::new();
        for e in events.iter().filter(|e| e.time == now) {
            it.history
                .entry(key(&e.target, &e.interface))
                .or_default()
                .push((now, e.value.clone()));
            let is_event = e.kind == InputKind::Event;
            if is_event {
                events_now.push((
                    e.target.to_lowercase(),
                    e.interface.to_lowercase(),
                    e.value.clone(),
                ));
            }
            for r in 0..rules.len() {
                for p in 0..rules[r].ta_pairs.len() {
                    let pair = &rules[r].ta_pairs[p];
                    let fire = if Interp::all_state(pair) {
                        it.eval_state_pair(r, p, now)
                    } else {
                        is_event
                            && pair.triggers.iter().any(|t| {
                                t.mode == TriggerMode::Event
                                    && key(&t.target, &t.interface) == key(&e.target, &e.interface)
                                    && holds(&t.condition, &e.value)
                            })
                            && pair.triggers.iter().all(|t| match t.mode {
                                TriggerMode::Event => events_now.iter().any(|(et, ei, ev)| {
                                    (et.clone(), ei.clone()) == key(&t.target, &t.interface)
                                        && holds(&t.condition, ev)
                                }),
                                TriggerMode::State => it.state_ok(t, now),
                            })
                    };
                    if fire {
                        it.run(r, p, 0, now);
                    }
                }
            }
        }
    }
    it.out
}

pub const CATALOG: &str = r#"{
  "rooms": ["hall"],
  "devices": [
    {"target": "door", "room": "hall", "position": "entrance", "interfaces": [
      {"name": "state", "kind": "query", "returns": {"type": "enum", "values": ["open", "closed"]}, "description": "door state"}]},
    {"target": "motion", "room": "hall", "position": "ceiling", "interfaces": [
      {"name": "present", "kind": "query", "returns": {"type": "enum", "values": ["true", "false"]}, "description": "someone there"}]},
    {"target": "thermo", "room": "hall", "position": "wall", "interfaces": [
      {"name": "temp", "kind": "query", "returns": {"type": "range", "min": 0, "max": 40}, "description": "temperature"}]},
    {"target": "lamp", "room": "hall", "position": "corner", "interfaces": [
      {"name": "power", "kind": "operation", "params": [{"name": "state", "domain": {"type": "enum", "values": ["on", "off"]}}], "description": "switch the lamp"}]},
    {"target": "fan", "room": "hall", "position": "ceiling", "interfaces": [
      {"name": "speed", "kind": "operation", "params": [{"name": "level", "domain": {"type": "range", "min": 0, "max": 3}}], "description": "fan speed"}]}
  ]
}"#;

/// Limits of a random instance.
pub const MAX_TRIGGERS: usize = 3;
pub const MAX_STEPS: usize = 4;
pub const MAX_DELAY_S: u64 = 900;
pub const MAX_EVENTS: usize = 20;
pub const MAX_HORIZON_S: u64 = 3600;

#[derive(Debug, Clone)]
pub struct Instance {
    pub rules: Vec<GroundedRule>,
    pub events: Vec<SimEvent>,
    pub horizon: u64,
}

fn random_input(rng: &mut StdRng) -> (&'static str, &'static str, String) {
    match rng.gen_range(0..3) {
        0 => (
            "door",
            "state",
            ["open", "closed"].choose(rng).unwrap().to_string(),
        ),
        1 => (
            "motion",
            "present",
            ["true", "false"].choose(rng).unwrap().to_string(),
        ),
        _ => ("thermo", "temp", rng.gen_range(15..=30).to_string()),
    }
}

fn random_delay(rng: &mut StdRng, horizon: u64) -> u64 {
    match rng.gen_range(0..4) {
        0 => 0,
        1 => rng.gen_range(1..=MAX_DELAY_S.min(horizon.max(1))),
        2 => 60 * rng.gen_range(1..=15),
        _ => rng.gen_range(1..=30),
    }
}

fn random_trigger(rng: &mut StdRng, horizon: u64) -> GroundedTrigger {
    let (target, interface, value) = random_input(rng);
    let condition = if target == "thermo" {
        let op = ["", "=", "!=", "<", "<=", ">", ">="].choose(rng).unwrap();
        format!("{op}{value}")
    } else if rng.gen_bool(0.2) {
        format!("!={value}")
    } else {
        value
    };
    let mode = if rng.gen_bool(0.5) {
        TriggerMode::Event
    } else {
        TriggerMode::State
    };
    let delay = if mode == TriggerMode::State {
        random_delay(rng, horizon)
    } else {
        0
    };
    GroundedTrigger {
        target: target.into(),
        interface: interface.into(),
        condition,
        mode,
        delay: Duration::from_secs(delay),
    }
}

fn random_action(rng: &mut StdRng, horizon: u64) -> GroundedAction {
    let (target, interface, parameter) = match rng.gen_range(0..3) {
        0 => (
            "lamp",
            "power",
            ["on", "off"].choose(rng).unwrap().to_string(),
        ),
        1 => ("fan", "speed", rng.gen_range(0..=3).to_string()),
        _ => (
            "timer",
            "wait",
            Duration::from_secs(random_delay(rng, horizon).max(1)).to_string(),
        ),
    };
    GroundedAction {
        target: target.into(),
        interface: interface.into(),
        parameter,
    }
}

/// A random instance within the limits above; rules are canonical.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = StdRng::seed_from_u64(seed);
    let horizon = rng.gen_range(60..=MAX_HORIZON_S);
    let rules = (0..rng.gen_range(1..=3))
        .map(|_| {
            let pairs = (0..rng.gen_range(1..=2))
                .map(|_| TaPair {
                    triggers: (0..rng.gen_range(1..=MAX_TRIGGERS))
                        .map(|_| random_trigger(&mut rng, horizon))
                        .collect(),
                    actions: (0..rng.gen_range(1..=MAX_STEPS))
                        .map(|_| random_action(&mut rng, horizon))
                        .collect(),
                })
                .collect();
            canonicalize(&GroundedRule {
                operation: Operation::Create,
                name: None,
                feasible: true,
                ta_pairs: pairs,
                errors: vec![],
            })
        })
        .collect();
    let mut events: Vec<SimEvent> = (0..rng.gen_range(0..=MAX_EVENTS))
        .map(|_| {
            let (target, interface, value) = random_input(&mut rng);
            // cluster some inputs on the same instant
            let time = if rng.gen_bool(0.3) {
                rng.gen_range(0..=horizon / 60) * 60
            } else {
                rng.gen_range(0..=horizon)
            };
            SimEvent {
                time,
                target: target.into(),
                interface: interface.into(),
                value,
                kind: if rng.gen_bool(0.5) {
                    InputKind::Event
                } else {
                    InputKind::State
                },
            }
        })
        .collect();
    events.sort_by_key(|e| e.time);
    Instance {
        rules,
        events,
        horizon,
    }
}
