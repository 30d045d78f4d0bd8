//! Stage two: ground a natural-language rule into TA-pairs over the device
//! catalog, then check the result against the catalog.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::context::{
    render_scenario_text, DeviceCatalog, Domain, InterfaceKind, LookupMiss, NearestTarget,
    ScenarioDetail,
};
use crate::llm::{CompletionRequest, LlmBackend, LlmError};
use crate::model::{
    serialize_rule_text, Condition, Duration, ErrorCode, GroundedAction, GroundedRule,
    GroundedTrigger, GroundingError, NlRule, Operation, TriggerMode, NAME_TRIGGER,
    RULE_NAME_INTERFACE, TIMER_TARGET, VOICE_TARGET, WAIT_INTERFACE,
};
use crate::prompts::GroundingPrompts;

/// Result of a grounding call, already validated.
#[derive(Debug, Clone)]
pub struct Grounding {
    pub rule: GroundedRule,
    /// Last model reply; empty when no call was made.
    pub raw: String,
    pub repaired: bool,
}

fn render_returns(catalog: &DeviceCatalog) -> String {
    let mut out = String::new();
    for device in &catalog.devices {
        for iface in device
            .interfaces
            .iter()
            .filter(|i| i.kind == InterfaceKind::Query)
        {
            if let Some(domain) = &iface.returns {
                let _ = writeln!(out, "- {} {}: {}", device.target, iface.name, domain);
            }
        }
    }
    if out.is_empty() {
        out.push_str("(none)\n");
    }
    out
}

impl GroundingPrompts {
    pub fn build(&self, catalog: &DeviceCatalog) -> String {
        let scenario = render_scenario_text(catalog, None, ScenarioDetail::LayoutAndInterfaces);
        self.template
            .replace("{{format}}", &self.format)
            .replace("{{details}}", &self.details)
            .replace("{{scenario}}", &scenario)
            .replace("{{returns}}", &render_returns(catalog))
            .replace("{{example}}", &self.example)
    }
}

/// Builds the grounding system prompt from the bundled templates.
pub fn build_grounding_prompt(catalog: &DeviceCatalog) -> String {
    GroundingPrompts::bundled().build(catalog)
}

pub fn grounding_user_message(rule: &NlRule) -> String {
    format!("Natural-language rule:\n{}JSON:", serialize_rule_text(rule))
}

/// The outermost `{ ... }` span of a reply.
pub fn extract_json(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

fn parse_reply(raw: &str) -> Result<GroundedRule, String> {
    let json = extract_json(raw).ok_or_else(|| "no JSON object in the reply".to_string())?;
    GroundedRule::from_json(json).map_err(|e| e.to_string())
}

fn name_trigger(name: &str) -> GroundedTrigger {
    GroundedTrigger {
        target: VOICE_TARGET.to_string(),
        interface: RULE_NAME_INTERFACE.to_string(),
        condition: name.to_string(),
        mode: TriggerMode::Event,
        delay: Duration::ZERO,
    }
}

fn is_name_trigger(t: &GroundedTrigger) -> bool {
    t.target.eq_ignore_ascii_case(VOICE_TARGET)
        && t.interface.eq_ignore_ascii_case(RULE_NAME_INTERFACE)
}

/// Takes operation and name from the natural-language rule and makes sure
/// groups started by the rule name carry the voice trigger.
fn align_with(nl: &NlRule, mut rule: GroundedRule) -> GroundedRule {
    rule.operation = nl.operation;
    rule.name = nl.name.clone();
    if let Some(name) = &nl.name {
        let aligned = rule.ta_pairs.len() == nl.groups.len();
        for (i, pair) in rule.ta_pairs.iter_mut().enumerate() {
            let wants_name = pair.triggers.is_empty()
                || (aligned && nl.groups[i].trigger_ids.contains(&NAME_TRIGGER));
            if wants_name && !pair.triggers.iter().any(is_name_trigger) {
                pair.triggers.insert(0, name_trigger(name));
            }
        }
    }
    rule
}

fn malformed_rule(nl: &NlRule, message: String) -> GroundedRule {
    GroundedRule {
        operation: nl.operation,
        name: nl.name.clone(),
        feasible: false,
        ta_pairs: Vec::new(),
        errors: vec![GroundingError::malformed(message)],
    }
}

/// Grounds `nl` with the model and validates the result. DELETE needs no
/// model call. An unreadable reply gets one repair round; if that fails too
/// the rule comes back infeasible with `MALFORMED_OUTPUT`.
pub fn ground_rule(
    backend: &dyn LlmBackend,
    system_prompt: &str,
    catalog: &DeviceCatalog,
    nl: &NlRule,
) -> Result<Grounding, LlmError> {
    if nl.operation == Operation::Delete {
        let rule = GroundedRule {
            operation: Operation::Delete,
            name: nl.name.clone(),
            feasible: true,
            ta_pairs: Vec::new(),
            errors: Vec::new(),
        };
        return Ok(Grounding {
            rule: validate_grounded(catalog, &rule),
            raw: String::new(),
            repaired: false,
        });
    }
    let user = grounding_user_message(nl);
    let raw = backend.complete(&CompletionRequest::new(system_prompt, user.as_str()))?;
    let (parsed, raw, repaired) = match parse_reply(&raw) {
        Ok(rule) => (Ok(rule), raw, false),
        Err(error) => {
            tracing::debug!(%error, "grounding output unreadable, asking for a repair");
            let retry = format!(
                "{user}\n\nYour previous reply was not a valid rule JSON object ({error}).\nPrevious reply:\n{raw}\nReply again with the corrected JSON object only."
            );
            let raw2 = backend.complete(&CompletionRequest::new(system_prompt, retry))?;
            (parse_reply(&raw2), raw2, true)
        }
    };
    let rule = match parsed {
        Ok(rule) => align_with(nl, rule),
        Err(error) => malformed_rule(
            nl,
            format!("the grounding output could not be read: {error}"),
        ),
    };
    Ok(Grounding {
        rule: validate_grounded(catalog, &rule),
        raw,
        repaired,
    })
}

fn check_condition(domain: &Domain, condition: &Condition) -> Result<(), String> {
    match domain {
        Domain::Enum { values } => {
            if condition.comparator.is_ordering() {
                return Err(format!(
                    "`{}` cannot be compared with {}",
                    condition.literal,
                    condition.comparator.symbol()
                ));
            }
            if domain.enum_value(&condition.literal).is_none() {
                return Err(format!(
                    "`{}` is not one of {}",
                    condition.literal,
                    values.join(", ")
                ));
            }
        }
        Domain::Range { min, max, .. } => match condition.numeric_literal() {
            Some(v) if v >= *min && v <= *max => {}
            Some(v) => return Err(format!("{v} is outside [{min}, {max}]")),
            None => return Err(format!("`{}` is not a number", condition.literal)),
        },
        Domain::Text => {
            if condition.comparator.is_ordering() || condition.literal.trim().is_empty() {
                return Err("text values accept only = or != with a non-empty literal".into());
            }
        }
    }
    Ok(())
}

struct Checker<'a> {
    catalog: &'a DeviceCatalog,
    errors: Vec<GroundingError>,
}

impl Checker<'_> {
    fn miss(&mut self, miss: LookupMiss, target: &str, interface: &str, kind: InterfaceKind) {
        self.errors.push(match miss {
            LookupMiss::UnknownTarget => GroundingError::unknown_target(
                target,
                format!("there is no device called `{target}` in this home"),
            ),
            LookupMiss::UnknownInterface => GroundingError::unknown_interface(
                target,
                interface,
                format!("`{target}` has no {kind} interface `{interface}`"),
            ),
            LookupMiss::WrongKind => {
                let other = match kind {
                    InterfaceKind::Query => "can only be operated, not observed",
                    InterfaceKind::Operation => "can only be observed, not operated",
                };
                GroundingError::unsupported(
                    Some(target),
                    Some(interface),
                    format!("`{interface}` of `{target}` {other}"),
                )
            }
        });
    }

    /// Resolves the interface for a concrete or `@nearest` target; for the
    /// latter every candidate must offer it and the first one is returned.
    fn interface(
        &mut self,
        target: &str,
        interface: &str,
        kind: InterfaceKind,
    ) -> Option<crate::context::DeviceInterface> {
        if let Some(nearest) = NearestTarget::parse(target) {
            let candidates = self.catalog.devices_of_kind(&nearest.kind);
            if candidates.is_empty() {
                self.errors.push(GroundingError::unknown_target(
                    target,
                    format!("there is no {} in this home", nearest.kind),
                ));
                return None;
            }
            let mut found = None;
            for device in candidates {
                match self
                    .catalog
                    .lookup_interface(&device.target, interface, kind)
                {
                    Ok((_, iface)) => {
                        found.get_or_insert_with(|| iface.clone());
                    }
                    Err(_) => {
                        self.errors.push(GroundingError::unsupported(
                            Some(target),
                            Some(interface),
                            format!("`{}` has no {kind} interface `{interface}`", device.target),
                        ));
                        return None;
                    }
                }
            }
            return found;
        }
        match self.catalog.lookup_interface(target, interface, kind) {
            Ok((_, iface)) => Some(iface.clone()),
            Err(miss) => {
                self.miss(miss, target, interface, kind);
                None
            }
        }
    }

    fn trigger(&mut self, t: &GroundedTrigger) {
        if t.mode == TriggerMode::Event && !t.delay.is_zero() {
            self.errors.push(GroundingError::bad_condition(
                &t.target,
                &t.interface,
                "an event trigger cannot have a delay",
            ));
        }
        let Some(iface) = self.interface(&t.target, &t.interface, InterfaceKind::Query) else {
            return;
        };
        let Some(domain) = &iface.returns else {
            self.errors.push(GroundingError::unsupported(
                Some(&t.target),
                Some(&t.interface),
                "the query returns nothing to compare",
            ));
            return;
        };
        if let Err(why) = check_condition(domain, &Condition::parse(&t.condition)) {
            self.errors
                .push(GroundingError::bad_condition(&t.target, &t.interface, why));
        }
    }

    fn action(&mut self, a: &GroundedAction) {
        if a.target.eq_ignore_ascii_case(TIMER_TARGET) {
            if !a.interface.eq_ignore_ascii_case(WAIT_INTERFACE) {
                self.errors.push(GroundingError::unknown_interface(
                    &a.target,
                    &a.interface,
                    format!("the timer only supports `{WAIT_INTERFACE}`"),
                ));
            } else if !a
                .parameter
                .trim()
                .parse::<Duration>()
                .is_ok_and(|d| !d.is_zero())
            {
                self.errors.push(GroundingError::bad_parameter(
                    &a.target,
                    &a.interface,
                    format!("`{}` is not a positive duration", a.parameter),
                ));
            }
            return;
        }
        let Some(iface) = self.interface(&a.target, &a.interface, InterfaceKind::Operation) else {
            return;
        };
        let values: Vec<&str> = if iface.params.len() > 1 {
            a.parameter.split(',').map(str::trim).collect()
        } else {
            vec![a.parameter.trim()]
        };
        if iface.params.is_empty() {
            return;
        }
        if values.len() != iface.params.len() {
            self.errors.push(GroundingError::bad_parameter(
                &a.target,
                &a.interface,
                format!("expected {} comma-separated values", iface.params.len()),
            ));
            return;
        }
        for (param, value) in iface.params.iter().zip(values) {
            if !param.domain.admits(value) {
                self.errors.push(GroundingError::bad_parameter(
                    &a.target,
                    &a.interface,
                    format!(
                        "`{value}` is not a valid {} (allowed: {})",
                        param.name, param.domain
                    ),
                ));
            }
        }
    }
}

fn error_key(e: &GroundingError) -> (ErrorCode, Option<String>, Option<String>) {
    (
        e.code,
        e.target.as_deref().map(str::to_lowercase),
        e.interface.as_deref().map(str::to_lowercase),
    )
}

/// Checks every trigger and action against the catalog. Errors the model
/// reported are kept, duplicates are dropped and `feasible` is set to
/// whether any error remains. Applying it twice changes nothing.
pub fn validate_grounded(catalog: &DeviceCatalog, rule: &GroundedRule) -> GroundedRule {
    let mut checker = Checker {
        catalog,
        errors: rule.errors.clone(),
    };
    let mut out = rule.clone();
    if rule.operation == Operation::Delete {
        out.ta_pairs.clear();
    } else if rule.ta_pairs.is_empty() {
        checker.errors.push(GroundingError::malformed(
            "the rule has no trigger-action pairs",
        ));
    }
    for (i, pair) in out.ta_pairs.iter().enumerate() {
        if pair.triggers.is_empty() || pair.actions.is_empty() {
            checker.errors.push(GroundingError::malformed(format!(
                "trigger-action pair {} needs at least one trigger and one action",
                i + 1
            )));
        }
        pair.triggers.iter().for_each(|t| checker.trigger(t));
        pair.actions.iter().for_each(|a| checker.action(a));
    }
    if !rule.feasible && checker.errors.is_empty() {
        checker.errors.push(GroundingError::unsupported(
            None,
            None,
            "the rule was marked infeasible without a reason",
        ));
    }
    let mut seen = HashSet::new();
    out.errors = checker
        .errors
        .into_iter()
        .filter(|e| seen.insert(error_key(e)))
        .collect();
    out.feasible = out.errors.is_empty();
    out
}
