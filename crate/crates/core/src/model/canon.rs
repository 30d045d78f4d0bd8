use super::condition::Condition;
use super::duration::Duration;
use super::grounded::{
    GroundedAction, GroundedRule, GroundedTrigger, GroundingError, TaPair, TIMER_TARGET,
};

fn norm(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn trigger_key(t: &GroundedTrigger) -> (&str, &str, &str, super::TriggerMode, Duration) {
    (&t.target, &t.interface, &t.condition, t.mode, t.delay)
}

fn canonical_trigger(t: &GroundedTrigger) -> GroundedTrigger {
    GroundedTrigger {
        target: norm(&t.target),
        interface: norm(&t.interface),
        condition: Condition::parse(&norm(&t.condition)).to_string(),
        mode: t.mode,
        delay: t.delay,
    }
}

fn canonical_action(a: &GroundedAction) -> GroundedAction {
    let target = norm(&a.target);
    let mut parameter = norm(&a.parameter);
    if target == TIMER_TARGET {
        if let Ok(d) = parameter.parse::<Duration>() {
            parameter = d.to_string();
        }
    }
    GroundedAction {
        target,
        interface: norm(&a.interface),
        parameter,
    }
}

/// Normal form used for equivalence: names lowercased and whitespace
/// collapsed, triggers sorted inside each pair, pairs sorted by their
/// trigger lists. Action order is kept.
pub fn canonicalize(rule: &GroundedRule) -> GroundedRule {
    let mut pairs: Vec<TaPair> = rule
        .ta_pairs
        .iter()
        .map(|p| {
            let mut triggers: Vec<_> = p.triggers.iter().map(canonical_trigger).collect();
            triggers.sort_by(|a, b| trigger_key(a).cmp(&trigger_key(b)));
            TaPair {
                triggers,
                actions: p.actions.iter().map(canonical_action).collect(),
            }
        })
        .collect();
    pairs.sort_by(|a, b| {
        let ka: Vec<_> = a.triggers.iter().map(trigger_key).collect();
        let kb: Vec<_> = b.triggers.iter().map(trigger_key).collect();
        ka.cmp(&kb).then_with(|| {
            let aa: Vec<_> = a
                .actions
                .iter()
                .map(|x| (&x.target, &x.interface, &x.parameter))
                .collect();
            let ab: Vec<_> = b
                .actions
                .iter()
                .map(|x| (&x.target, &x.interface, &x.parameter))
                .collect();
            aa.cmp(&ab)
        })
    });
    let mut errors: Vec<GroundingError> = rule
        .errors
        .iter()
        .map(|e| GroundingError {
            code: e.code,
            target: e.target.as_deref().map(norm),
            interface: e.interface.as_deref().map(norm),
            message: e.message.trim().to_string(),
        })
        .collect();
    errors.sort_by(|a, b| {
        (a.code, &a.target, &a.interface, &a.message).cmp(&(
            b.code,
            &b.target,
            &b.interface,
            &b.message,
        ))
    });
    GroundedRule {
        operation: rule.operation,
        name: rule.name.as_deref().map(norm),
        feasible: rule.feasible,
        ta_pairs: pairs,
        errors,
    }
}

/// Structural equality of canonical forms. Infeasible rules compare by
/// their error-code sets instead of their pairs.
pub fn rules_equivalent(a: &GroundedRule, b: &GroundedRule) -> bool {
    let a = canonicalize(a);
    let b = canonicalize(b);
    if a.operation != b.operation || a.name != b.name || a.feasible != b.feasible {
        return false;
    }
    if a.feasible {
        a.ta_pairs == b.ta_pairs
    } else {
        a.error_codes() == b.error_codes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_action_tuple, parse_trigger_tuple, ErrorCode, Operation};

    fn pair(triggers: &[&str], actions: &[&str]) -> TaPair {
        TaPair {
            triggers: triggers
                .iter()
                .map(|t| parse_trigger_tuple(t).unwrap())
                .collect(),
            actions: actions
                .iter()
                .map(|a| parse_action_tuple(a).unwrap())
                .collect(),
        }
    }

    fn rule(pairs: Vec<TaPair>) -> GroundedRule {
        GroundedRule {
            operation: Operation::Create,
            name: Some("Movie Mode".into()),
            feasible: true,
            ta_pairs: pairs,
            errors: vec![],
        }
    }

    #[test]
    fn sorts_triggers_within_pair() {
        let r = rule(vec![pair(
            &["TV-switch-on-event", "Clock-period-evening-state"],
            &["ceiling light-switch-on"],
        )]);
        let c = canonicalize(&r);
        assert_eq!(c.ta_pairs[0].triggers[0].target, "clock");
        assert_eq!(c.ta_pairs[0].triggers[1].target, "tv");
        assert_eq!(c.name.as_deref(), Some("movie mode"));
    }

    #[test]
    fn reorderings_are_equivalent() {
        let a = rule(vec![
            pair(
                &["TV-switch-on-event", "Clock-period-evening-state"],
                &["ceiling light-switch-on"],
            ),
            pair(
                &["environment sensor-isRaining-true-state"],
                &["ceiling light-color-warm"],
            ),
        ]);
        let b = rule(vec![
            pair(
                &["environment sensor-isRaining-true-state"],
                &["ceiling light-color-warm"],
            ),
            pair(
                &["Clock-period-evening-state", "TV-switch-on-event"],
                &["ceiling light-switch-on"],
            ),
        ]);
        assert_eq!(canonicalize(&a), canonicalize(&b));
        assert!(rules_equivalent(&a, &b));
        assert!(rules_equivalent(&a, &a));
    }

    #[test]
    fn dropped_action_is_not_equivalent() {
        let a = rule(vec![pair(
            &["TV-switch-on-event"],
            &["ceiling light-switch-on", "curtains-position-closed"],
        )]);
        let b = rule(vec![pair(
            &["TV-switch-on-event"],
            &["ceiling light-switch-on"],
        )]);
        assert!(!rules_equivalent(&a, &b));
    }

    #[test]
    fn action_order_matters() {
        let a = rule(vec![pair(
            &["TV-switch-on-event"],
            &["ceiling light-switch-on", "curtains-position-closed"],
        )]);
        let b = rule(vec![pair(
            &["TV-switch-on-event"],
            &["curtains-position-closed", "ceiling light-switch-on"],
        )]);
        assert!(!rules_equivalent(&a, &b));
    }

    #[test]
    fn cosmetic_differences_vanish() {
        let a = rule(vec![pair(
            &["environment sensor-currentTemperature->= 28-state"],
            &["timer-wait-600s"],
        )]);
        let b = rule(vec![pair(
            &["Environment  Sensor-currentTemperature->=28-state"],
            &["timer-wait-10mins"],
        )]);
        assert!(rules_equivalent(&a, &b));
    }

    #[test]
    fn infeasible_rules_compare_by_codes() {
        let mut a = rule(vec![]);
        a.feasible = false;
        a.errors = vec![GroundingError::unknown_interface(
            "environment sensor",
            "UserEnter",
            "no UserEnter",
        )];
        let mut b = a.clone();
        b.errors[0].message = "different wording".into();
        assert!(rules_equivalent(&a, &b));
        b.errors[0].code = ErrorCode::UnknownTarget;
        assert!(!rules_equivalent(&a, &b));
    }

    #[test]
    fn idempotent() {
        let a = rule(vec![
            pair(
                &["TV-switch-on-event", "Clock-period-evening-state"],
                &["ceiling light-switch-on"],
            ),
            pair(
                &["environment sensor-isRaining-true-state"],
                &["ceiling light-color-warm"],
            ),
        ]);
        let once = canonicalize(&a);
        assert_eq!(canonicalize(&once), once);
    }
}
