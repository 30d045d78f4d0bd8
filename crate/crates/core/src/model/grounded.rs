//! Grounding-stage rules: TA-pairs of trigger quadruples and action triples.
//!
//! The JSON form is authoritative. The hyphen-joined tuple strings
//! (`TV-switch-on-event`, `timer-wait-10mins`) are for display and for
//! reading the short forms back; targets may not contain `-`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use super::duration::Duration;
use super::nl::{Operation, TriggerMode};

pub const TIMER_TARGET: &str = "timer";
pub const WAIT_INTERFACE: &str = "wait";
pub const VOICE_TARGET: &str = "VoiceAssistant";
pub const RULE_NAME_INTERFACE: &str = "ruleName";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundedTrigger {
    pub target: String,
    pub interface: String,
    #[serde(deserialize_with = "string_like")]
    pub condition: String,
    pub mode: TriggerMode,
    #[serde(rename = "delay_s", default)]
    pub delay: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundedAction {
    pub target: String,
    pub interface: String,
    #[serde(deserialize_with = "string_like")]
    pub parameter: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaPair {
    pub triggers: Vec<GroundedTrigger>,
    pub actions: Vec<GroundedAction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    UnknownTarget,
    UnknownInterface,
    BadCondition,
    BadParameter,
    UnsupportedCapability,
    MalformedOutput,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownTarget => "UNKNOWN_TARGET",
            ErrorCode::UnknownInterface => "UNKNOWN_INTERFACE",
            ErrorCode::BadCondition => "BAD_CONDITION",
            ErrorCode::BadParameter => "BAD_PARAMETER",
            ErrorCode::UnsupportedCapability => "UNSUPPORTED_CAPABILITY",
            ErrorCode::MalformedOutput => "MALFORMED_OUTPUT",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A reason a rule cannot be deployed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundingError {
    pub code: ErrorCode,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub interface: Option<String>,
    pub message: String,
}

impl GroundingError {
    pub fn unknown_target(target: &str, message: impl Into<String>) -> Self {
        Self::with(ErrorCode::UnknownTarget, Some(target), None, message)
    }

    pub fn unknown_interface(target: &str, interface: &str, message: impl Into<String>) -> Self {
        Self::with(
            ErrorCode::UnknownInterface,
            Some(target),
            Some(interface),
            message,
        )
    }

    pub fn bad_condition(target: &str, interface: &str, message: impl Into<String>) -> Self {
        Self::with(
            ErrorCode::BadCondition,
            Some(target),
            Some(interface),
            message,
        )
    }

    pub fn bad_parameter(target: &str, interface: &str, message: impl Into<String>) -> Self {
        Self::with(
            ErrorCode::BadParameter,
            Some(target),
            Some(interface),
            message,
        )
    }

    pub fn unsupported(
        target: Option<&str>,
        interface: Option<&str>,
        message: impl Into<String>,
    ) -> Self {
        Self::with(ErrorCode::UnsupportedCapability, target, interface, message)
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::with(ErrorCode::MalformedOutput, None, None, message)
    }

    fn with(
        code: ErrorCode,
        target: Option<&str>,
        interface: Option<&str>,
        message: impl Into<String>,
    ) -> Self {
        let mut message = message.into();
        if message.trim().is_empty() {
            message = code.as_str().to_string();
        }
        GroundingError {
            code,
            target: target.map(str::to_string),
            interface: interface.map(str::to_string),
            message,
        }
    }

    /// Whether the optional fields required by the code are present.
    pub fn is_well_formed(&self) -> bool {
        let has_target = self.target.as_deref().is_some_and(|t| !t.is_empty());
        let has_interface = self.interface.as_deref().is_some_and(|i| !i.is_empty());
        !self.message.trim().is_empty()
            && match self.code {
                ErrorCode::UnknownTarget => has_target,
                ErrorCode::UnknownInterface | ErrorCode::BadCondition | ErrorCode::BadParameter => {
                    has_target && has_interface
                }
                ErrorCode::UnsupportedCapability | ErrorCode::MalformedOutput => true,
            }
    }
}

impl fmt::Display for GroundingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedRule {
    pub operation: Operation,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_true")]
    pub feasible: bool,
    #[serde(default)]
    pub ta_pairs: Vec<TaPair>,
    #[serde(default)]
    pub errors: Vec<GroundingError>,
}

fn default_true() -> bool {
    true
}

impl GroundedRule {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grounded rule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn error_codes(&self) -> std::collections::BTreeSet<ErrorCode> {
        self.errors.iter().map(|e| e.code).collect()
    }
}

/// Accepts JSON strings, numbers and booleans for literal fields.
fn string_like<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    use serde::de::Error;
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        other => Err(D::Error::custom(format!(
            "expected a string, number or boolean literal, got {other}"
        ))),
    }
}

impl fmt::Display for GroundedTrigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}-", self.target, self.interface, self.condition)?;
        match (self.mode, self.delay.is_zero()) {
            (TriggerMode::Event, _) => f.write_str("event"),
            (TriggerMode::State, true) => f.write_str("state"),
            (TriggerMode::State, false) => write!(f, "state({})", self.delay),
        }
    }
}

impl fmt::Display for GroundedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.target, self.interface, self.parameter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed tuple `{text}`: {reason}")]
pub struct TupleError {
    pub text: String,
    pub reason: &'static str,
}

fn tuple_err(text: &str, reason: &'static str) -> TupleError {
    TupleError {
        text: text.to_string(),
        reason,
    }
}

/// Parses `target-interface-condition-mode`. The condition may itself
/// contain hyphens; target and interface may not.
pub fn parse_trigger_tuple(display: &str) -> Result<GroundedTrigger, TupleError> {
    let parts: Vec<&str> = display.split('-').collect();
    if parts.len() < 4 {
        return Err(tuple_err(
            display,
            "expected target-interface-condition-mode",
        ));
    }
    let target = parts[0].trim();
    let interface = parts[1].trim();
    let mode_text = parts[parts.len() - 1].trim();
    let condition = parts[2..parts.len() - 1].join("-");
    if target.is_empty() {
        return Err(tuple_err(display, "empty target"));
    }
    if interface.is_empty() {
        return Err(tuple_err(display, "empty interface"));
    }
    if condition.trim().is_empty() {
        return Err(tuple_err(display, "empty condition"));
    }
    let (mode, delay) = match mode_text {
        "event" => (TriggerMode::Event, Duration::ZERO),
        "state" => (TriggerMode::State, Duration::ZERO),
        m => {
            let inner = m
                .strip_prefix("state(")
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| tuple_err(display, "mode must be event, state or state(<dur>)"))?;
            let delay = inner
                .parse::<Duration>()
                .map_err(|_| tuple_err(display, "bad state delay"))?;
            (TriggerMode::State, delay)
        }
    };
    Ok(GroundedTrigger {
        target: target.to_string(),
        interface: interface.to_string(),
        condition: condition.trim().to_string(),
        mode,
        delay,
    })
}

/// Parses `target-interface-parameter`.
pub fn parse_action_tuple(display: &str) -> Result<GroundedAction, TupleError> {
    let mut parts = display.splitn(3, '-');
    let (Some(target), Some(interface), Some(parameter)) =
        (parts.next(), parts.next(), parts.next())
    else {
        return Err(tuple_err(display, "expected target-interface-parameter"));
    };
    if target.trim().is_empty() {
        return Err(tuple_err(display, "empty target"));
    }
    if interface.trim().is_empty() {
        return Err(tuple_err(display, "empty interface"));
    }
    if parameter.trim().is_empty() {
        return Err(tuple_err(display, "empty parameter"));
    }
    Ok(GroundedAction {
        target: target.trim().to_string(),
        interface: interface.trim().to_string(),
        parameter: parameter.trim().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_switch_on_event() {
        let t = parse_trigger_tuple("TV-switch-on-event").unwrap();
        assert_eq!(
            t,
            GroundedTrigger {
                target: "TV".into(),
                interface: "switch".into(),
                condition: "on".into(),
                mode: TriggerMode::Event,
                delay: Duration::ZERO,
            }
        );
    }

    #[test]
    fn activity_state_with_delay() {
        let s = "ActivitySensor-isThereUserActivity-false-state(10mins)";
        let t = parse_trigger_tuple(s).unwrap();
        assert_eq!(t.mode, TriggerMode::State);
        assert_eq!(t.delay.as_secs(), 600);
        assert_eq!(t.condition, "false");
        assert_eq!(t.to_string(), s);
    }

    #[test]
    fn malformed_triggers() {
        assert!(parse_trigger_tuple("TV-switch").is_err());
        assert!(parse_trigger_tuple("-switch-on-event").is_err());
        assert!(parse_trigger_tuple("TV-switch-on-sometimes").is_err());
        assert!(parse_trigger_tuple("TV-switch-on-state(forever)").is_err());
    }

    #[test]
    fn hyphenated_condition_survives() {
        let t = parse_trigger_tuple("environment sensor-currentTemperature-<-5-state").unwrap();
        assert_eq!(t.condition, "<-5");
        assert_eq!(
            t.to_string(),
            "environment sensor-currentTemperature-<-5-state"
        );
    }

    #[test]
    fn action_tuples() {
        let a = parse_action_tuple("air conditioner-switch-on").unwrap();
        assert_eq!(a.target, "air conditioner");
        assert_eq!(a.interface, "switch");
        assert_eq!(a.parameter, "on");
        let w = parse_action_tuple("timer-wait-10mins").unwrap();
        assert_eq!(
            (
                w.target.as_str(),
                w.interface.as_str(),
                w.parameter.as_str()
            ),
            ("timer", "wait", "10mins")
        );
        assert!(parse_action_tuple("-switch-on").is_err());
        assert!(parse_action_tuple("TV-switch").is_err());
    }

    #[test]
    fn json_accepts_non_string_literals() {
        let json = r#"{"operation":"create","name":null,"feasible":true,
            "ta_pairs":[{"triggers":[{"target":"ActivitySensor","interface":"isThereUserActivity","condition":false,"mode":"state","delay_s":600}],
                         "actions":[{"target":"air conditioner","interface":"targetTemperature","parameter":26}]}],
            "errors":[]}"#;
        let rule = GroundedRule::from_json(json).unwrap();
        assert_eq!(rule.ta_pairs[0].triggers[0].condition, "false");
        assert_eq!(rule.ta_pairs[0].actions[0].parameter, "26");
        let back = GroundedRule::from_json(&rule.to_json()).unwrap();
        assert_eq!(back, rule);
    }

    #[test]
    fn error_field_requirements() {
        assert!(GroundingError::unknown_interface(
            "environment sensor",
            "UserEnter",
            "no such interface"
        )
        .is_well_formed());
        let mut e = GroundingError::unknown_interface("x", "y", "m");
        e.interface = None;
        assert!(!e.is_well_formed());
        assert_eq!(GroundingError::malformed("").message, "MALFORMED_OUTPUT");
    }
}
