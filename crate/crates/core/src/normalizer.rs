//! Turns structured multimodal input into a standardized description:
//! `The user [posture/activity] on [position], [orientation], [gesture]
//! (towards [target]), and says, "[speech]"`.

use serde::{Deserialize, Serialize};

use crate::context::ContextSnapshot;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserExpression {
    #[serde(default)]
    pub posture_activity: Option<String>,
    #[serde(default)]
    pub position: Option<String>,
    #[serde(default)]
    pub orientation: Option<String>,
    #[serde(default)]
    pub gesture: Option<String>,
    #[serde(default)]
    pub gesture_target: Option<String>,
    pub speech: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExpressionError {
    #[error("speech must not be empty")]
    EmptySpeech,
    #[error("gesture_target given without a gesture")]
    TargetWithoutGesture,
}

impl UserExpression {
    pub fn speech(text: impl Into<String>) -> Self {
        UserExpression {
            speech: text.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExpressionError> {
        if self.speech.trim().is_empty() {
            return Err(ExpressionError::EmptySpeech);
        }
        if present(&self.gesture_target).is_some() && present(&self.gesture).is_none() {
            return Err(ExpressionError::TargetWithoutGesture);
        }
        Ok(())
    }
}

fn present(field: &Option<String>) -> Option<&str> {
    field.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

fn with_article(place: &str) -> String {
    let lower = place.to_lowercase();
    if ["the ", "a ", "an ", "my ", "his ", "her ", "their "]
        .iter()
        .any(|a| lower.starts_with(a))
    {
        place.to_string()
    } else {
        format!("the {place}")
    }
}

/// The standardized sentence describing what the user does and says.
pub fn describe_user(expr: &UserExpression) -> Result<String, ExpressionError> {
    expr.validate()?;
    let mut clauses = Vec::new();
    match (present(&expr.posture_activity), present(&expr.position)) {
        (Some(p), Some(pos)) => clauses.push(format!("{p} on {}", with_article(pos))),
        (Some(p), None) => clauses.push(p.to_string()),
        (None, Some(pos)) => clauses.push(format!("is on {}", with_article(pos))),
        (None, None) => {}
    }
    if let Some(o) = present(&expr.orientation) {
        clauses.push(o.to_string());
    }
    if let Some(g) = present(&expr.gesture) {
        match present(&expr.gesture_target) {
            Some(t) => clauses.push(format!("{g} towards {t}")),
            None => clauses.push(g.to_string()),
        }
    }
    let says = format!("says, \"{}\"", expr.speech.trim());
    Ok(match clauses.len() {
        0 => format!("The user {says}"),
        1 => format!("The user {} and {says}", clauses[0]),
        _ => format!("The user {}, and {says}", clauses.join(", ")),
    })
}

/// Environment block followed by the standardized sentence.
pub fn normalize_expression(
    expr: &UserExpression,
    snapshot: &ContextSnapshot,
) -> Result<String, ExpressionError> {
    let sentence = describe_user(expr)?;
    Ok(format!("{}\n{}", snapshot.render(), sentence))
}
