use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Whole seconds of virtual time. Surface forms are `<int><unit>` with unit
/// one of `s`, `min`, `mins`, `h`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Duration(u64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DurationError {
    #[error("empty duration")]
    Empty,
    #[error("duration `{0}` must start with an integer")]
    MissingNumber(String),
    #[error("unknown duration unit `{unit}` in `{text}` (expected s, min, mins or h)")]
    UnknownUnit { text: String, unit: String },
    #[error("duration `{0}` overflows")]
    Overflow(String),
}

impl Duration {
    pub const ZERO: Duration = Duration(0);

    pub const fn from_secs(secs: u64) -> Self {
        Duration(secs)
    }

    pub const fn from_mins(mins: u64) -> Self {
        Duration(mins * 60)
    }

    pub const fn as_secs(self) -> u64 {
        self.0
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0;
        if s > 0 && s.is_multiple_of(3600) {
            write!(f, "{}h", s / 3600)
        } else if s == 60 {
            f.write_str("1min")
        } else if s > 0 && s.is_multiple_of(60) {
            write!(f, "{}mins", s / 60)
        } else {
            write!(f, "{s}s")
        }
    }
}

impl FromStr for Duration {
    type Err = DurationError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let text = text.trim();
        if text.is_empty() {
            return Err(DurationError::Empty);
        }
        let split = text
            .find(|c: char| !c.is_ascii_digit())
            .unwrap_or(text.len());
        let (digits, unit) = text.split_at(split);
        if digits.is_empty() {
            return Err(DurationError::MissingNumber(text.to_string()));
        }
        let value: u64 = digits
            .parse()
            .map_err(|_| DurationError::Overflow(text.to_string()))?;
        let scale = match unit {
            "s" => 1,
            "min" | "mins" => 60,
            "h" => 3600,
            _ => {
                return Err(DurationError::UnknownUnit {
                    text: text.to_string(),
                    unit: unit.to_string(),
                })
            }
        };
        value
            .checked_mul(scale)
            .map(Duration)
            .ok_or_else(|| DurationError::Overflow(text.to_string()))
    }
}
