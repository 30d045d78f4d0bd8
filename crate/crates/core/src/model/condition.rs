use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparator {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    pub fn is_ordering(self) -> bool {
        matches!(
            self,
            Comparator::Lt | Comparator::Le | Comparator::Gt | Comparator::Ge
        )
    }
}

/// A trigger condition: a bare literal (equality) or `<op><literal>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub comparator: Comparator,
    pub literal: String,
    bare: bool,
}

impl Condition {
    pub fn parse(text: &str) -> Condition {
        let text = text.trim();
        // two-char operators first
        for (prefix, comparator) in [
            ("!=", Comparator::Ne),
            ("<=", Comparator::Le),
            (">=", Comparator::Ge),
            ("=", Comparator::Eq),
            ("<", Comparator::Lt),
            (">", Comparator::Gt),
        ] {
            if let Some(rest) = text.strip_prefix(prefix) {
                return Condition {
                    comparator,
                    literal: rest.trim().to_string(),
                    bare: false,
                };
            }
        }
        Condition {
            comparator: Comparator::Eq,
            literal: text.to_string(),
            bare: true,
        }
    }

    pub fn numeric_literal(&self) -> Option<f64> {
        self.literal.parse::<f64>().ok().filter(|v| v.is_finite())
    }

    /// Whether an observed interface value satisfies the condition.
    pub fn holds(&self, observed: &str) -> bool {
        let observed = observed.trim();
        let numbers = observed.parse::<f64>().ok().zip(self.numeric_literal());
        match (self.comparator, numbers) {
            (Comparator::Eq, Some((a, b))) => a == b,
            (Comparator::Ne, Some((a, b))) => a != b,
            (Comparator::Eq, None) => observed.eq_ignore_ascii_case(&self.literal),
            (Comparator::Ne, None) => !observed.eq_ignore_ascii_case(&self.literal),
            (Comparator::Lt, Some((a, b))) => a < b,
            (Comparator::Le, Some((a, b))) => a <= b,
            (Comparator::Gt, Some((a, b))) => a > b,
            (Comparator::Ge, Some((a, b))) => a >= b,
            (_, None) => false,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bare {
            f.write_str(&self.literal)
        } else {
            write!(f, "{}{}", self.comparator.symbol(), self.literal)
        }
    }
}
