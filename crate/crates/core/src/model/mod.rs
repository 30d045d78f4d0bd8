//! Rule types for both pipeline stages, their text/JSON forms, and
//! structural equivalence.

mod canon;
mod condition;
mod duration;
mod grounded;
mod nl;

pub use canon::{canonicalize, rules_equivalent};
pub use condition::{Comparator, Condition};
pub use duration::{Duration, DurationError};
pub use grounded::{
    parse_action_tuple, parse_trigger_tuple, ErrorCode, GroundedAction, GroundedRule,
    GroundedTrigger, GroundingError, TaPair, TupleError, RULE_NAME_INTERFACE, TIMER_TARGET,
    VOICE_TARGET, WAIT_INTERFACE,
};
pub use nl::{
    parse_rule_text, serialize_rule_text, ActionGroup, ActionId, ActionStep, GroupId, NlRule,
    Operation, RuleInvariantError, RuleTextError, RuleTextErrorKind, StepKind, TriggerId,
    TriggerMode, TriggerSpec, NAME_TRIGGER,
};
