use std::sync::Arc;

use awareauto_core::bundled;
use awareauto_core::engine::{Engine, EngineError};
use awareauto_core::grounding::{build_grounding_prompt, ground_rule, validate_grounded};
use awareauto_core::llm::QueuedBackend;
use awareauto_core::model::{ErrorCode, GroundedRule};

#[test]
fn every_hallucinated_grounding_is_caught() {
    let catalog = Arc::new(bundled::catalog());
    let prompt = build_grounding_prompt(&catalog);
    let suite = bundled::hallucination_suite();
    assert_eq!(suite.len(), 10);
    let mut caught = 0;
    for case in &suite {
        let claimed = GroundedRule::from_json(&case.reply).unwrap();
        assert!(
            claimed.feasible && claimed.errors.is_empty(),
            "{}: the reply must claim feasibility",
            case.id
        );

        let backend = QueuedBackend::new([case.reply.clone()]);
        let grounding = ground_rule(&backend, &prompt, &catalog, &case.rule).unwrap();
        let rule = grounding.rule;
        let codes = rule.error_codes();
        let found = !rule.feasible && case.expected.iter().all(|c| codes.contains(c));
        assert!(
            found,
            "{}: expected {:?}, got {:?}",
            case.id, case.expected, rule.errors
        );
        assert!(
            rule.errors.iter().all(|e| !e.message.trim().is_empty()),
            "{}",
            case.id
        );

        let mut engine = Engine::new(catalog.clone());
        match engine.deploy(&claimed) {
            Err(EngineError::Infeasible(errors)) => assert!(!errors.is_empty()),
            other => panic!("{}: deploy gave {other:?}", case.id),
        }
        assert!(engine.rules().is_empty());
        caught += usize::from(found);
    }
    assert_eq!(caught, suite.len());
}

#[test]
fn user_enter_is_an_unknown_interface_with_a_reason() {
    let catalog = bundled::catalog();
    let case = bundled::hallucination_suite()
        .into_iter()
        .find(|c| c.id == "h-01")
        .unwrap();
    assert!(case.reply.contains("\"UserEnter\""));
    let checked = validate_grounded(&catalog, &GroundedRule::from_json(&case.reply).unwrap());
    assert!(!checked.feasible);
    let error = checked
        .errors
        .iter()
        .find(|e| e.code == ErrorCode::UnknownInterface)
        .expect("UNKNOWN_INTERFACE");
    assert_eq!(error.interface.as_deref(), Some("UserEnter"));
    assert!(!error.message.is_empty());
    assert_eq!(validate_grounded(&catalog, &checked), checked);
}

#[test]
fn corpus_infeasible_cases_report_their_gold_codes() {
    let catalog = bundled::catalog();
    let corpus = bundled::corpus();
    let infeasible: Vec<_> = corpus
        .iter()
        .filter(|c| c.gold_infeasible_reason.is_some())
        .collect();
    assert!(infeasible.len() >= 3);
    assert!(infeasible.iter().any(|c| c
        .gold_infeasible_reason
        .as_ref()
        .unwrap()
        .contains(&ErrorCode::UnknownInterface)));
    for case in corpus
        .iter()
        .filter_map(|c| c.gold_grounded.as_ref().map(|g| (c, g)))
    {
        let checked = validate_grounded(&catalog, case.1);
        assert!(checked.feasible, "{}: {:?}", case.0.id, checked.errors);
    }
}
