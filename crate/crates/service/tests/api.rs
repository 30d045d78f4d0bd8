use std::sync::{mpsc, Arc, Mutex};
use std::time::Duration;

use awareauto_core::bundled::{self, ScriptedInput};
use awareauto_core::llm::{
    CompletionRequest, LlmBackend, LlmError, QueuedBackend, ScriptedBackend,
};
use awareauto_core::pipeline::Pipeline;
use awareauto_service::{router, AppState};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(backend: Arc<dyn LlmBackend>) -> Router {
    let pipeline = Pipeline::bundled(Arc::new(bundled::catalog()), backend);
    router(AppState::new(pipeline))
}

fn scripted_app() -> Router {
    app_with(Arc::new(ScriptedBackend::new(bundled::fixture_dir())))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => request
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => request.body(Body::empty()),
    }
    .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn new_session(app: &Router) -> u64 {
    let (status, body) = call(app, Method::POST, "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["round"], 0);
    body["id"].as_u64().unwrap()
}

async fn wait_idle(app: &Router, id: u64) -> Value {
    for _ in 0..500 {
        let (status, body) = call(app, Method::GET, &format!("/sessions/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if body.get("pending").is_none() {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session {id} stayed busy");
}

#[tokio::test(flavor = "multi_thread")]
async fn three_round_refinement_deploys_the_sleep_mode_rule() {
    let app = scripted_app();
    let id = new_session(&app).await;
    let script = bundled::sleep_mode_session();
    let mut feasibility = Vec::new();
    for round in &script.rounds {
        let (status, body) = match round.kind {
            ScriptedInput::Expression => {
                let body = json!({ "expression": round.expression, "snapshot": script.snapshot, "wait": true });
                call(
                    &app,
                    Method::POST,
                    &format!("/sessions/{id}/expression"),
                    Some(body),
                )
                .await
            }
            ScriptedInput::Edit => {
                let body = json!({ "document": round.document, "wait": true });
                call(
                    &app,
                    Method::POST,
                    &format!("/sessions/{id}/edit"),
                    Some(body),
                )
                .await
            }
        };
        assert_eq!(status, StatusCode::OK, "{body}");
        feasibility.push(body["grounded"]["feasible"].as_bool().unwrap());
    }
    assert_eq!(feasibility, [true, false, true]);

    let (_, session) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    let codes: Vec<&str> = session["history"][1]["grounded"]["errors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["code"].as_str().unwrap())
        .collect();
    assert_eq!(codes, ["UNKNOWN_INTERFACE"]);
    assert!(session["history"][1]["nl_rule"]
        .as_str()
        .unwrap()
        .contains("G1 WHEN T0:"));

    let (status, body) = call(&app, Method::POST, &format!("/sessions/{id}/confirm"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["rounds"], 3);
    assert_eq!(body["deployment"]["outcome"], "deployed");
    assert_eq!(body["rule"]["feasible"], true);

    let (_, session) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(session["state"], "deployed");
    assert_eq!(session["round"], 3);
    assert_eq!(session["history"].as_array().unwrap().len(), 4);
    assert_eq!(session["history"][3]["input"]["kind"], "confirm");

    let (_, rules) = call(&app, Method::GET, "/rules", None).await;
    assert_eq!(rules.as_array().unwrap().len(), 1);
    assert_eq!(rules[0]["rule"]["name"], "sleep mode");

    let event =
        json!({ "target": "VoiceAssistant", "interface": "ruleName", "value": "sleep mode" });
    let (status, progress) = call(&app, Method::POST, "/sim/events", Some(event)).await;
    assert_eq!(status, StatusCode::OK, "{progress}");
    let fired = progress["fired"].as_array().unwrap();
    assert_eq!(fired.len(), 9);
    assert!(fired
        .iter()
        .any(|a| a["target"] == "air conditioner" && a["parameter"] == "on"));

    let (_, state) = call(&app, Method::GET, "/sim/state", None).await;
    assert!(state["actuated"]
        .as_array()
        .unwrap()
        .iter()
        .any(|s| s["target"] == "TV" && s["interface"] == "switch" && s["value"] == "off"));

    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/edit"),
        Some(json!({"document": ""})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn expression_without_wait_is_accepted_and_polled() {
    let app = scripted_app();
    let id = new_session(&app).await;
    let script = bundled::sleep_mode_session();
    let body = json!({ "expression": script.rounds[0].expression, "snapshot": script.snapshot });
    let (status, accepted) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/expression"),
        Some(body),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(accepted["round"], 1);
    assert_eq!(accepted["pending"], "reasoning");
    let session = wait_idle(&app, id).await;
    assert_eq!(session["round"], 1);
    assert!(session["draft_nl"]
        .as_str()
        .unwrap()
        .starts_with("OPERATION: CREATE\nNAME: sleep mode"));
    assert_eq!(session["draft_grounded"]["feasible"], true);
}

/// Holds every request until the test releases it.
struct Gate {
    release: Mutex<mpsc::Receiver<String>>,
}

impl LlmBackend for Gate {
    fn complete(&self, _: &CompletionRequest) -> Result<String, LlmError> {
        self.release
            .lock()
            .unwrap()
            .recv()
            .map_err(|_| LlmError::Exhausted)
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn a_second_request_while_one_is_in_flight_conflicts() {
    let (tx, rx) = mpsc::channel();
    let app = app_with(Arc::new(Gate {
        release: Mutex::new(rx),
    }));
    let id = new_session(&app).await;
    let body = json!({ "expression": { "speech": "turn on the fan" } });
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/expression"),
        Some(body.clone()),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);

    for (uri, payload) in [
        ("expression", Some(body.clone())),
        (
            "edit",
            Some(json!({ "document": "OPERATION: DELETE\nNAME: x\nTRIGGERS:\nACTIONS:\n" })),
        ),
        ("confirm", None),
    ] {
        let (status, err) = call(
            &app,
            Method::POST,
            &format!("/sessions/{id}/{uri}"),
            payload,
        )
        .await;
        assert_eq!(status, StatusCode::CONFLICT, "{uri}: {err}");
        assert!(err["error"].as_str().unwrap().contains("in progress"));
    }
    let (_, other) = call(&app, Method::POST, "/sessions", None).await;
    assert_ne!(other["id"], id);

    tx.send("OPERATION: CREATE\nNAME: fan\nTRIGGERS:\nACTIONS:\n  G1 WHEN T0:\n    A1 | turn on the fan\n".into())
        .unwrap();
    tx.send(r#"{"operation":"create","feasible":true,"ta_pairs":[{"triggers":[],"actions":[{"target":"fan","interface":"switch","parameter":"on"}]}]}"#.into())
        .unwrap();
    let session = wait_idle(&app, id).await;
    assert_eq!(session["round"], 1);
    assert!(session["history"][0].get("error").is_none(), "{session}");
}

#[tokio::test(flavor = "multi_thread")]
async fn a_bad_edit_reports_its_location_and_still_counts() {
    let app = scripted_app();
    let id = new_session(&app).await;
    let document =
        "OPERATION: CREATE\nNAME: NONE\nTRIGGERS:\n  T1 | SOMETIMES | the door opens\nACTIONS:\n";
    let (status, err) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/edit"),
        Some(json!({ "document": document })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["line"], 4);
    assert!(err["column"].as_u64().unwrap() >= 1);
    assert_eq!(err["round"], 1);

    let (_, session) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(session["round"], 1);
    assert!(session["draft_nl"].is_null());
    assert!(session["history"][0]["error"]
        .as_str()
        .unwrap()
        .contains("line 4"));

    let (status, err) = call(&app, Method::POST, &format!("/sessions/{id}/confirm"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(err["error"].as_str().unwrap().contains("no draft"));
}

#[tokio::test(flavor = "multi_thread")]
async fn confirming_an_infeasible_draft_is_refused() {
    let app = scripted_app();
    let id = new_session(&app).await;
    let script = bundled::sleep_mode_session();
    for round in &script.rounds[..2] {
        let body =
            json!({ "expression": round.expression, "snapshot": script.snapshot, "wait": true });
        let (status, _) = call(
            &app,
            Method::POST,
            &format!("/sessions/{id}/expression"),
            Some(body),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, err) = call(&app, Method::POST, &format!("/sessions/{id}/confirm"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["errors"][0]["code"], "UNKNOWN_INTERFACE");
    assert!(!err["errors"][0]["message"].as_str().unwrap().is_empty());
    let (_, rules) = call(&app, Method::GET, "/rules", None).await;
    assert_eq!(rules, json!([]));
    let (_, session) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(session["state"], "open");
    assert!(session.get("pending").is_none());
}

#[tokio::test(flavor = "multi_thread")]
async fn modify_without_a_draft_edits_the_deployed_rule_of_that_name() {
    let grounded = |actions: Value| {
        json!({"operation":"create","name":"fan time","feasible":true,"ta_pairs":[{"triggers":[],"actions":actions}]})
            .to_string()
    };
    let queue = Arc::new(QueuedBackend::new([
        grounded(json!([{"target":"fan","interface":"switch","parameter":"on"}])),
        grounded(json!([
            {"target":"fan","interface":"switch","parameter":"on"},
            {"target":"fan","interface":"fanSpeed","parameter":"high"}
        ])),
    ]));
    let app = app_with(queue.clone());
    let first = new_session(&app).await;
    let create = "OPERATION: CREATE\nNAME: fan time\nTRIGGERS:\nACTIONS:\n  G1 WHEN T0:\n    A1 | turn on the fan\n";
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{first}/edit"),
        Some(json!({"document": create, "wait": true})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/sessions/{first}/confirm"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");

    let second = new_session(&app).await;
    let modify = "OPERATION: MODIFY\nNAME: fan time\nTRIGGERS:\nACTIONS:\n  G1 WHEN T0:\n    A1 | turn on the fan\n    A2 | set the fan to full speed\n";
    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/sessions/{second}/edit"),
        Some(json!({"document": modify, "wait": true})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(body["nl_rule"]
        .as_str()
        .unwrap()
        .starts_with("OPERATION: MODIFY\nNAME: fan time"));
    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/sessions/{second}/confirm"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["deployment"]["replaced"], 1);
    assert_eq!(queue.remaining(), 0);

    let third = new_session(&app).await;
    let unknown = "OPERATION: MODIFY\nNAME: tea time\nTRIGGERS:\nACTIONS:\n  G1 WHEN T0:\n    A1 | boil water\n";
    let (status, err) = call(
        &app,
        Method::POST,
        &format!("/sessions/{third}/edit"),
        Some(json!({"document": unknown})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["error"].as_str().unwrap().contains("tea time"));
}

#[tokio::test(flavor = "multi_thread")]
async fn simulator_endpoints_validate_their_input() {
    let app = scripted_app();
    let (status, _) = call(&app, Method::GET, "/sessions/99", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::DELETE, "/rules/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, err) = call(
        &app,
        Method::POST,
        "/sim/events",
        Some(json!([{ "target": "door", "interface": "flavour", "value": "x" }])),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");

    let (status, progress) = call(
        &app,
        Method::POST,
        "/sim/advance",
        Some(json!({ "to": 120 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(progress["now"], 120);
    let (status, _) = call(
        &app,
        Method::POST,
        "/sim/advance",
        Some(json!({ "to": 60 })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, state) = call(&app, Method::GET, "/sim/state", None).await;
    assert_eq!(state["now"], 120);
    let (_, trace) = call(&app, Method::GET, "/sim/trace", None).await;
    assert_eq!(trace, json!([]));

    let (status, _) = call(
        &app,
        Method::POST,
        "/sessions/1/expression",
        Some(json!({ "expression": { "speech": " " } })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let id = new_session(&app).await;
    let (status, err) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/expression"),
        Some(json!({ "expression": { "speech": " " } })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(err["error"].as_str().unwrap().contains("speech"));
}

#[tokio::test(flavor = "multi_thread")]
async fn a_missing_fixture_is_a_bad_gateway() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(Arc::new(ScriptedBackend::new(dir.path())));
    let id = new_session(&app).await;
    let body = json!({ "expression": { "speech": "turn on the fan" }, "wait": true });
    let (status, err) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/expression"),
        Some(body),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert!(err["error"].as_str().unwrap().contains("no fixture"));
    assert_eq!(err["round"], 1);
}
