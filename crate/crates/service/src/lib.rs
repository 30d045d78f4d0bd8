//! HTTP API over refinement sessions and the home simulator.

pub mod config;
pub mod session;
pub mod sim;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use awareauto_core::context::ContextSnapshot;
use awareauto_core::engine::EngineError;
use awareauto_core::llm::LlmError;
use awareauto_core::model::{NlRule, Operation};
use awareauto_core::normalizer::UserExpression;
use awareauto_core::pipeline::Pipeline;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

pub use config::{build_backend, ConfigError, ServiceConfig};
pub use session::{Draft, RoundError, Session, SessionError, Stage};
pub use sim::{SimError, SimInput, Simulator};

/// Shared state of the service.
pub struct AppState {
    pipeline: Pipeline,
    sim: Simulator,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    next_session: AtomicU64,
    deployed: Arc<Mutex<HashMap<String, NlRule>>>,
}

impl AppState {
    /// Must be called inside a Tokio runtime: it starts the simulator.
    pub fn new(pipeline: Pipeline) -> Arc<Self> {
        let sim = Simulator::spawn(pipeline.catalog().clone());
        Arc::new(AppState {
            pipeline,
            sim,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            deployed: Arc::new(Mutex::new(HashMap::new())),
        })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>, ApiError> {
        lock(&self.sessions)
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }

    fn lookup(&self) -> impl Fn(&str) -> Option<NlRule> + Send + 'static {
        let deployed = self.deployed.clone();
        move |name: &str| lock(&deployed).get(&name.to_lowercase()).cloned()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/expression", post(post_expression))
        .route("/sessions/{id}/edit", post(post_edit))
        .route("/sessions/{id}/confirm", post(post_confirm))
        .route("/rules", get(get_rules))
        .route("/rules/{name}", delete(delete_rule))
        .route("/sim/events", post(post_events))
        .route("/sim/advance", post(post_advance))
        .route("/sim/state", get(get_state))
        .route("/sim/trace", get(get_trace))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(config: &ServiceConfig) -> Result<(), ServeError> {
    let catalog = config.catalog()?;
    let pipeline = config.pipeline(catalog)?;
    let app = router(AppState::new(pipeline));
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|e| ServeError::Bind(config.listen.clone(), e))?;
    tracing::info!(addr = %config.listen, backend = %config.backend, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServeError::Io)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot listen on {0}: {1}")]
    Bind(String, std::io::Error),
    #[error(transparent)]
    Io(std::io::Error),
}

/// Error response: `{"error": message, ...details}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<RoundError> for ApiError {
    fn from(e: RoundError) -> Self {
        let message = e.to_string();
        match e {
            RoundError::Expression(_) => ApiError::new(StatusCode::BAD_REQUEST, message),
            RoundError::Document(err) => ApiError::new(StatusCode::BAD_REQUEST, message)
                .with("line", json!(err.line))
                .with("column", json!(err.column)),
            RoundError::Unparseable { raw, .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message).with("raw", json!(raw))
            }
            RoundError::UnknownBase(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message),
            RoundError::Llm(LlmError::InvalidRequest(_)) | RoundError::NoExamples => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, message)
            }
            RoundError::Llm(_) => ApiError::new(StatusCode::BAD_GATEWAY, message),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::Busy | SessionError::Closed | SessionError::NoDraft => {
                ApiError::new(StatusCode::CONFLICT, message)
            }
            SessionError::Infeasible(errors) => {
                ApiError::new(StatusCode::CONFLICT, message).with("errors", json!(errors))
            }
            SessionError::Round(e) => e.into(),
        }
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        let message = e.to_string();
        match e {
            SimError::Engine(EngineError::Infeasible(errors)) => {
                ApiError::new(StatusCode::CONFLICT, message).with("errors", json!(errors))
            }
            SimError::Engine(EngineError::UnknownRule(_) | EngineError::UnknownRuleId(_)) => {
                ApiError::new(StatusCode::NOT_FOUND, message)
            }
            SimError::Engine(EngineError::TimeTravel { .. }) => {
                ApiError::new(StatusCode::CONFLICT, message)
            }
            SimError::Engine(EngineError::UnknownInput { .. } | EngineError::BadValue { .. }) => {
                ApiError::new(StatusCode::BAD_REQUEST, message)
            }
            SimError::Stopped => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, message),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn create_session(State(app): State<Arc<AppState>>) -> (StatusCode, Json<Session>) {
    let id = app.next_session.fetch_add(1, Ordering::Relaxed);
    let session = Session::new(id);
    lock(&app.sessions).insert(id, Arc::new(Mutex::new(session.clone())));
    (StatusCode::CREATED, Json(session))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> ApiResult<Json<Session>> {
    let session = app.session(id)?;
    let snapshot = lock(&session).clone();
    Ok(Json(snapshot))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpressionRequest {
    expression: UserExpression,
    #[serde(default)]
    snapshot: Option<ContextSnapshot>,
    /// Answer once the round is done instead of immediately.
    #[serde(default)]
    wait: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditRequest {
    document: String,
    #[serde(default)]
    wait: bool,
}

/// Runs a round's model calls off the async threads. With `wait` the
/// response carries the new draft, otherwise it is 202 and the client polls
/// the session.
async fn run_round(
    session: Arc<Mutex<Session>>,
    wait: bool,
    input: session::RoundInput,
    work: impl FnOnce(&Arc<Mutex<Session>>) -> Result<Draft, RoundError> + Send + 'static,
) -> ApiResult<Response> {
    let (id, round, pending) = {
        let s = lock(&session);
        (s.id, s.round + 1, s.pending)
    };
    let task_session = session.clone();
    let task = tokio::task::spawn_blocking(move || {
        let outcome = work(&task_session);
        let mut s = lock(&task_session);
        let result = s.finish(input, outcome);
        (s.round, result)
    });
    if !wait {
        let body = json!({ "id": id, "round": round, "pending": pending });
        return Ok((StatusCode::ACCEPTED, Json(body)).into_response());
    }
    let (round, result) = task
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let draft = result.map_err(|e| ApiError::from(e).with("round", json!(round)))?;
    Ok(Json(json!({
        "round": round,
        "nl_rule": draft.nl_rule,
        "grounded": draft.grounded,
    }))
    .into_response())
}

async fn post_expression(
    State(app): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Json(req): Json<ExpressionRequest>,
) -> ApiResult<Response> {
    let session = app.session(id)?;
    req.expression
        .validate()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let snapshot = req.snapshot.unwrap_or_default();
    snapshot
        .check_against(app.pipeline.catalog())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    let draft = lock(&session).begin(Stage::Reasoning)?;
    let pipeline = app.pipeline.clone();
    let lookup = app.lookup();
    let expression = req.expression.clone();
    let input = session::RoundInput::Expression {
        expression: req.expression,
        snapshot: Box::new(snapshot.clone()),
    };
    run_round(session, req.wait, input, move |s| {
        let nl = session::infer_draft(&pipeline, draft.as_ref(), &expression, &snapshot, &lookup)?;
        lock(s).pending = Some(Stage::Grounding);
        session::ground_draft(&pipeline, nl)
    })
    .await
}

async fn post_edit(
    State(app): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Json(req): Json<EditRequest>,
) -> ApiResult<Response> {
    let session = app.session(id)?;
    let draft = lock(&session).begin(Stage::Grounding)?;
    let input = session::RoundInput::Edit {
        document: req.document.clone(),
    };
    let nl = match session::edit_draft(draft.as_ref(), &req.document, &app.lookup()) {
        Ok(nl) => nl,
        Err(e) => {
            let mut s = lock(&session);
            let err = s.finish(input, Err(e)).expect_err("the round failed");
            return Err(ApiError::from(err).with("round", json!(s.round)));
        }
    };
    let pipeline = app.pipeline.clone();
    run_round(session, req.wait, input, move |_| {
        session::ground_draft(&pipeline, nl)
    })
    .await
}

async fn post_confirm(
    State(app): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> ApiResult<Json<Value>> {
    let session = app.session(id)?;
    let grounded = lock(&session).begin_confirm()?;
    let deployment = match app.sim.deploy(grounded.clone()).await {
        Ok(d) => d,
        Err(e) => {
            lock(&session).abort();
            return Err(e.into());
        }
    };
    let mut s = lock(&session);
    if let Some(nl) = &s.draft_nl {
        let key = nl.name.as_deref().unwrap_or_default().to_lowercase();
        let mut deployed = lock(&app.deployed);
        match nl.operation {
            Operation::Delete => {
                deployed.remove(&key);
            }
            _ if !key.is_empty() => {
                deployed.insert(key, nl.clone());
            }
            _ => {}
        }
    }
    s.confirmed(deployment.clone());
    Ok(Json(json!({
        "deployment": deployment,
        "rounds": s.round,
        "rule": grounded,
    })))
}

async fn get_rules(State(app): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.sim.rules().await?)))
}

async fn delete_rule(
    State(app): State<Arc<AppState>>,
    Path(name): Path<String>,
) -> ApiResult<StatusCode> {
    app.sim.withdraw(name.clone()).await?;
    lock(&app.deployed).remove(&name.to_lowercase());
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<SimInput>),
    One(SimInput),
}

async fn post_events(
    State(app): State<Arc<AppState>>,
    Json(body): Json<OneOrMany>,
) -> ApiResult<Json<Value>> {
    let inputs = match body {
        OneOrMany::Many(v) => v,
        OneOrMany::One(i) => vec![i],
    };
    Ok(Json(json!(app.sim.apply(inputs).await?)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceRequest {
    to: u64,
}

async fn post_advance(
    State(app): State<Arc<AppState>>,
    Json(req): Json<AdvanceRequest>,
) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.sim.advance(req.to).await?)))
}

async fn get_state(State(app): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.sim.state().await?)))
}

async fn get_trace(State(app): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.sim.trace().await?)))
}
