//! The home simulator as a task that owns the engine; handlers talk to it
//! through a command queue.

use std::sync::Arc;

use awareauto_core::context::DeviceCatalog;
use awareauto_core::engine::{
    ActionTrace, DeployedRule, Deployment, Engine, EngineError, InputKind, SimEvent, StateEntry,
};
use awareauto_core::model::GroundedRule;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};

#[derive(Debug, Clone, Serialize)]
pub struct SimState {
    pub now: u64,
    pub state: Vec<StateEntry>,
    pub actuated: Vec<StateEntry>,
}

/// An input as posted by clients; without a time it applies now.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimInput {
    #[serde(default)]
    pub time: Option<u64>,
    pub target: String,
    pub interface: String,
    pub value: String,
    #[serde(default)]
    pub kind: InputKind,
}

/// Commands executed while handling a request.
#[derive(Debug, Clone, Serialize)]
pub struct Progress {
    pub now: u64,
    pub fired: Vec<ActionTrace>,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("the simulator has stopped")]
    Stopped,
}

type Reply<T> = oneshot::Sender<Result<T, EngineError>>;

enum Command {
    Deploy(GroundedRule, Reply<Deployment>),
    Withdraw(String, Reply<()>),
    Rules(oneshot::Sender<Vec<DeployedRule>>),
    Apply(Vec<SimInput>, Reply<Progress>),
    Advance(u64, Reply<Progress>),
    State(oneshot::Sender<SimState>),
    Trace(oneshot::Sender<Vec<ActionTrace>>),
}

/// Handle to the simulator task.
#[derive(Clone)]
pub struct Simulator {
    tx: mpsc::Sender<Command>,
}

impl Simulator {
    /// Spawns the task on the current runtime.
    pub fn spawn(catalog: Arc<DeviceCatalog>) -> Self {
        let (tx, mut rx) = mpsc::channel(64);
        let mut engine = Engine::new(catalog);
        tokio::spawn(async move {
            while let Some(cmd) = rx.recv().await {
                handle(&mut engine, cmd);
            }
        });
        Simulator { tx }
    }

    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, SimError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(make(reply))
            .await
            .map_err(|_| SimError::Stopped)?;
        Ok(rx.await.map_err(|_| SimError::Stopped)??)
    }

    async fn query<T>(
        &self,
        make: impl FnOnce(oneshot::Sender<T>) -> Command,
    ) -> Result<T, SimError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(make(reply))
            .await
            .map_err(|_| SimError::Stopped)?;
        rx.await.map_err(|_| SimError::Stopped)
    }

    pub async fn deploy(&self, rule: GroundedRule) -> Result<Deployment, SimError> {
        self.call(|r| Command::Deploy(rule, r)).await
    }

    pub async fn withdraw(&self, name: String) -> Result<(), SimError> {
        self.call(|r| Command::Withdraw(name, r)).await
    }

    pub async fn rules(&self) -> Result<Vec<DeployedRule>, SimError> {
        self.query(Command::Rules).await
    }

    /// Applies inputs in order, stopping at the first invalid one.
    pub async fn apply(&self, events: Vec<SimInput>) -> Result<Progress, SimError> {
        self.call(|r| Command::Apply(events, r)).await
    }

    pub async fn advance(&self, to: u64) -> Result<Progress, SimError> {
        self.call(|r| Command::Advance(to, r)).await
    }

    pub async fn state(&self) -> Result<SimState, SimError> {
        self.query(Command::State).await
    }

    pub async fn trace(&self) -> Result<Vec<ActionTrace>, SimError> {
        self.query(Command::Trace).await
    }
}

fn handle(engine: &mut Engine, cmd: Command) {
    match cmd {
        Command::Deploy(rule, r) => {
            let _ = r.send(engine.deploy(&rule));
        }
        Command::Withdraw(name, r) => {
            let _ = r.send(engine.withdraw_named(&name).map(|_| ()));
        }
        Command::Rules(r) => {
            let _ = r.send(engine.rules());
        }
        Command::Apply(inputs, r) => {
            let start = engine.trace().len();
            let result = inputs.into_iter().try_for_each(|i| {
                engine.apply(&SimEvent {
                    time: i.time.unwrap_or(engine.now()),
                    target: i.target,
                    interface: i.interface,
                    value: i.value,
                    kind: i.kind,
                })
            });
            let _ = r.send(result.map(|_| progress(engine, start)));
        }
        Command::Advance(to, r) => {
            let start = engine.trace().len();
            let _ = r.send(engine.advance(to).map(|_| progress(engine, start)));
        }
        Command::State(r) => {
            let _ = r.send(SimState {
                now: engine.now(),
                state: engine.state(),
                actuated: engine.actuated(),
            });
        }
        Command::Trace(r) => {
            let _ = r.send(engine.trace().to_vec());
        }
    }
}

fn progress(engine: &Engine, start: usize) -> Progress {
    Progress {
        now: engine.now(),
        fired: engine.trace()[start..].to_vec(),
    }
}
