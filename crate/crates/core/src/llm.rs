//! Text-completion backends.
//!
//! The scripted backend replays fixtures keyed by a SHA-256 digest of
//! `system_prompt \0 user_message`; sampling settings are not part of the
//! key. The recording backend wraps another backend and writes each reply
//! as a fixture so the scripted backend can replay it.

use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const API_KEY_ENV: &str = "AWAREAUTO_LLM_API_KEY";
pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_message: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// Pipeline defaults: temperature 0, 2048 tokens.
    pub fn new(system_prompt: impl Into<String>, user_message: impl Into<String>) -> Self {
        CompletionRequest {
            system_prompt: system_prompt.into(),
            user_message: user_message.into(),
            temperature: 0.0,
            max_tokens: 2048,
        }
    }

    fn check(&self) -> Result<(), LlmError> {
        if self.system_prompt.trim().is_empty() || self.user_message.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompts must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn fixture_key(&self) -> String {
        fixture_key(&self.system_prompt, &self.user_message)
    }
}

/// Hex SHA-256 of `system_prompt \0 user_message`.
pub fn fixture_key(system_prompt: &str, user_message: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(system_prompt.as_bytes());
    hasher.update([0u8]);
    hasher.update(user_message.as_bytes());
    hex::encode(hasher.finalize())
}

pub fn fixture_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.txt"))
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no fixture for request {key}; create {}", path.display())]
    MissingFixture { key: String, path: PathBuf },
    #[error("credential missing: set {0}")]
    MissingCredential(&'static str),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture I/O on {}: {message}", path.display())]
    FixtureIo { path: PathBuf, message: String },
    #[error("scripted response queue is empty")]
    Exhausted,
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport { .. })
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(req)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[serde(alias = "remote_http")]
    Remote,
    Scripted,
    Recording,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" | "remote_http" => Ok(BackendKind::Remote),
            "scripted" => Ok(BackendKind::Scripted),
            "recording" => Ok(BackendKind::Recording),
            other => Err(format!(
                "unknown backend `{other}` (remote, scripted, recording)"
            )),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Remote => "remote",
            BackendKind::Scripted => "scripted",
            BackendKind::Recording => "recording",
        })
    }
}

/// Replays `<hash>.txt` fixtures from a directory.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    dir: PathBuf,
}

impl ScriptedBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ScriptedBackend { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        req.check()?;
        let key = req.fixture_key();
        let path = fixture_path(&self.dir, &key);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(LlmError::MissingFixture { key, path })
            }
            Err(e) => Err(LlmError::FixtureIo {
                path,
                message: e.to_string(),
            }),
        }
    }
}

/// Chat-completion style HTTP backend.
pub struct RemoteBackend {
    endpoint: String,
    model: String,
    api_key: String,
    timeout: Duration,
    backoff: Duration,
    client: OnceLock<reqwest::blocking::Client>,
}

impl fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f32,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    content: String,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl RemoteBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: impl Into<String>,
    ) -> Self {
        RemoteBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            timeout: Duration::from_secs(60),
            backoff: Duration::from_millis(500),
            client: OnceLock::new(),
        }
    }

    /// Reads the credential from `AWAREAUTO_LLM_API_KEY`.
    pub fn from_env(
        endpoint: impl Into<String>,
        model: impl Into<String>,
    ) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(LlmError::MissingCredential(API_KEY_ENV))?;
        Ok(Self::new(endpoint, model, key))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Base delay between attempts; doubles after each failure.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, LlmError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| LlmError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(self.client.get_or_init(|| client))
    }

    fn attempt(&self, req: &CompletionRequest) -> Result<String, Attempt> {
        let body = ChatBody {
            model: &self.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &req.system_prompt,
                },
                ChatMessage {
                    role: "user",
                    content: &req.user_message,
                },
            ],
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        };
        let client = self.client().map_err(|e| Attempt::Fatal(e.to_string()))?;
        let resp = client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
        }
        let reply: ChatReply = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(format!("unexpected response body: {e}")))?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal("response has no choices".into()))
    }
}

impl LlmBackend for RemoteBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        req.check()?;
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            match self.attempt(req) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(message)) => {
                    return Err(LlmError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(Attempt::Retry(message)) => {
                    tracing::warn!(attempt, %message, "LLM request failed");
                    last = message;
                    if attempt < MAX_ATTEMPTS {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(LlmError::Transport {
            attempts: MAX_ATTEMPTS,
            message: last,
        })
    }
}

/// Proxies another backend and stores every reply as a fixture.
#[derive(Debug)]
pub struct RecordingBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: LlmBackend> RecordingBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        RecordingBackend {
            inner,
            dir: dir.into(),
        }
    }
}

impl<B: LlmBackend> LlmBackend for RecordingBackend<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let text = self.inner.complete(req)?;
        let path = fixture_path(&self.dir, &req.fixture_key());
        let io = |e: std::io::Error| LlmError::FixtureIo {
            path: path.clone(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(&self.dir).map_err(io)?;
        std::fs::write(&path, &text).map_err(io)?;
        Ok(text)
    }
}

/// Answers requests from a fixed queue, in order. Used to author fixtures
/// through the real prompt builders and in tests.
#[derive(Debug, Default)]
pub struct QueuedBackend {
    replies: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<CompletionRequest>>,
}

impl QueuedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        QueuedBackend {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn push(&self, reply: impl Into<String>) {
        self.replies
            .lock()
            .expect("queue lock")
            .push_back(reply.into());
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("queue lock").len()
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.seen.lock().expect("seen lock").clone()
    }
}

impl LlmBackend for QueuedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        req.check()?;
        self.seen.lock().expect("seen lock").push(req.clone());
        self.replies
            .lock()
            .expect("queue lock")
            .pop_front()
            .ok_or(LlmError::Exhausted)
    }
}
