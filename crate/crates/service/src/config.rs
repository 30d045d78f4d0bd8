//! Service configuration and the backend factory shared with the CLI.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use awareauto_core::bundled;
use awareauto_core::context::{CatalogError, DeviceCatalog};
use awareauto_core::llm::{
    BackendKind, LlmBackend, LlmError, RecordingBackend, RemoteBackend, ScriptedBackend,
};
use awareauto_core::pipeline::Pipeline;
use awareauto_core::prompts::{GroundingPrompts, PromptError, ReasoningPrompts};
use awareauto_core::reasoning::ReasoningError;
use serde::{Deserialize, Serialize};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("config {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("backend `{backend}` needs `{field}`")]
    Missing {
        backend: BackendKind,
        field: &'static str,
    },
    #[error(transparent)]
    Credential(#[from] LlmError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Prompts(#[from] PromptError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Fixture directory for the scripted and recording backends.
    pub fixtures: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    /// Directory with the prompt files; the bundled prompts otherwise.
    pub prompts: Option<PathBuf>,
    pub listen: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            backend: BackendKind::Scripted,
            endpoint: None,
            model: None,
            fixtures: None,
            catalog: None,
            prompts: None,
            listen: DEFAULT_LISTEN.to_string(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: match e.path().to_string().as_str() {
                "." => e.inner().to_string(),
                field => format!("`{field}`: {}", e.inner()),
            },
        })
    }

    pub fn fixture_dir(&self) -> PathBuf {
        self.fixtures.clone().unwrap_or_else(bundled::fixture_dir)
    }

    pub fn backend(&self) -> Result<Arc<dyn LlmBackend>, ConfigError> {
        build_backend(
            self.backend,
            &self.fixture_dir(),
            self.endpoint.as_deref(),
            self.model.as_deref(),
        )
    }

    pub fn catalog(&self) -> Result<Arc<DeviceCatalog>, ConfigError> {
        Ok(Arc::new(match &self.catalog {
            Some(path) => DeviceCatalog::load(path)?,
            None => bundled::catalog(),
        }))
    }

    pub fn pipeline(&self, catalog: Arc<DeviceCatalog>) -> Result<Pipeline, ConfigError> {
        let backend = self.backend()?;
        let (reasoning, grounding) = match &self.prompts {
            Some(dir) => (ReasoningPrompts::load(dir)?, GroundingPrompts::load(dir)?),
            None => (ReasoningPrompts::bundled(), GroundingPrompts::bundled()),
        };
        Ok(Pipeline::new(catalog, backend, &reasoning, &grounding)?)
    }
}

/// Remote and recording backends read the credential from the environment.
pub fn build_backend(
    kind: BackendKind,
    fixtures: &Path,
    endpoint: Option<&str>,
    model: Option<&str>,
) -> Result<Arc<dyn LlmBackend>, ConfigError> {
    let remote = || -> Result<RemoteBackend, ConfigError> {
        let endpoint = endpoint.ok_or(ConfigError::Missing {
            backend: kind,
            field: "endpoint",
        })?;
        let model = model.ok_or(ConfigError::Missing {
            backend: kind,
            field: "model",
        })?;
        Ok(RemoteBackend::from_env(endpoint, model)?)
    };
    Ok(match kind {
        BackendKind::Scripted => Arc::new(ScriptedBackend::new(fixtures)),
        BackendKind::Remote => Arc::new(remote()?),
        BackendKind::Recording => Arc::new(RecordingBackend::new(remote()?, fixtures)),
    })
}
