//! Chat-completion and embedding clients.
//!
//! [`Provider`] is the handle every pipeline stage talks to. It owns a
//! [`Backend`] (the OpenAI-compatible HTTP client or the deterministic mock)
//! and a semaphore that caps the number of in-flight requests at
//! `max_parallel`.

mod mock;
mod openai;

use std::path::PathBuf;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use mock::{fingerprint, load_fixture_dir, mock_embedding, mock_reply, MockProvider};
pub use openai::{HttpReply, OpenAiBackend, ReqwestTransport, Transport, TransportFailure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    OpenaiCompatible,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub api_key_env: String,
    pub model_id: String,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_backoff_initial_ms")]
    pub backoff_initial_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_embed_batch_size")]
    pub embed_batch_size: usize,
    /// Vector size produced by the mock embedder.
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    /// Directory of canned mock replies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures_dir: Option<PathBuf>,
}

fn default_max_parallel() -> usize {
    4
}
fn default_retry_limit() -> u32 {
    3
}
fn default_backoff_initial_ms() -> u64 {
    500
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_embed_batch_size() -> usize {
    64
}
fn default_embedding_dim() -> usize {
    64
}

impl ProviderConfig {
    pub fn openai(base_url: &str, api_key_env: &str, model_id: &str) -> Self {
        Self {
            kind: ProviderKind::OpenaiCompatible,
            base_url: base_url.to_string(),
            api_key_env: api_key_env.to_string(),
            model_id: model_id.to_string(),
            max_parallel: default_max_parallel(),
            retry_limit: default_retry_limit(),
            backoff_initial_ms: default_backoff_initial_ms(),
            timeout_ms: default_timeout_ms(),
            embed_batch_size: default_embed_batch_size(),
            embedding_dim: default_embedding_dim(),
            fixtures_dir: None,
        }
    }

    pub fn mock(model_id: &str) -> Self {
        Self {
            kind: ProviderKind::Mock,
            ..Self::openai("", "", model_id)
        }
    }

    pub fn check(&self) -> Result<(), ProviderError> {
        if self.max_parallel == 0 {
            return Err(ProviderError::Config("max_parallel must be at least 1".into()));
        }
        if self.embed_batch_size == 0 {
            return Err(ProviderError::Config("embed_batch_size must be at least 1".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(ProviderError::Config("model_id is empty".into()));
        }
        if self.kind == ProviderKind::OpenaiCompatible && self.base_url.trim().is_empty() {
            return Err(ProviderError::Config("base_url is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// A single user message at temperature 0.0.
    pub fn user(model_id: &str, content: impl Into<String>) -> Self {
        Self {
            model_id: model_id.to_string(),
            messages: vec![ChatMessage::user(content)],
            temperature: 0.0,
        }
    }

    pub fn check(&self) -> Result<(), ProviderError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(ProviderError::InvalidRequest(
                "a chat request needs at least one user message".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(
                "temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub content: String,
    pub raw_finish_reason: String,
    pub latency_ms: u64,
    /// Transport attempts made, including the successful one.
    pub attempts: u32,
}

impl ChatResponse {
    pub fn retries(&self) -> u32 {
        self.attempts.saturating_sub(1)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("api key variable {0} is not set")]
    MissingApiKey(String),
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider misconfigured: {0}")]
    Config(String),
}

/// Something that can serve chat and embedding calls.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    /// Embeds one batch. Implementations may assume a valid, non-empty batch.
    async fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

/// Shareable provider handle with a bound on concurrent requests.
#[derive(Clone)]
pub struct Provider {
    cfg: ProviderConfig,
    backend: Arc<dyn Backend>,
    slots: Arc<Semaphore>,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider").field("cfg", &self.cfg).finish()
    }
}

impl Provider {
    pub fn new(cfg: ProviderConfig, backend: Arc<dyn Backend>) -> Self {
        let slots = Arc::new(Semaphore::new(cfg.max_parallel.max(1)));
        Self {
            cfg,
            backend,
            slots,
        }
    }

    /// Builds the backend named by `cfg.kind`. With `force_mock` every provider is a mock.
    pub fn from_config(cfg: &ProviderConfig, force_mock: bool) -> Result<Self, ProviderError> {
        cfg.check().or_else(|e| if force_mock { Ok(()) } else { Err(e) })?;
        let backend: Arc<dyn Backend> = if force_mock || cfg.kind == ProviderKind::Mock {
            let mut mock = MockProvider::new(cfg.embedding_dim);
            if let Some(dir) = &cfg.fixtures_dir {
                let fixtures = load_fixture_dir(dir)
                    .map_err(|e| ProviderError::Config(format!("fixtures {}: {e}", dir.display())))?;
                mock = mock.with_fixtures(fixtures);
            }
            Arc::new(mock)
        } else {
            Arc::new(OpenAiBackend::new(cfg.clone(), Arc::new(ReqwestTransport::new(cfg.timeout_ms)?)))
        };
        let mut cfg = cfg.clone();
        cfg.max_parallel = cfg.max_parallel.max(1);
        cfg.embed_batch_size = cfg.embed_batch_size.max(1);
        Ok(Self::new(cfg, backend))
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    pub fn model_id(&self) -> &str {
        &self.cfg.model_id
    }

    pub async fn chat_complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        req.check()?;
        let _slot = self.slots.acquire().await.expect("semaphore never closed");
        self.backend.chat(req).await
    }

    /// Embeds `texts`, batching by `embed_batch_size`. Output order matches input order.
    pub async fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("nothing to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(ProviderError::InvalidRequest(format!("text {i} is empty")));
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.cfg.embed_batch_size) {
            let vectors = {
                let _slot = self.slots.acquire().await.expect("semaphore never closed");
                self.backend.embed(&self.cfg.model_id, chunk).await?
            };
            if vectors.len() != chunk.len() {
                return Err(ProviderError::MalformedResponse(format!(
                    "{} embeddings for {} inputs",
                    vectors.len(),
                    chunk.len()
                )));
            }
            out.extend(vectors);
        }
        let dim = out[0].len();
        if let Some(bad) = out.iter().find(|v| v.len() != dim) {
            return Err(ProviderError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Ok(out)
    }
}
