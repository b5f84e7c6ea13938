//! OpenAI-compatible HTTP backend.

use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use serde::Deserialize;
use serde_json::json;

use super::{Backend, ChatRequest, ChatResponse, ProviderConfig, ProviderError};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Connection-level failure (refused, reset, timed out). Always retried.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportFailure(pub String);

/// Minimal POST-JSON transport so retry logic can be tested without a network.
#[async_trait]
pub trait Transport: Send + Sync {
    async fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &[u8],
    ) -> Result<HttpReply, TransportFailure>;
}

pub struct ReqwestTransport {
    client: reqwest::Client,
}

impl ReqwestTransport {
    pub fn new(timeout_ms: u64) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self { client })
    }
}

#[async_trait]
impl Transport for ReqwestTransport {
    async fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &[u8],
    ) -> Result<HttpReply, TransportFailure> {
        let mut req = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .body(body.to_vec());
        if let Some(key) = bearer {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| TransportFailure(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().await.map_err(|e| TransportFailure(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

pub struct OpenAiBackend {
    cfg: ProviderConfig,
    transport: Arc<dyn Transport>,
}

#[derive(Deserialize)]
struct ChatCompletion {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Option<ChoiceMessage>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingList {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

fn is_transient(status: u16) -> bool {
    status == 429 || status == 408 || (500..600).contains(&status)
}

impl OpenAiBackend {
    pub fn new(cfg: ProviderConfig, transport: Arc<dyn Transport>) -> Self {
        Self { cfg, transport }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        if self.cfg.api_key_env.is_empty() {
            return Ok(None);
        }
        std::env::var(&self.cfg.api_key_env)
            .map(Some)
            .map_err(|_| ProviderError::MissingApiKey(self.cfg.api_key_env.clone()))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.cfg.backoff_initial_ms.saturating_mul(1u64 << attempt.min(16));
        let jitter = if base > 1 {
            rand::thread_rng().gen_range(0..=base / 2)
        } else {
            0
        };
        Duration::from_millis(base + jitter)
    }

    /// POSTs `body` and returns the 2xx body with the number of attempts used.
    /// The same bytes are sent on every attempt.
    pub(crate) async fn post(&self, path: &str, body: &[u8]) -> Result<(String, u32), ProviderError> {
        let key = self.api_key()?;
        let url = self.url(path);
        let mut attempt = 0u32;
        loop {
            let outcome = self.transport.post_json(&url, key.as_deref(), body).await;
            let failure = match outcome {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    return Ok((reply.body, attempt + 1));
                }
                Ok(reply) if reply.status == 401 || reply.status == 403 => {
                    return Err(ProviderError::Auth {
                        status: reply.status,
                    });
                }
                Ok(reply) if is_transient(reply.status) => {
                    format!("HTTP {}: {}", reply.status, reply.body)
                }
                Ok(reply) => {
                    return Err(ProviderError::Http {
                        status: reply.status,
                        body: reply.body,
                    });
                }
                Err(TransportFailure(msg)) => msg,
            };
            if attempt >= self.cfg.retry_limit {
                return Err(ProviderError::Transport {
                    attempts: attempt + 1,
                    message: failure,
                });
            }
            tokio::time::sleep(self.backoff(attempt)).await;
            attempt += 1;
        }
    }
}

#[async_trait]
impl Backend for OpenAiBackend {
    async fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let body = json!({
            "model": req.model_id,
            "messages": req.messages,
            "temperature": req.temperature,
        });
        let bytes = serde_json::to_vec(&body).expect("json value serializes");
        let started = Instant::now();
        let (text, attempts) = self.post("chat/completions", &bytes).await?;
        let parsed: ChatCompletion = serde_json::from_str(&text)
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::MalformedResponse("no choices".into()))?;
        let content = choice
            .message
            .and_then(|m| m.content)
            .ok_or_else(|| ProviderError::MalformedResponse("choice has no message content".into()))?;
        Ok(ChatResponse {
            content,
            raw_finish_reason: choice.finish_reason.unwrap_or_default(),
            latency_ms: started.elapsed().as_millis() as u64,
            attempts,
        })
    }

    async fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = json!({ "model": model_id, "input": texts });
        let bytes = serde_json::to_vec(&body).expect("json value serializes");
        let (text, _) = self.post("embeddings", &bytes).await?;
        let parsed: EmbeddingList = serde_json::from_str(&text)
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        let mut items = parsed.data;
        if items.iter().all(|i| i.index.is_some()) {
            items.sort_by_key(|i| i.index);
        }
        Ok(items.into_iter().map(|i| i.embedding).collect())
    }
}
