//! Submitting probes to the audited model.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinSet;

use crate::domain::{ProbeGroup, ProbeResponse, Question};
use crate::provider::{ChatMessage, ChatRequest, Provider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRunConfig {
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub system_prompt: Option<String>,
    pub run_id: String,
    /// Also answer each source question (probe id `{question_id}/original`).
    #[serde(default)]
    pub answer_originals: bool,
}

impl AnswerRunConfig {
    pub fn new(model_id: &str, run_id: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            temperature: 0.0,
            system_prompt: None,
            run_id: run_id.to_string(),
            answer_originals: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerError {
    #[error("run {run_id} already answered probes for model {model_id}")]
    RunExists { run_id: String, model_id: String },
    #[error("no probe groups to answer")]
    EmptyDataset,
    #[error("temperature must be non-negative")]
    BadTemperature,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub answered: usize,
    pub failed: usize,
    pub total: usize,
}

/// Probes already answered, per (run id, model id).
#[derive(Debug, Default)]
pub struct RunRegistry {
    answered: Mutex<HashMap<(String, String), HashSet<String>>>,
}

impl RunRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeds the registry from persisted responses.
    pub fn from_records<'a>(records: impl IntoIterator<Item = (&'a str, &'a ProbeResponse)>) -> Self {
        let reg = Self::default();
        {
            let mut map = reg.answered.lock().unwrap();
            for (run_id, r) in records {
                map.entry((run_id.to_string(), r.model_id.clone()))
                    .or_default()
                    .insert(r.probe_id.clone());
            }
        }
        reg
    }

    pub fn has_run(&self, run_id: &str, model_id: &str) -> bool {
        self.answered
            .lock()
            .unwrap()
            .get(&(run_id.to_string(), model_id.to_string()))
            .is_some_and(|s| !s.is_empty())
    }

    /// Claims every probe id; fails without claiming anything if one is taken.
    fn claim(&self, cfg: &AnswerRunConfig, probe_ids: &[&str]) -> Result<(), AnswerError> {
        let mut map = self.answered.lock().unwrap();
        let set = map
            .entry((cfg.run_id.clone(), cfg.model_id.clone()))
            .or_default();
        if probe_ids.iter().any(|p| set.contains(*p)) {
            return Err(AnswerError::RunExists {
                run_id: cfg.run_id.clone(),
                model_id: cfg.model_id.clone(),
            });
        }
        set.extend(probe_ids.iter().map(|p| p.to_string()));
        Ok(())
    }
}

fn request(cfg: &AnswerRunConfig, text: &str) -> ChatRequest {
    let mut messages = Vec::new();
    if let Some(sys) = &cfg.system_prompt {
        messages.push(ChatMessage::system(sys.clone()));
    }
    messages.push(ChatMessage::user(text));
    ChatRequest {
        model_id: cfg.model_id.clone(),
        messages,
        temperature: cfg.temperature,
    }
}

async fn answer_one(provider: Provider, cfg: AnswerRunConfig, probe_id: String, text: String) -> ProbeResponse {
    let outcome = provider.chat_complete(&request(&cfg, &text)).await;
    let (text, error) = match outcome {
        Ok(r) if !r.content.trim().is_empty() => (r.content, None),
        Ok(_) => (String::new(), Some("empty response".to_string())),
        Err(e) => (String::new(), Some(e.to_string())),
    };
    ProbeResponse {
        probe_id,
        model_id: cfg.model_id,
        text,
        temperature: cfg.temperature,
        timestamp: Utc::now(),
        error,
    }
}

/// Answers `(probe_id, text)` items concurrently and returns responses in input order.
async fn answer_items(provider: &Provider, cfg: &AnswerRunConfig, items: Vec<(String, String)>) -> Vec<ProbeResponse> {
    let mut set = JoinSet::new();
    for (i, (probe_id, text)) in items.into_iter().enumerate() {
        let (p, c) = (provider.clone(), cfg.clone());
        set.spawn(async move { (i, answer_one(p, c, probe_id, text).await) });
    }
    let mut out: Vec<Option<ProbeResponse>> = vec![None; set.len()];
    while let Some(joined) = set.join_next().await {
        let (i, r) = joined.expect("answer task panicked");
        out[i] = Some(r);
    }
    out.into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// One response per probe, in ordinal order. Provider failures are recorded on
/// the response instead of aborting the group.
pub async fn answer_probe_group(
    provider: &Provider,
    cfg: &AnswerRunConfig,
    group: &ProbeGroup,
    registry: &RunRegistry,
) -> Result<Vec<ProbeResponse>, AnswerError> {
    if cfg.temperature.is_nan() || cfg.temperature < 0.0 {
        return Err(AnswerError::BadTemperature);
    }
    let mut probes: Vec<_> = group.probes.iter().collect();
    probes.sort_by_key(|p| p.ordinal);
    let ids: Vec<&str> = probes.iter().map(|p| p.id.as_str()).collect();
    registry.claim(cfg, &ids)?;
    let items = probes.iter().map(|p| (p.id.clone(), p.text.clone())).collect();
    Ok(answer_items(provider, cfg, items).await)
}

pub async fn answer_dataset(
    provider: &Provider,
    cfg: &AnswerRunConfig,
    groups: &[ProbeGroup],
    registry: &RunRegistry,
) -> Result<(Vec<ProbeResponse>, RunSummary), AnswerError> {
    if groups.is_empty() {
        return Err(AnswerError::EmptyDataset);
    }
    if cfg.temperature.is_nan() || cfg.temperature < 0.0 {
        return Err(AnswerError::BadTemperature);
    }
    let mut items = Vec::new();
    for g in groups {
        let mut probes: Vec<_> = g.probes.iter().collect();
        probes.sort_by_key(|p| p.ordinal);
        items.extend(probes.iter().map(|p| (p.id.clone(), p.text.clone())));
    }
    let ids: Vec<&str> = items.iter().map(|(id, _)| id.as_str()).collect();
    registry.claim(cfg, &ids)?;
    let responses = answer_items(provider, cfg, items).await;
    let failed = responses.iter().filter(|r| r.is_failed()).count();
    let summary = RunSummary {
        answered: responses.len() - failed,
        failed,
        total: responses.len(),
    };
    Ok((responses, summary))
}

pub fn original_probe_id(question_id: &str) -> String {
    format!("{question_id}/original")
}

/// Answers the source questions themselves, for side-by-side inspection.
pub async fn answer_originals(
    provider: &Provider,
    cfg: &AnswerRunConfig,
    questions: &[Question],
    registry: &RunRegistry,
) -> Result<Vec<ProbeResponse>, AnswerError> {
    let items: Vec<(String, String)> = questions
        .iter()
        .map(|q| (original_probe_id(&q.id), q.text.clone()))
        .collect();
    let ids: Vec<&str> = items.iter().map(|(id, _)| id.as_str()).collect();
    registry.claim(cfg, &ids)?;
    Ok(answer_items(provider, cfg, items).await)
}
