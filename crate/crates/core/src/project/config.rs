use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::GateConfig;
use crate::domain::{ProbeTemplate, DEFAULT_PROBES_PER_QUESTION};
use crate::generation::{check_template, GenerationOptions};
use crate::metrics::{all_metrics, MetricSet, DEFAULT_JUDGE_THRESHOLD};
use crate::provider::ProviderConfig;

use super::ProjectError;

pub const CONFIG_FILE: &str = "audit.config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub generator: String,
    pub audited: Vec<String>,
    pub embedder: String,
    pub judge: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeBackend {
    /// Chat model asked for a probability.
    #[default]
    Prompted,
    /// Classifier behind `POST {base_url}/judge`.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub data_dir: String,
    pub reports_dir: String,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            reports_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub providers: BTreeMap<String, ProviderConfig>,
    pub roles: Roles,
    pub template: ProbeTemplate,
    #[serde(default)]
    pub gate: GateConfig,
    #[serde(default = "default_threshold")]
    pub judge_threshold: f64,
    #[serde(default)]
    pub judge_backend: JudgeBackend,
    #[serde(default = "default_probes")]
    pub probes_per_question: usize,
    #[serde(default)]
    pub generation: GenerationOptions,
    #[serde(default)]
    pub answer_temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    #[serde(default = "all_metrics")]
    pub metrics: MetricSet,
    #[serde(default)]
    pub paths: DataPaths,
}

fn default_threshold() -> f64 {
    DEFAULT_JUDGE_THRESHOLD
}

fn default_probes() -> usize {
    DEFAULT_PROBES_PER_QUESTION
}

impl Default for ProjectConfig {
    fn default() -> Self {
        let local = "http://localhost:8000/v1";
        let providers = [
            ("generator", ProviderConfig::openai(local, "GENERATOR_API_KEY", "mistral-7b-instruct")),
            ("falcon-7b", ProviderConfig::openai(local, "AUDITED_API_KEY", "falcon-7b-instruct")),
            ("llama-2-7b", ProviderConfig::openai(local, "AUDITED_API_KEY", "llama-2-7b-chat")),
            (
                "gpt-3.5-turbo",
                ProviderConfig::openai("https://api.openai.com/v1", "OPENAI_API_KEY", "gpt-3.5-turbo"),
            ),
            (
                "embedder",
                ProviderConfig::openai("https://api.openai.com/v1", "OPENAI_API_KEY", "text-embedding-3-small"),
            ),
            (
                "judge",
                ProviderConfig::openai("https://api.openai.com/v1", "OPENAI_API_KEY", "gpt-4o-mini"),
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            providers,
            roles: Roles {
                generator: "generator".into(),
                audited: vec!["falcon-7b".into(), "llama-2-7b".into(), "gpt-3.5-turbo".into()],
                embedder: "embedder".into(),
                judge: "judge".into(),
            },
            template: ProbeTemplate::default_structured(),
            gate: GateConfig::default(),
            judge_threshold: DEFAULT_JUDGE_THRESHOLD,
            judge_backend: JudgeBackend::Prompted,
            probes_per_question: DEFAULT_PROBES_PER_QUESTION,
            generation: GenerationOptions::default(),
            answer_temperature: 0.0,
            system_prompt: None,
            metrics: all_metrics(),
            paths: DataPaths::default(),
        }
    }
}

impl ProjectConfig {
    pub fn validate(&self) -> Result<(), ProjectError> {
        let bad = |m: String| Err(ProjectError::Config(m));
        for (role, name) in [
            ("generator", &self.roles.generator),
            ("embedder", &self.roles.embedder),
            ("judge", &self.roles.judge),
        ] {
            self.provider(role, name)?;
        }
        if self.roles.audited.is_empty() {
            return bad("roles.audited must name at least one provider".into());
        }
        for name in &self.roles.audited {
            self.provider("audited", name)?;
        }
        check_template(&self.template).map_err(|e| ProjectError::Config(e.to_string()))?;
        if self.template.probes_per_question != self.probes_per_question {
            return bad(format!(
                "template.probes_per_question ({}) differs from probes_per_question ({})",
                self.template.probes_per_question, self.probes_per_question
            ));
        }
        self.gate.check().map_err(ProjectError::Config)?;
        if !(0.0..=1.0).contains(&self.judge_threshold) {
            return bad(format!("judge_threshold {} outside [0, 1]", self.judge_threshold));
        }
        if [self.answer_temperature, self.generation.temperature].iter().any(|t| t.is_nan() || *t < 0.0) {
            return bad("temperatures must be non-negative".into());
        }
        for (name, p) in &self.providers {
            if p.max_parallel == 0 {
                return bad(format!("provider {name}: max_parallel must be at least 1"));
            }
        }
        Ok(())
    }

    /// Resolves the provider a role points at.
    pub fn provider(&self, role: &str, name: &str) -> Result<&ProviderConfig, ProjectError> {
        self.providers.get(name).ok_or_else(|| ProjectError::Role {
            role: role.to_string(),
            name: name.to_string(),
        })
    }

    /// Short stable digest of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
