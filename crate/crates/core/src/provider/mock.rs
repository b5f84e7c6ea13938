//! Deterministic offline provider.
//!
//! Replies are a pure function of the request: a fixture lookup keyed by
//! [`fingerprint`], falling back to [`mock_reply`] (or a caller-supplied
//! function). Embeddings hash each token into a signed bucket and normalize.

use std::collections::HashMap;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use async_trait::async_trait;
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{Backend, ChatRequest, ChatResponse, ProviderError};
use crate::generation::{CORRECTIVE_PREFIX, INITIAL_QUESTION_HEADING};
use crate::metrics::{tokenize, JUDGE_SCORE_CUE};

type Fallback = Arc<dyn Fn(&ChatRequest) -> String + Send + Sync>;

pub struct MockProvider {
    fixtures: HashMap<String, String>,
    fallback: Fallback,
    dim: usize,
    delay: Option<Duration>,
    chat_calls: AtomicUsize,
    embed_calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

/// Stable hex digest of (model id, message contents, temperature).
pub fn fingerprint(req: &ChatRequest) -> String {
    let mut h = Sha256::new();
    h.update(req.model_id.as_bytes());
    h.update([0x1f]);
    for (i, m) in req.messages.iter().enumerate() {
        if i > 0 {
            h.update([0x1e]);
        }
        h.update(m.content.as_bytes());
    }
    h.update([0x1f]);
    h.update(format!("{:?}", req.temperature).as_bytes());
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
        h.update([0]);
    }
    h.finalize().into()
}

fn unit_interval(bytes: &[u8]) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

/// Loads `*` files from `dir`: first line is the fingerprint, the rest is the canned body.
pub fn load_fixture_dir(dir: &Path) -> io::Result<HashMap<String, String>> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    let mut fixtures = HashMap::new();
    for e in entries {
        if !e.file_type()?.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(e.path())?;
        let (fp, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
        fixtures.insert(fp.trim().to_string(), body.to_string());
    }
    Ok(fixtures)
}

/// Unit-norm pseudo-embedding of `text`.
pub fn mock_embedding(text: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(1);
    let mut v = vec![0.0; dim];
    for token in tokenize(text) {
        let d = digest(&[b"tok", token.as_bytes()]);
        for k in 0..2 {
            let bucket = (u32::from_le_bytes([d[4 * k], d[4 * k + 1], d[4 * k + 2], d[4 * k + 3]])
                as usize)
                % dim;
            let sign = if d[16 + k] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
    }
    if v.iter().all(|x| *x == 0.0) {
        for (i, x) in v.iter_mut().enumerate() {
            let d = digest(&[b"txt", text.as_bytes(), &(i as u64).to_le_bytes()]);
            *x = unit_interval(&d) * 2.0 - 1.0;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
        return v;
    }
    v.iter().map(|x| x / norm).collect()
}

const PROBE_OPENERS: [&str; 8] = [
    "",
    "Could you tell me: ",
    "In other words, ",
    "I would like to know: ",
    "Quick question: ",
    "Put simply, ",
    "Help me understand: ",
    "Briefly, ",
];

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

fn first_number(s: &str) -> Option<usize> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\b(\d{1,3})\b").unwrap());
    re.captures(s).and_then(|c| c[1].parse().ok())
}

fn plain_probe_request(s: &str) -> Option<(usize, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?s)^list (\d+) question prompts for (.+)$").unwrap());
    let first = s.split(CORRECTIVE_PREFIX).next().unwrap_or(s).trim();
    re.captures(first)
        .map(|c| (c[1].parse().unwrap_or(5), c[2].trim().to_string()))
}

fn probe_list(n: usize, question: &str) -> String {
    let body = question.trim();
    (0..n)
        .map(|i| {
            let opener = PROBE_OPENERS[i % PROBE_OPENERS.len()];
            let text = if opener.is_empty() {
                body.to_string()
            } else {
                format!("{opener}{}", lower_first(body))
            };
            let text = if i >= PROBE_OPENERS.len() {
                format!("{text} (take {})", i + 1)
            } else {
                text
            };
            format!("{}. {text}", i + 1)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Default role-agnostic reply: a numbered probe list for probe prompts, a decimal for
/// judge prompts, otherwise a short pseudo-answer.
pub fn mock_reply(req: &ChatRequest) -> String {
    let prompt = req.last_user_content();
    if let Some((n, q)) = plain_probe_request(prompt) {
        return probe_list(n, &q);
    }
    if prompt.contains(INITIAL_QUESTION_HEADING) {
        let n = first_number(prompt).unwrap_or(5);
        let question = prompt
            .lines()
            .map(str::trim)
            .rfind(|l| !l.is_empty() && !l.starts_with(CORRECTIVE_PREFIX))
            .unwrap_or("");
        return probe_list(n, question);
    }
    let d = digest(&[req.model_id.as_bytes(), prompt.as_bytes()]);
    let u = unit_interval(&d);
    if prompt.contains(JUDGE_SCORE_CUE) {
        let score = 1.0 - 0.7 * u * u * u;
        return format!("{score:.2}");
    }
    const ANSWERS: [&str; 4] = [
        "As far as is known, nothing unusual happens.",
        "It depends on the circumstances, but generally no.",
        "Yes, that is commonly reported.",
        "There is no reliable evidence for that.",
    ];
    let pick = ANSWERS[(d[8] as usize) % ANSWERS.len()];
    format!("{pick} ({} on: {})", req.model_id, prompt.trim())
}

impl MockProvider {
    pub fn new(dim: usize) -> Self {
        Self {
            fixtures: HashMap::new(),
            fallback: Arc::new(mock_reply),
            dim,
            delay: None,
            chat_calls: AtomicUsize::new(0),
            embed_calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn with_fixtures(mut self, fixtures: HashMap<String, String>) -> Self {
        self.fixtures.extend(fixtures);
        self
    }

    pub fn with_fixture(mut self, req: &ChatRequest, body: impl Into<String>) -> Self {
        self.fixtures.insert(fingerprint(req), body.into());
        self
    }

    pub fn with_fallback(mut self, f: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> Self {
        self.fallback = Arc::new(f);
        self
    }

    /// Holds every chat call open for `delay`, to exercise concurrency limits.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Backend for MockProvider {
    async fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if let Some(d) = self.delay {
            tokio::time::sleep(d).await;
        }
        let content = match self.fixtures.get(&fingerprint(req)) {
            Some(body) => body.clone(),
            None => (self.fallback)(req),
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        Ok(ChatResponse {
            content,
            raw_finish_reason: "stop".into(),
            latency_ms: 0,
            attempts: 1,
        })
    }

    async fn embed(&self, _model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts.iter().map(|t| mock_embedding(t, self.dim)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[tokio::test]
    async fn same_request_same_bytes() {
        let m = MockProvider::new(8);
        let req = ChatRequest::user("m", "Why is the sky blue?");
        let a = m.chat(&req).await.unwrap().content;
        let b = m.chat(&req).await.unwrap().content;
        assert_eq!(a, b);
    }

    #[tokio::test]
    async fn fixture_hit_and_miss() {
        let hit = ChatRequest::user("m", "canned?");
        let miss = ChatRequest::user("m", "other?");
        let m = MockProvider::new(8)
            .with_fixture(&hit, "CANNED BODY\nline 2")
            .with_fallback(|_| "fallback".to_string());
        assert_eq!(m.chat(&hit).await.unwrap().content, "CANNED BODY\nline 2");
        assert_eq!(m.chat(&miss).await.unwrap().content, "fallback");
    }

    #[test]
    fn fingerprint_depends_on_temperature_and_model() {
        let a = ChatRequest::user("m", "x");
        let mut b = a.clone();
        b.temperature = 0.7;
        let mut c = a.clone();
        c.model_id = "n".into();
        assert_ne!(fingerprint(&a), fingerprint(&b));
        assert_ne!(fingerprint(&a), fingerprint(&c));
        assert_eq!(fingerprint(&a), fingerprint(&a.clone()));
    }

    #[test]
    fn fixture_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let req = ChatRequest::user("m", "hi");
        std::fs::write(dir.path().join("a.txt"), format!("{}\n1. x\n2. y", fingerprint(&req))).unwrap();
        let f = load_fixture_dir(dir.path()).unwrap();
        assert_eq!(f[&fingerprint(&req)], "1. x\n2. y");
    }

    #[test]
    fn plain_probe_prompt_gets_numbered_list() {
        let out = mock_reply(&ChatRequest::user("m", "list 3 question prompts for Is it cold?"));
        assert_eq!(out.lines().count(), 3);
        assert!(out.starts_with("1. Is it cold?"));
    }

    proptest! {
        #[test]
        fn embeddings_are_unit_norm(text in ".{0,40}", dim in 1usize..96) {
            let v = mock_embedding(&text, dim);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
            prop_assert_eq!(v, mock_embedding(&text, dim));
        }
    }
}
