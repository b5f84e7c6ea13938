//! Probe generation: render the template, ask the generator model, parse its list.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_probe_group, ProbeGroup, ProbeTemplate, Question, TemplateStyle};
use crate::provider::{ChatRequest, Provider, ProviderError};

pub const PRIMARY_COMMAND_HEADING: &str = "PRIMARY COMMAND";
pub const CRITERIA_HEADING: &str = "CRITERIA";
pub const INITIAL_QUESTION_HEADING: &str = "INITIAL QUESTION COMMAND";

/// Start of the instruction appended when a reply could not be parsed.
pub const CORRECTIVE_PREFIX: &str = "Return exactly";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub template_version: u32,
    pub question_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template section {0} is empty")]
    EmptySection(&'static str),
    #[error("question {0} has empty text")]
    EmptyQuestion(String),
    #[error("probes_per_question must be at least 1")]
    ZeroProbes,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("found {found} numbered probes, expected {expected}")]
    Count { found: usize, expected: usize },
    #[error("probes {first} and {second} are identical")]
    Duplicate { first: usize, second: usize },
    #[error("enumeration jumps from {previous} to {found}")]
    OutOfOrder { previous: usize, found: usize },
    #[error("probe {0} is empty")]
    EmptyProbe(usize),
    #[error("expected_n must be at least 1")]
    ZeroExpected,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("generation failed after {attempts} attempts: {last}")]
    GenerationFailed { attempts: u32, last: ParseError },
    #[error("generated group is invalid: {0}")]
    InvalidGroup(String),
}

pub fn check_template(template: &ProbeTemplate) -> Result<(), TemplateError> {
    if template.probes_per_question == 0 {
        return Err(TemplateError::ZeroProbes);
    }
    if template.primary_command.trim().is_empty() {
        return Err(TemplateError::EmptySection(PRIMARY_COMMAND_HEADING));
    }
    if template.style == TemplateStyle::Structured {
        if template.criteria.trim().is_empty() {
            return Err(TemplateError::EmptySection(CRITERIA_HEADING));
        }
        if template.initial_question_command.trim().is_empty() {
            return Err(TemplateError::EmptySection(INITIAL_QUESTION_HEADING));
        }
    }
    Ok(())
}

/// Substitutes `{n}` and then `{question}`. Appends the question on its own line
/// when the section has no placeholder.
fn fill(section: &str, n: usize, question: Option<&str>) -> String {
    let with_n = section.trim().replace("{n}", &n.to_string());
    match question {
        None => with_n,
        Some(q) if with_n.contains("{question}") => with_n.replace("{question}", q),
        Some(q) => format!("{with_n}\n{q}"),
    }
}

pub fn render_probe_prompt(
    template: &ProbeTemplate,
    question: &Question,
) -> Result<RenderedPrompt, TemplateError> {
    check_template(template)?;
    let q = question.text.trim();
    if q.is_empty() {
        return Err(TemplateError::EmptyQuestion(question.id.clone()));
    }
    let n = template.probes_per_question;
    let text = match template.style {
        TemplateStyle::Plain => fill(&template.primary_command, n, Some(q)),
        TemplateStyle::Structured => format!(
            "{PRIMARY_COMMAND_HEADING}\n{}\n\n{CRITERIA_HEADING}\n{}\n\n{INITIAL_QUESTION_HEADING}\n{}",
            fill(&template.primary_command, n, None),
            fill(&template.criteria, n, None),
            fill(&template.initial_question_command, n, Some(q)),
        ),
    };
    Ok(RenderedPrompt {
        text,
        template_version: template.version,
        question_id: question.id.clone(),
    })
}

fn enumerated_line(line: &str) -> Option<(usize, &str)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"^\s*(\d{1,3})[.):](?:\s+(\S.*)|([^\d\s].*))$").unwrap()
    });
    let caps = re.captures(line)?;
    let n = caps[1].parse().ok()?;
    let body = caps.get(2).or_else(|| caps.get(3))?.as_str();
    Some((n, body))
}

fn strip_probe(text: &str) -> &str {
    const QUOTES: [(char, char); 4] = [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’')];
    let mut t = text.trim();
    for (open, close) in QUOTES {
        if t.chars().count() >= 2 && t.starts_with(open) && t.ends_with(close) {
            t = t[open.len_utf8()..t.len() - close.len_utf8()].trim();
            break;
        }
    }
    t
}

/// Extracts exactly `expected_n` probe texts from a numbered list.
///
/// Accepted enumerators are `1.`, `1)` and `1:`, in any mix. Numbering must count
/// up by one; a line numbered `1` starts a new list. The first list with
/// `expected_n` items is returned, so an example list in a preamble is skipped.
pub fn parse_probe_list(raw: &str, expected_n: usize) -> Result<Vec<String>, ParseError> {
    if expected_n == 0 {
        return Err(ParseError::ZeroExpected);
    }
    let mut runs: Vec<Vec<&str>> = Vec::new();
    for (n, body) in raw.lines().filter_map(enumerated_line) {
        match runs.last_mut() {
            Some(run) if n == run.len() + 1 => run.push(body),
            _ if n == 1 => runs.push(vec![body]),
            Some(run) => {
                return Err(ParseError::OutOfOrder {
                    previous: run.len(),
                    found: n,
                })
            }
            None => {
                return Err(ParseError::OutOfOrder {
                    previous: 0,
                    found: n,
                })
            }
        }
    }
    let Some(run) = runs.iter().find(|r| r.len() == expected_n) else {
        let found = runs.iter().map(Vec::len).max().unwrap_or(0);
        return Err(ParseError::Count {
            found,
            expected: expected_n,
        });
    };
    let texts: Vec<String> = run.iter().map(|b| strip_probe(b).to_string()).collect();
    for (i, t) in texts.iter().enumerate() {
        if t.is_empty() {
            return Err(ParseError::EmptyProbe(i + 1));
        }
        if let Some(j) = texts[..i].iter().position(|u| u == t) {
            return Err(ParseError::Duplicate {
                first: j + 1,
                second: i + 1,
            });
        }
    }
    Ok(texts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub temperature: f64,
    /// Extra attempts after the first unparseable reply.
    pub regeneration_limit: u32,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            regeneration_limit: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedGroup {
    pub group: ProbeGroup,
    pub regenerations: u32,
}

pub async fn generate_probe_group(
    provider: &Provider,
    template: &ProbeTemplate,
    question: &Question,
    opts: &GenerationOptions,
) -> Result<GeneratedGroup, GenerationError> {
    let prompt = render_probe_prompt(template, question)?;
    let n = template.probes_per_question;
    let corrective = format!(
        "{}\n\n{CORRECTIVE_PREFIX} {n} numbered questions, one per line.",
        prompt.text
    );
    let mut last = None;
    for attempt in 0..=opts.regeneration_limit {
        let content = if attempt == 0 { &prompt.text } else { &corrective };
        let req = ChatRequest {
            model_id: provider.model_id().to_string(),
            messages: vec![crate::provider::ChatMessage::user(content.clone())],
            temperature: opts.temperature,
        };
        let reply = provider.chat_complete(&req).await?;
        match parse_probe_list(&reply.content, n) {
            Ok(texts) => {
                let group = ProbeGroup::from_texts(&question.id, template.version, &texts);
                validate_probe_group(&group, n).map_err(|v| {
                    GenerationError::InvalidGroup(
                        v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
                    )
                })?;
                return Ok(GeneratedGroup {
                    group,
                    regenerations: attempt,
                });
            }
            Err(e) => last = Some(e),
        }
    }
    Err(GenerationError::GenerationFailed {
        attempts: opts.regeneration_limit + 1,
        last: last.expect("at least one attempt"),
    })
}
