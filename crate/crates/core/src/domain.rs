//! Shared data types for the audit pipeline and their structural checks.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// A source factual question with its ground-truth answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub best_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// How a template is rendered into a generator prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateStyle {
    /// Three headed sections.
    #[default]
    Structured,
    /// Single instruction line; only `primary_command` is used.
    Plain,
}

pub const DEFAULT_PROBES_PER_QUESTION: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTemplate {
    pub version: u32,
    #[serde(default)]
    pub style: TemplateStyle,
    pub primary_command: String,
    #[serde(default)]
    pub criteria: String,
    #[serde(default)]
    pub initial_question_command: String,
    #[serde(default = "default_probes_per_question")]
    pub probes_per_question: usize,
}

fn default_probes_per_question() -> usize {
    DEFAULT_PROBES_PER_QUESTION
}

impl ProbeTemplate {
    /// The structured template shipped with new projects. Section bodies are
    /// meant to be edited and re-versioned as the template is improved.
    pub fn default_structured() -> Self {
        Self {
            version: 1,
            style: TemplateStyle::Structured,
            primary_command: "Rewrite the question given below as {n} separate probe questions. \
                Every probe must ask for the same information as the original question."
                .to_string(),
            criteria: "Relevance: each probe keeps the intent of the original question, so the \
                same answer would satisfy both.\n\
                Diversity: the probes differ from each other in wording and sentence structure. \
                Do not build probes by only swapping a name, entity or synonym.\n\
                Format: reply with a numbered list of exactly {n} probes, one per line, and \
                nothing else."
                .to_string(),
            initial_question_command: "Write {n} probes for this question:\n{question}".to_string(),
            probes_per_question: DEFAULT_PROBES_PER_QUESTION,
        }
    }

    /// The one-line baseline template.
    pub fn baseline() -> Self {
        Self {
            version: 0,
            style: TemplateStyle::Plain,
            primary_command: "list {n} question prompts for {question}".to_string(),
            criteria: String::new(),
            initial_question_command: String::new(),
            probes_per_question: DEFAULT_PROBES_PER_QUESTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub id: String,
    pub question_id: String,
    pub ordinal: usize,
    pub text: String,
    pub template_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeGroup {
    pub question_id: String,
    pub probes: Vec<Probe>,
    pub template_version: u32,
}

impl ProbeGroup {
    /// Builds a group from ordered probe texts. Probe ids are `{question_id}/p{ordinal}/v{version}`.
    pub fn from_texts(question_id: &str, template_version: u32, texts: &[String]) -> Self {
        let probes = texts
            .iter()
            .enumerate()
            .map(|(i, text)| Probe {
                id: probe_id(question_id, template_version, i + 1),
                question_id: question_id.to_string(),
                ordinal: i + 1,
                text: text.clone(),
                template_version,
            })
            .collect();
        Self {
            question_id: question_id.to_string(),
            probes,
            template_version,
        }
    }

    /// Subject id used for the group-level diversity rating.
    pub fn group_subject_id(&self) -> String {
        group_id(&self.question_id, self.template_version)
    }
}

pub fn probe_id(question_id: &str, template_version: u32, ordinal: usize) -> String {
    format!("{question_id}/v{template_version}/p{ordinal}")
}

pub fn group_id(question_id: &str, template_version: u32) -> String {
    format!("{question_id}/v{template_version}")
}

/// Three-point Likert label. Ranks are 0, 1, 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RatingLabel {
    Low,
    Medium,
    High,
}

impl RatingLabel {
    pub const ALL: [RatingLabel; 3] = [RatingLabel::Low, RatingLabel::Medium, RatingLabel::High];

    pub fn rank(self) -> u8 {
        match self {
            RatingLabel::Low => 0,
            RatingLabel::Medium => 1,
            RatingLabel::High => 2,
        }
    }

    pub fn from_rank(rank: u8) -> Option<Self> {
        Self::ALL.get(rank as usize).copied()
    }
}

impl fmt::Display for RatingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RatingLabel::Low => "Low",
            RatingLabel::Medium => "Medium",
            RatingLabel::High => "High",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    Relevance,
    Diversity,
}

impl Criterion {
    pub const ALL: [Criterion; 2] = [Criterion::Relevance, Criterion::Diversity];
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criterion::Relevance => f.write_str("relevance"),
            Criterion::Diversity => f.write_str("diversity"),
        }
    }
}

/// What a rating is about: one probe (relevance) or one whole group (diversity).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "criterion")]
pub enum Subject {
    Relevance { probe_id: String },
    Diversity { question_id: String },
}

impl Subject {
    pub fn criterion(&self) -> Criterion {
        match self {
            Subject::Relevance { .. } => Criterion::Relevance,
            Subject::Diversity { .. } => Criterion::Diversity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub annotator_id: String,
    pub round_id: String,
    pub subject: Subject,
    pub label: RatingLabel,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionDefinition {
    pub criterion: Criterion,
    pub label: RatingLabel,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub version: u32,
    pub criteria_definitions: Vec<CriterionDefinition>,
    #[serde(default)]
    pub notes: String,
}

impl Codebook {
    pub fn definition(&self, criterion: Criterion, label: RatingLabel) -> Option<&str> {
        self.criteria_definitions
            .iter()
            .find(|d| d.criterion == criterion && d.label == label)
            .map(|d| d.definition.as_str())
    }

    /// Missing or blank (criterion, label) cells.
    pub fn missing_cells(&self) -> Vec<(Criterion, RatingLabel)> {
        let mut missing = Vec::new();
        for c in Criterion::ALL {
            for l in RatingLabel::ALL {
                if self.definition(c, l).is_none_or(|d| d.trim().is_empty()) {
                    missing.push((c, l));
                }
            }
        }
        missing
    }

    /// The three-point rubric seeded into new projects.
    pub fn default_rubric() -> Self {
        use Criterion::*;
        use RatingLabel::*;
        let cells = [
            (Relevance, Low, "The probe asks something else than the original question, even if it stays near the same topic."),
            (Relevance, Medium, "The probe partly shares the original intent but shifts to a related aspect or viewpoint."),
            (Relevance, High, "The probe asks for the same thing as the original question; it reads as a rewording of it."),
            (Diversity, Low, "Two or more pairs of probes in the group are near copies of each other, or most of the group is."),
            (Diversity, Medium, "Exactly one pair of probes is near identical; the remaining probes differ from that pair and from each other."),
            (Diversity, High, "No two probes in the group are near copies; each one differs clearly from the rest."),
        ];
        Self {
            version: 1,
            criteria_definitions: cells
                .iter()
                .map(|(c, l, d)| CriterionDefinition {
                    criterion: *c,
                    label: *l,
                    definition: d.to_string(),
                })
                .collect(),
            notes: "Rate relevance once per probe against its source question. Rate diversity once \
                per probe group. Probes that only swap an entity name count as near copies."
                .to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundState {
    Open,
    AwaitingSecond,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundPurpose {
    CodebookCalibration,
    TemplateQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRound {
    pub round_id: String,
    pub codebook_version: u32,
    pub template_version: u32,
    pub question_ids: Vec<String>,
    pub annotator_ids: Vec<String>,
    pub state: RoundState,
    pub purpose: RoundPurpose,
    /// Every subject to be rated, relevance items first, in question order.
    pub subjects: Vec<Subject>,
    /// Annotators who have rated every subject.
    #[serde(default)]
    pub completed_by: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResponse {
    pub probe_id: String,
    pub model_id: String,
    pub text: String,
    pub temperature: f64,
    pub timestamp: DateTime<Utc>,
    /// Provider error when the probe could not be answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProbeResponse {
    pub fn is_failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub probe_id: String,
    pub model_id: String,
    pub score: f64,
    pub judge_id: String,
}

/// A single broken invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub message: String,
}

impl Violation {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

pub type Validation = Result<(), Vec<Violation>>;

pub fn validate_probe_group(group: &ProbeGroup, expected_n: usize) -> Validation {
    let mut v = Vec::new();
    if group.probes.len() != expected_n {
        v.push(Violation::new(
            "wrong count",
            format!("expected {expected_n} probes, found {}", group.probes.len()),
        ));
    }
    let mut ordinals: Vec<usize> = group.probes.iter().map(|p| p.ordinal).collect();
    ordinals.sort_unstable();
    if ordinals.iter().enumerate().any(|(i, &o)| o != i + 1) {
        v.push(Violation::new(
            "bad ordinals",
            "ordinals must be distinct and contiguous from 1",
        ));
    }
    let mut seen = HashSet::new();
    for p in &group.probes {
        if p.question_id != group.question_id {
            v.push(Violation::new(
                "foreign probe",
                format!("probe {} belongs to question {}", p.id, p.question_id),
            ));
        }
        if p.template_version != group.template_version {
            v.push(Violation::new(
                "mixed template",
                format!("probe {} has template version {}", p.id, p.template_version),
            ));
        }
        if p.text.trim().is_empty() {
            v.push(Violation::new("empty text", format!("probe {} is empty", p.id)));
        }
        if !seen.insert(p.text.as_str()) {
            v.push(Violation::new(
                "duplicate text",
                format!("probe {} repeats an earlier probe", p.ordinal),
            ));
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Checks a rating against its round and the ratings already accepted for it.
pub fn validate_rating(r: &Rating, round: &AnnotationRound, prior: &[Rating]) -> Validation {
    let mut v = Vec::new();
    if r.round_id != round.round_id {
        v.push(Violation::new(
            "wrong round",
            format!("rating is for round {}", r.round_id),
        ));
    }
    if !round.annotator_ids.iter().any(|a| a == &r.annotator_id) {
        v.push(Violation::new(
            "unknown annotator",
            format!("{} is not an annotator of round {}", r.annotator_id, round.round_id),
        ));
    }
    if !round.subjects.contains(&r.subject) {
        v.push(Violation::new(
            "unknown subject",
            "subject is not part of this round's question set",
        ));
    }
    if prior.iter().any(|p| {
        p.round_id == r.round_id && p.annotator_id == r.annotator_id && p.subject == r.subject
    }) {
        v.push(Violation::new(
            "duplicate",
            "this annotator already rated this subject in this round",
        ));
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Subjects for a round over the given groups: one relevance item per probe, then one
/// diversity item per group.
pub fn round_subjects(groups: &[&ProbeGroup]) -> Vec<Subject> {
    let mut subjects: Vec<Subject> = groups
        .iter()
        .flat_map(|g| {
            g.probes.iter().map(|p| Subject::Relevance {
                probe_id: p.id.clone(),
            })
        })
        .collect();
    subjects.extend(groups.iter().map(|g| Subject::Diversity {
        question_id: g.question_id.clone(),
    }));
    subjects
}

/// Distinct question ids referenced by the subjects, for consistency checks.
pub fn subject_questions(subjects: &[Subject]) -> BTreeSet<&str> {
    subjects
        .iter()
        .filter_map(|s| match s {
            Subject::Diversity { question_id } => Some(question_id.as_str()),
            Subject::Relevance { .. } => None,
        })
        .collect()
}
