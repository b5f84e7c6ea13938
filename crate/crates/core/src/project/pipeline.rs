//! Pipeline stages over a [`Project`]: import, generate, answer, score, and
//! annotation rounds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::task::JoinSet;

use super::{
    JudgeBackend, Project, ProjectError, Record, PROBES, QUESTIONS, RATINGS, RESPONSES, ROUNDS,
    SCORES,
};
use crate::annotation::{
    compute_agreement, evaluate_gate, quality_fractions, AgreementResult, GateOutcome,
    QualityFractions, RoundBook,
};
use crate::answering::{answer_dataset, answer_originals, AnswerRunConfig, RunRegistry, RunSummary};
use crate::domain::{
    AnnotationRound, Probe, ProbeGroup, ProbeResponse, Question, Rating, RatingLabel,
    RoundPurpose, RoundState, Subject,
};
use crate::generation::generate_probe_group;
use crate::metrics::{score_question, Judge, Metric, PromptedJudge, QuestionScorecard, RemoteJudge};
use crate::provider::{Provider, ReqwestTransport};

/// Knobs shared by the stages that call providers.
#[derive(Debug, Clone, Default)]
pub struct StageOptions {
    /// Replace every provider with the deterministic mock.
    pub force_mock: bool,
}

fn provider(project: &Project, role: &str, name: &str, opts: &StageOptions) -> Result<Provider, ProjectError> {
    let cfg = project.config().provider(role, name)?;
    Ok(Provider::from_config(cfg, opts.force_mock)?)
}

// ---------------------------------------------------------------- import

#[derive(Debug, Deserialize)]
struct JsonQuestion {
    question: Option<String>,
    best_answer: Option<String>,
    #[serde(default)]
    category: Option<String>,
}

struct RawQuestion {
    line: usize,
    text: String,
    best_answer: String,
    category: Option<String>,
}

fn required(file: &str, line: usize, field: &str, v: Option<String>) -> Result<String, ProjectError> {
    match v.map(|s| s.trim().to_string()) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(ProjectError::Parse {
            file: file.to_string(),
            line,
            message: format!("missing {field}"),
        }),
    }
}

fn header_key(h: &str) -> String {
    h.trim().to_lowercase().replace([' ', '-'], "_")
}

fn read_csv(path: &Path, file: &str) -> Result<Vec<RawQuestion>, ProjectError> {
    let parse_err = |line: usize, e: &dyn std::fmt::Display| ProjectError::Parse {
        file: file.to_string(),
        line,
        message: e.to_string(),
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(1, &e))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, &e))?
        .iter()
        .map(header_key)
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let q = col("question").ok_or_else(|| parse_err(1, &"no question column"))?;
    let a = col("best_answer").ok_or_else(|| parse_err(1, &"no best_answer column"))?;
    let c = col("category");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, &e)
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| rec.get(i).map(str::to_string);
        out.push(RawQuestion {
            line,
            text: required(file, line, "question", get(q))?,
            best_answer: required(file, line, "best_answer", get(a))?,
            category: c.and_then(get).filter(|s| !s.trim().is_empty()),
        });
    }
    Ok(out)
}

fn read_jsonl(text: &str, file: &str) -> Result<Vec<RawQuestion>, ProjectError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        if l.trim().is_empty() {
            continue;
        }
        let j: JsonQuestion = serde_json::from_str(l).map_err(|e| ProjectError::Parse {
            file: file.to_string(),
            line,
            message: e.to_string(),
        })?;
        out.push(RawQuestion {
            line,
            text: required(file, line, "question", j.question)?,
            best_answer: required(file, line, "best_answer", j.best_answer)?,
            category: j.category.filter(|s| !s.trim().is_empty()),
        });
    }
    Ok(out)
}

/// Imports questions from CSV (by extension) or JSONL. Duplicate question
/// texts, within the file or against earlier imports, are rejected.
pub fn import_questions(project: &Project, path: &Path) -> Result<usize, ProjectError> {
    let file = path.display().to_string();
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let raw = if is_csv {
        read_csv(path, &file)?
    } else {
        let text = std::fs::read_to_string(path).map_err(|source| ProjectError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        read_jsonl(&text, &file)?
    };
    if raw.is_empty() {
        return Err(ProjectError::Invalid(format!("{file} holds no questions")));
    }
    let existing: Vec<Record<Question>> = project.read(QUESTIONS)?;
    let mut seen: HashMap<String, String> = existing
        .iter()
        .map(|r| (r.body.text.trim().to_string(), format!("question {}", r.body.id)))
        .collect();
    let mut questions = Vec::with_capacity(raw.len());
    for (i, r) in raw.into_iter().enumerate() {
        if let Some(first) = seen.get(r.text.as_str()) {
            return Err(ProjectError::Parse {
                file,
                line: r.line,
                message: format!("duplicate question text, first seen at {first}"),
            });
        }
        seen.insert(r.text.clone(), format!("line {}", r.line));
        questions.push(Question {
            id: format!("q{:04}", existing.len() + i + 1),
            text: r.text,
            best_answer: r.best_answer,
            category: r.category,
        });
    }
    project.append(QUESTIONS, "import", &questions)?;
    Ok(questions.len())
}

pub fn questions(project: &Project) -> Result<Vec<Question>, ProjectError> {
    Ok(project
        .require::<Question>(QUESTIONS)?
        .into_iter()
        .map(|r| r.body)
        .collect())
}

// ---------------------------------------------------------------- generate

/// Seeded uniform sample without replacement; indices come back sorted.
pub fn sample_indices(total: usize, sample: Option<usize>, seed: u64) -> Result<Vec<usize>, ProjectError> {
    let k = sample.unwrap_or(total);
    if k == 0 || k > total {
        return Err(ProjectError::Invalid(format!(
            "sample size {k} must be between 1 and {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, total, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub sampled: Vec<String>,
    pub generated: Vec<String>,
    /// Questions that already had a group for this template version.
    pub skipped: Vec<String>,
    /// (question id, error) for groups that could not be produced.
    pub failures: Vec<(String, String)>,
    pub probes: usize,
    pub regenerations: u32,
}

pub async fn generate(
    project: &Project,
    sample: Option<usize>,
    seed: u64,
    opts: &StageOptions,
) -> Result<GenerateSummary, ProjectError> {
    let cfg = project.config();
    let generator = provider(project, "generator", &cfg.roles.generator, opts)?;
    let all = questions(project)?;
    let picked: Vec<Question> = sample_indices(all.len(), sample, seed)?
        .into_iter()
        .map(|i| all[i].clone())
        .collect();
    let version = cfg.template.version;
    let done: BTreeSet<String> = project
        .read::<Probe>(PROBES)?
        .into_iter()
        .filter(|r| r.body.template_version == version)
        .map(|r| r.body.question_id)
        .collect();

    let mut summary = GenerateSummary {
        sampled: picked.iter().map(|q| q.id.clone()).collect(),
        ..Default::default()
    };
    let mut tasks = JoinSet::new();
    let mut slots = 0;
    for q in picked {
        if done.contains(&q.id) {
            summary.skipped.push(q.id);
            continue;
        }
        let (p, t, o, i) = (generator.clone(), cfg.template.clone(), cfg.generation, slots);
        slots += 1;
        tasks.spawn(async move {
            let r = generate_probe_group(&p, &t, &q, &o).await;
            (i, q.id, r)
        });
    }
    let mut results: Vec<Option<_>> = (0..slots).map(|_| None).collect();
    while let Some(j) = tasks.join_next().await {
        let (i, qid, r) = j.expect("generation task panicked");
        results[i] = Some((qid, r));
    }
    let mut probes = Vec::new();
    for (qid, r) in results.into_iter().flatten() {
        match r {
            Ok(g) => {
                summary.regenerations += g.regenerations;
                summary.generated.push(qid);
                probes.extend(g.group.probes);
            }
            Err(e) => summary.failures.push((qid, e.to_string())),
        }
    }
    summary.probes = probes.len();
    if !probes.is_empty() {
        project.append(PROBES, &format!("generate-v{version}-s{seed}"), &probes)?;
    }
    Ok(summary)
}

/// Newest template version's group for every question, in question order.
pub fn latest_groups(project: &Project) -> Result<Vec<ProbeGroup>, ProjectError> {
    let probes = project.require::<Probe>(PROBES)?;
    let mut by_q: BTreeMap<String, BTreeMap<u32, Vec<Probe>>> = BTreeMap::new();
    for r in probes {
        by_q.entry(r.body.question_id.clone())
            .or_default()
            .entry(r.body.template_version)
            .or_default()
            .push(r.body);
    }
    Ok(by_q
        .into_iter()
        .filter_map(|(qid, versions)| {
            let (v, mut probes) = versions.into_iter().next_back()?;
            probes.sort_by_key(|p| p.ordinal);
            Some(ProbeGroup {
                question_id: qid,
                probes,
                template_version: v,
            })
        })
        .collect())
}

// ---------------------------------------------------------------- answer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerStageSummary {
    pub model: String,
    pub run_id: String,
    pub summary: RunSummary,
}

/// Answers every latest probe group with each selected audited model.
pub async fn answer(
    project: &Project,
    models: &[String],
    run_id: &str,
    originals: bool,
    opts: &StageOptions,
) -> Result<Vec<AnswerStageSummary>, ProjectError> {
    let cfg = project.config();
    let selected: Vec<String> = if models.is_empty() {
        cfg.roles.audited.clone()
    } else {
        for m in models {
            if !cfg.roles.audited.contains(m) {
                return Err(ProjectError::Role {
                    role: "audited".into(),
                    name: m.clone(),
                });
            }
        }
        models.to_vec()
    };
    let providers = selected
        .iter()
        .map(|m| provider(project, "audited", m, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let groups = latest_groups(project)?;
    let existing = project.read::<ProbeResponse>(RESPONSES)?;
    let registry = RunRegistry::from_records(existing.iter().map(|r| (r.run_id.as_str(), &r.body)));
    let source = if originals { questions(project)? } else { Vec::new() };

    let mut out = Vec::new();
    for p in providers {
        let mut run = AnswerRunConfig::new(p.model_id(), run_id);
        run.temperature = cfg.answer_temperature;
        run.system_prompt = cfg.system_prompt.clone();
        run.answer_originals = originals;
        let (mut responses, summary) = answer_dataset(&p, &run, &groups, &registry).await?;
        if originals {
            responses.extend(answer_originals(&p, &run, &source, &registry).await?);
        }
        project.append(RESPONSES, run_id, &responses)?;
        out.push(AnswerStageSummary {
            model: p.model_id().to_string(),
            run_id: run_id.to_string(),
            summary,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- score

/// The run a stage should read: `requested`, else the last one recorded.
fn pick_run<T>(records: &[Record<T>], requested: Option<&str>, file: &str) -> Result<String, ProjectError> {
    match requested {
        Some(r) if records.iter().any(|x| x.run_id == r) => Ok(r.to_string()),
        Some(r) => Err(ProjectError::NotFound(format!("run {r} in {file}"))),
        None => records
            .last()
            .map(|r| r.run_id.clone())
            .ok_or_else(|| ProjectError::MissingStage(file.to_string())),
    }
}

/// Fails unless every record of `run_id` carries the same fingerprint.
pub(crate) fn single_fingerprint<T>(records: &[Record<T>], run_id: &str) -> Result<String, ProjectError> {
    let found: BTreeSet<&str> = records
        .iter()
        .filter(|r| r.run_id == run_id)
        .map(|r| r.config_fingerprint.as_str())
        .collect();
    match found.len() {
        1 => Ok(found.into_iter().next().unwrap().to_string()),
        0 => Err(ProjectError::NotFound(format!("run {run_id}"))),
        _ => Err(ProjectError::MixedFingerprints {
            run_id: run_id.to_string(),
            found: found.into_iter().map(String::from).collect(),
        }),
    }
}

fn judge(project: &Project, opts: &StageOptions) -> Result<Arc<dyn Judge>, ProjectError> {
    let cfg = project.config();
    let pcfg = cfg.provider("judge", &cfg.roles.judge)?;
    Ok(match cfg.judge_backend {
        JudgeBackend::Remote if !opts.force_mock => Arc::new(RemoteJudge::new(
            pcfg.clone(),
            Arc::new(ReqwestTransport::new(pcfg.timeout_ms)?),
        )),
        _ => Arc::new(PromptedJudge::new(Provider::from_config(pcfg, opts.force_mock)?)),
    })
}

/// Scores one answer run and replaces any earlier scorecards for that run.
/// Output order is model (audited order) then question id, so reruns are
/// byte-identical.
pub async fn score(
    project: &Project,
    run_id: Option<&str>,
    opts: &StageOptions,
) -> Result<Vec<QuestionScorecard>, ProjectError> {
    let cfg = project.config();
    let judge = judge(project, opts)?;
    let embedder = if cfg.metrics.contains(&Metric::EmbedSim) {
        Some(provider(project, "embedder", &cfg.roles.embedder, opts)?)
    } else {
        None
    };
    let records = project.require::<ProbeResponse>(RESPONSES)?;
    let run = pick_run(&records, run_id, RESPONSES)?;
    single_fingerprint(&records, &run)?;
    let qs: HashMap<String, Question> = questions(project)?
        .into_iter()
        .map(|q| (q.id.clone(), q))
        .collect();
    let groups = latest_groups(project)?;

    let mut by_probe: HashMap<(String, String), ProbeResponse> = HashMap::new();
    let mut models: Vec<String> = Vec::new();
    for r in records.into_iter().filter(|r| r.run_id == run) {
        if !models.contains(&r.body.model_id) {
            models.push(r.body.model_id.clone());
        }
        by_probe.insert((r.body.model_id.clone(), r.body.probe_id.clone()), r.body);
    }
    let rank = |m: &String| {
        cfg.roles
            .audited
            .iter()
            .position(|a| cfg.providers.get(a).is_some_and(|p| &p.model_id == m))
            .unwrap_or(usize::MAX)
    };
    models.sort_by(|a, b| rank(a).cmp(&rank(b)).then(a.cmp(b)));

    let mut tasks = JoinSet::new();
    let mut n = 0;
    for model in &models {
        for g in &groups {
            let responses: Vec<ProbeResponse> = g
                .probes
                .iter()
                .filter_map(|p| by_probe.get(&(model.clone(), p.id.clone())).cloned())
                .collect();
            if responses.is_empty() {
                continue;
            }
            let q = qs
                .get(&g.question_id)
                .cloned()
                .ok_or_else(|| ProjectError::NotFound(format!("question {}", g.question_id)))?;
            let (g, j, e, m, t, i) = (
                g.clone(),
                judge.clone(),
                embedder.clone(),
                cfg.metrics.clone(),
                cfg.judge_threshold,
                n,
            );
            n += 1;
            tasks.spawn(async move {
                let card = score_question(&q, &g, &responses, j.as_ref(), e.as_ref(), &m, t).await;
                (i, card)
            });
        }
    }
    if n == 0 {
        return Err(ProjectError::Invalid(format!(
            "run {run} has no responses to the current probe groups"
        )));
    }
    let mut cards: Vec<Option<QuestionScorecard>> = vec![None; n];
    while let Some(j) = tasks.join_next().await {
        let (i, card) = j.expect("scoring task panicked");
        cards[i] = Some(card?);
    }
    let cards: Vec<QuestionScorecard> = cards.into_iter().map(|c| c.expect("filled")).collect();

    let mut kept: Vec<Record<QuestionScorecard>> = project
        .read::<QuestionScorecard>(SCORES)?
        .into_iter()
        .filter(|r| r.run_id != run)
        .collect();
    kept.extend(cards.iter().cloned().map(|c| project.record(&run, c)));
    project.rewrite(SCORES, &kept)?;
    Ok(cards)
}

// ---------------------------------------------------------------- rounds

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenRoundRequest {
    #[serde(default)]
    pub round_id: Option<String>,
    pub purpose: RoundPurpose,
    pub annotators: [String; 2],
    /// Number of questions to sample from the latest groups; all if absent.
    #[serde(default)]
    pub sample: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub codebook_version: Option<u32>,
}

pub fn rounds(project: &Project) -> Result<Vec<AnnotationRound>, ProjectError> {
    Ok(project
        .read::<AnnotationRound>(ROUNDS)?
        .into_iter()
        .map(|r| r.body)
        .collect())
}

fn save_round(project: &Project, round: &AnnotationRound) -> Result<(), ProjectError> {
    let mut all = project.read::<AnnotationRound>(ROUNDS)?;
    match all.iter_mut().find(|r| r.body.round_id == round.round_id) {
        Some(r) => r.body = round.clone(),
        None => all.push(project.record(&round.round_id, round.clone())),
    }
    project.rewrite(ROUNDS, &all)
}

pub fn load_round(project: &Project, round_id: &str) -> Result<RoundBook, ProjectError> {
    let round = rounds(project)?
        .into_iter()
        .find(|r| r.round_id == round_id)
        .ok_or_else(|| ProjectError::NotFound(format!("round {round_id}")))?;
    let ratings = project
        .read::<Rating>(RATINGS)?
        .into_iter()
        .map(|r| r.body);
    Ok(RoundBook::from_parts(round, ratings))
}

pub fn open_round(project: &Project, req: &OpenRoundRequest) -> Result<RoundBook, ProjectError> {
    let existing = rounds(project)?;
    let round_id = req
        .round_id
        .clone()
        .unwrap_or_else(|| format!("r{}", existing.len() + 1));
    if existing.iter().any(|r| r.round_id == round_id) {
        return Err(ProjectError::Invalid(format!("round {round_id} already exists")));
    }
    let codebook = project.codebook(req.codebook_version)?;
    let groups = latest_groups(project)?;
    let picked: Vec<&ProbeGroup> = sample_indices(groups.len(), req.sample, req.seed)?
        .into_iter()
        .map(|i| &groups[i])
        .collect();
    let book = RoundBook::open(
        &round_id,
        req.purpose,
        &codebook,
        &picked,
        [&req.annotators[0], &req.annotators[1]],
    )?;
    save_round(project, &book.round)?;
    Ok(book)
}

/// Rating as posted by a client; the server stamps the time if absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub annotator_id: String,
    pub round_id: String,
    pub subject: Subject,
    pub label: RatingLabel,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

pub fn submit_rating(project: &Project, sub: RatingSubmission) -> Result<RoundState, ProjectError> {
    let mut book = load_round(project, &sub.round_id)?;
    let before = book.state();
    let rating = Rating {
        annotator_id: sub.annotator_id,
        round_id: sub.round_id,
        subject: sub.subject,
        label: sub.label,
        timestamp: sub.timestamp.unwrap_or_else(Utc::now),
    };
    let state = book.submit(rating.clone())?;
    project.append(RATINGS, book.round_id(), &[rating])?;
    if state != before {
        save_round(project, &book.round)?;
    }
    Ok(state)
}

pub fn complete_round(project: &Project, round_id: &str, annotator: &str) -> Result<RoundState, ProjectError> {
    let book = load_round(project, round_id)?;
    if !book.round.annotator_ids.iter().any(|a| a == annotator) {
        return Err(ProjectError::Invalid(format!(
            "{annotator} is not an annotator of round {round_id}"
        )));
    }
    Ok(book.complete(annotator)?)
}

/// Agreement statistics and gate verdicts for a closed round. The CLI's
/// `agreement --format json` and the HTTP API both serialize this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementDocument {
    pub round_id: String,
    pub purpose: RoundPurpose,
    pub codebook_version: u32,
    pub template_version: u32,
    pub agreement: Vec<AgreementResult>,
    pub quality: QualityFractions,
    pub gates: Vec<GateOutcome>,
    pub passed: bool,
}

pub fn agreement_document(project: &Project, book: &RoundBook) -> Result<AgreementDocument, ProjectError> {
    let gate = &project.config().gate;
    let agreement = compute_agreement(book, gate.alpha_metric)?;
    let gates = evaluate_gate(book, gate)?;
    Ok(AgreementDocument {
        round_id: book.round_id().to_string(),
        purpose: book.round.purpose,
        codebook_version: book.round.codebook_version,
        template_version: book.round.template_version,
        agreement,
        quality: quality_fractions(book),
        passed: gates.iter().all(|g| g.passed),
        gates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn project() -> (tempfile::TempDir, Project) {
        let dir = tempfile::tempdir().unwrap();
        let p = Project::init(&dir.path().join("p")).unwrap();
        (dir, p)
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        std::fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn csv_import_with_dataset_headers() {
        let (dir, p) = project();
        let f = write(
            dir.path(),
            "q.csv",
            "Type,Category,Question,Best Answer\nAdv,Misc,\"Why, though?\",No reason\nAdv,,What now?,Nothing\n",
        );
        assert_eq!(import_questions(&p, &f).unwrap(), 2);
        let qs = questions(&p).unwrap();
        assert_eq!(qs[0].id, "q0001");
        assert_eq!(qs[0].text, "Why, though?");
        assert_eq!(qs[0].category.as_deref(), Some("Misc"));
        assert_eq!(qs[1].category, None);
    }

    #[test]
    fn duplicate_text_names_both_lines() {
        let (dir, p) = project();
        let f = write(
            dir.path(),
            "q.jsonl",
            "{\"question\":\"A?\",\"best_answer\":\"a\"}\n{\"question\":\"B?\",\"best_answer\":\"b\"}\n{\"question\":\"A?\",\"best_answer\":\"c\"}\n",
        );
        let err = import_questions(&p, &f).unwrap_err().to_string();
        assert!(err.contains(":3:") && err.contains("line 1"), "{err}");
        assert!(!p.has(QUESTIONS));
    }

    #[test]
    fn missing_best_answer_is_rejected() {
        let (dir, p) = project();
        let f = write(dir.path(), "q.jsonl", "{\"question\":\"A?\"}\n");
        let err = import_questions(&p, &f).unwrap_err().to_string();
        assert!(err.contains("missing best_answer"), "{err}");
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_indices(817, Some(10), 7).unwrap();
        assert_eq!(a, sample_indices(817, Some(10), 7).unwrap());
        assert_ne!(a, sample_indices(817, Some(10), 8).unwrap());
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(sample_indices(5, Some(6), 0).is_err());
    }

    #[test]
    fn score_without_responses_names_the_file() {
        let (_d, p) = project();
        let rt = tokio::runtime::Runtime::new().unwrap();
        let opts = StageOptions { force_mock: true };
        let err = rt.block_on(score(&p, None, &opts)).unwrap_err();
        assert_eq!(err.to_string(), "missing stage output: responses.jsonl");
    }

    #[test]
    fn misconfigured_generator_fails_before_any_call() {
        let (dir, p) = project();
        let f = write(dir.path(), "q.jsonl", "{\"question\":\"A?\",\"best_answer\":\"a\"}\n");
        import_questions(&p, &f).unwrap();
        let mut cfg = p.config().clone();
        cfg.roles.generator = "ghost".into();
        let p = Project::with_config(p.root().to_path_buf(), cfg);
        let rt = tokio::runtime::Runtime::new().unwrap();
        let err = rt
            .block_on(generate(&p, None, 0, &StageOptions { force_mock: true }))
            .unwrap_err();
        assert!(matches!(err, ProjectError::Role { .. }));
        assert!(!p.has(PROBES));
    }

    #[test]
    fn mixed_fingerprints_are_refused() {
        let recs = vec![
            Record { run_id: "r".into(), config_fingerprint: "a".into(), body: () },
            Record { run_id: "r".into(), config_fingerprint: "b".into(), body: () },
            Record { run_id: "s".into(), config_fingerprint: "a".into(), body: () },
        ];
        assert!(matches!(
            single_fingerprint(&recs, "r"),
            Err(ProjectError::MixedFingerprints { .. })
        ));
        assert_eq!(single_fingerprint(&recs, "s").unwrap(), "a");
    }
}
