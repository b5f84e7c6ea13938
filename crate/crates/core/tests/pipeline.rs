mod common;

use std::fs;

use probe_audit::annotation::AlphaMetric;
use probe_audit::domain::{JudgeScore, RatingLabel, RoundPurpose};
use probe_audit::generation::{render_probe_prompt, CORRECTIVE_PREFIX};
use probe_audit::metrics::{count_fails, MetricScores, QuestionScorecard};
use probe_audit::project::{
    answer, generate, import_questions, open_round, questions, score, OpenRoundRequest, Project,
    ProjectError, StageOptions, CONFIG_FILE,
};
use probe_audit::provider::{fingerprint, ChatRequest, ProviderConfig};
use probe_audit::report::{build_report, render, Format};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use common::*;

const MOCK: StageOptions = StageOptions { force_mock: true };

async fn scored_project(root: &std::path::Path) -> Project {
    let p = generated_project(root).await;
    let models = ["falcon-7b".to_string(), "gpt-3.5-turbo".to_string()];
    answer(&p, &models, "run-1", false, &MOCK).await.unwrap();
    score(&p, None, &MOCK).await.unwrap();
    p
}

#[tokio::test]
async fn two_models_give_two_sections_over_the_same_questions() {
    let dir = tempfile::tempdir().unwrap();
    let p = scored_project(&dir.path().join("p")).await;
    let report = build_report(&p, None).unwrap();
    assert_eq!(report.models.len(), 2);
    assert!(report.models.iter().all(|m| m.questions == 10));
    let total: usize = report.models.iter().map(|m| m.fails + m.passes).sum();
    assert_eq!(total, 2 * 10);
    let cards: Vec<QuestionScorecard> = fs::read_to_string(p.data_path("scores.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let qs = |m: &str| -> Vec<String> {
        cards.iter().filter(|c| c.model_id == m).map(|c| c.question_id.clone()).collect()
    };
    assert_eq!(qs("falcon-7b-instruct"), qs("gpt-3.5-turbo"));

    let (_, md) = &render(&report, Format::Markdown)[0];
    assert!(md.contains("| metric | falcon-7b-instruct | gpt-3.5-turbo |"));
    let hallucination = md.split("## ").find(|s| s.contains("(hallucination)")).unwrap();
    assert_eq!(hallucination.lines().filter(|l| l.starts_with("| ")).count(), 2 + 5);
}

#[tokio::test]
async fn rescoring_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = scored_project(&dir.path().join("p")).await;
    let first = fs::read(p.data_path("scores.jsonl")).unwrap();
    score(&p, Some("run-1"), &MOCK).await.unwrap();
    assert_eq!(first, fs::read(p.data_path("scores.jsonl")).unwrap());
}

#[tokio::test]
async fn answering_a_run_twice_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = scored_project(&dir.path().join("p")).await;
    let again = answer(&p, &["falcon-7b".into()], "run-1", false, &MOCK).await;
    assert!(matches!(again, Err(ProjectError::Answer(_))), "{again:?}");
    let other = answer(&p, &["falcon-7b".into()], "run-2", true, &MOCK).await.unwrap();
    assert_eq!(other[0].summary.total, 50);
    let lines = fs::read_to_string(p.data_path("responses.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 100 + 50 + 10, "run-2 adds probes and originals");
    let unknown = answer(&p, &["nobody".into()], "run-3", false, &MOCK).await;
    assert!(matches!(unknown, Err(ProjectError::Role { .. })));
}

#[tokio::test]
async fn report_refuses_a_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = scored_project(&dir.path().join("p")).await;
    let mut cfg = p.config().clone();
    cfg.judge_threshold = 0.7;
    let changed = Project::with_config(p.root().to_path_buf(), cfg);
    assert!(matches!(
        build_report(&changed, None),
        Err(ProjectError::MixedFingerprints { .. })
    ));
    let empty = Project::init(&dir.path().join("empty")).unwrap();
    assert!(matches!(build_report(&empty, None), Err(ProjectError::NoScoredRuns)));
}

#[tokio::test]
async fn every_record_carries_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let p = scored_project(&dir.path().join("p")).await;
    for file in ["questions.jsonl", "probes.jsonl", "responses.jsonl", "scores.jsonl"] {
        for line in fs::read_to_string(p.data_path(file)).unwrap().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["run_id"].is_string(), "{file}: {line}");
            assert_eq!(v["config_fingerprint"], p.fingerprint(), "{file}");
        }
    }
}

#[tokio::test]
async fn one_bad_question_does_not_stop_generation() {
    let dir = tempfile::tempdir().unwrap();
    let p = Project::init(&dir.path().join("p")).unwrap();
    import_questions(&p, &fixture("questions.jsonl")).unwrap();
    let victim = questions(&p).unwrap().remove(3);

    let fixtures = dir.path().join("fixtures");
    fs::create_dir(&fixtures).unwrap();
    let mut cfg = p.config().clone();
    let generator = ProviderConfig {
        fixtures_dir: Some(fixtures.clone()),
        ..ProviderConfig::mock("generator-model")
    };
    let prompt = render_probe_prompt(&cfg.template, &victim).unwrap().text;
    let corrective = format!("{prompt}\n\n{CORRECTIVE_PREFIX} 5 numbered questions, one per line.");
    for (i, text) in [prompt, corrective].into_iter().enumerate() {
        let fp = fingerprint(&ChatRequest::user("generator-model", text));
        fs::write(fixtures.join(format!("{i}.txt")), format!("{fp}\nI would rather not.")).unwrap();
    }
    cfg.providers.insert("generator".into(), generator);
    let p = Project::with_config(p.root().to_path_buf(), cfg);

    let s = generate(&p, None, 0, &StageOptions::default()).await.unwrap();
    assert_eq!(s.generated.len(), 9);
    assert_eq!(s.failures.len(), 1);
    assert_eq!(s.failures[0].0, victim.id);
    assert!(s.failures[0].1.contains("3 attempts"), "{}", s.failures[0].1);
    assert_eq!(s.probes, 45);

    let again = generate(&p, None, 0, &StageOptions::default()).await.unwrap();
    assert_eq!(again.skipped.len(), 9);
    assert_eq!(again.probes, 0);
}

#[test]
fn count_fails_matches_a_recount() {
    let mut rng = StdRng::seed_from_u64(17);
    let empty = MetricScores::default();
    let cards: Vec<QuestionScorecard> = (0..50)
        .map(|i| {
            let scores: Vec<JudgeScore> = (0..rng.gen_range(1..=5))
                .map(|j| JudgeScore {
                    probe_id: format!("q{i}/p{j}"),
                    model_id: "m".into(),
                    score: rng.gen_range(0.0..=1.0),
                    judge_id: "j".into(),
                })
                .collect();
            QuestionScorecard {
                question_id: format!("q{i}"),
                model_id: "m".into(),
                hallucination: empty,
                relevance: empty,
                diversity: empty,
                group_failed: scores.iter().any(|s| s.score < 0.5),
                judge_scores: scores,
                failed_responses: 0,
            }
        })
        .collect();
    let summary = count_fails(&cards, 0.5);
    let mut fails = 0;
    let (mut truthful, mut total) = (0, 0);
    for c in &cards {
        let mut failed = false;
        for s in &c.judge_scores {
            total += 1;
            if s.score < 0.5 {
                failed = true;
            } else {
                truthful += 1;
            }
        }
        if failed {
            fails += 1;
        }
    }
    assert_eq!(summary.groups, 50);
    assert_eq!(summary.fails, fails);
    assert_eq!(summary.truthful_fraction, Some(truthful as f64 / total as f64));
}

#[tokio::test]
async fn cli_agreement_prints_six_decimals() {
    use RatingLabel::*;
    let dir = tempfile::tempdir().unwrap();
    let p = generated_project(&dir.path().join("p")).await;
    open_round(
        &p,
        &OpenRoundRequest {
            round_id: None,
            purpose: RoundPurpose::CodebookCalibration,
            annotators: ["ann-a".into(), "ann-b".into()],
            sample: Some(4),
            seed: 1,
            codebook_version: None,
        },
    )
    .unwrap();
    // The four-item fixture repeated five times keeps the same kappa.
    let a: Vec<RatingLabel> = [High, High, Medium, Low].repeat(5);
    let b: Vec<RatingLabel> = [High, Medium, Medium, Low].repeat(5);
    fill_round(&p, "r1", &(a, b), &(vec![High; 4], vec![High; 4]));

    let text = audit_ok(p.root(), &["agreement", "--round", "r1"]);
    assert!(text.contains("relevance: kappa 0.636364"), "{text}");
    assert!(text.contains("overlap 0.750000"), "{text}");
    assert!(text.contains("diversity: kappa 1.000000  alpha 1.000000"), "{text}");
    assert_eq!(p.config().gate.alpha_metric, AlphaMetric::Ordinal);

    let gate = audit(p.root(), &["gate", "--round", "r1"]);
    assert_eq!(gate.status.code(), Some(0), "{}", String::from_utf8_lossy(&gate.stdout));
}

#[test]
fn cli_stage_errors_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    audit_ok(root, &["init"]);
    let out = audit(root, &["answer"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing stage output: probes.jsonl"));

    let csv = root.join("q.csv");
    fs::write(&csv, "question,best_answer\nOne?,1\nTwo?,2\nOne?,3\n").unwrap();
    let out = audit(root, &["import", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":4:") && err.contains("line 2"), "{err}");

    let out = audit(root, &["agreement", "--round", "r1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = audit(root, &["generate", "--seed", "nan"]);
    assert_eq!(out.status.code(), Some(1));

    fs::write(root.join(".audit.lock"), "1").unwrap();
    let out = audit(root, &["import", csv.to_str().unwrap(), "--config", CONFIG_FILE]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

#[test]
fn cli_report_writes_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    audit_ok(root, &["init"]);
    audit_ok(root, &["import", fixture("questions.jsonl").to_str().unwrap()]);
    audit_ok(root, &["generate", "--sample", "3", "--seed", "1"]);
    audit_ok(root, &["answer", "--model", "llama-2-7b"]);
    let out = audit(root, &["report"]);
    assert_eq!(out.status.code(), Some(2), "report before score");
    audit_ok(root, &["score"]);
    audit_ok(root, &["report"]);
    for f in ["report.json", "report.md", "tables/hallucination.csv", "tables/fails.csv"] {
        assert!(root.join("reports").join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(root.join("reports/tables/hallucination.csv")).unwrap();
    assert!(csv.starts_with("metric,llama-2-7b-chat\n"));
    assert!(csv.contains("bleurt,n/a"));
    let cell = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap();
    assert_eq!(cell.split('.').nth(1).map(str::len), Some(3), "{cell}");
}
