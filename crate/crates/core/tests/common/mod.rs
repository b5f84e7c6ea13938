//! Independent oracles and project fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use probe_audit::annotation::AlphaMetric;
use probe_audit::domain::RatingLabel;
use probe_audit::project::{generate, import_questions, Project, StageOptions};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn audit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_audit"))
        .current_dir(dir)
        .env("AUDIT_NO_NET", "1")
        .args(args)
        .output()
        .expect("audit binary runs")
}

/// `audit` with stdout returned; panics with stderr on a non-zero exit.
pub fn audit_ok(dir: &Path, args: &[&str]) -> String {
    let out = audit(dir, args);
    assert!(
        out.status.success(),
        "audit {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A project with the 10 fixture questions and one mock probe group each.
pub async fn generated_project(root: &Path) -> Project {
    let p = Project::init(root).unwrap();
    import_questions(&p, &fixture("questions.jsonl")).unwrap();
    let s = generate(&p, None, 7, &StageOptions { force_mock: true }).await.unwrap();
    assert_eq!(s.probes, 50);
    p
}

/// Krippendorff's alpha by enumerating every ordered pair of pairable values.
/// `None` where fewer than two units are pairable.
pub fn brute_alpha(units: &[Vec<Option<RatingLabel>>], metric: AlphaMetric) -> Option<f64> {
    let pairable: Vec<Vec<RatingLabel>> = units
        .iter()
        .map(|u| u.iter().flatten().copied().collect::<Vec<_>>())
        .filter(|v| v.len() >= 2)
        .collect();
    if pairable.len() < 2 {
        return None;
    }
    let delta = |a: RatingLabel, b: RatingLabel| -> f64 {
        match metric {
            AlphaMetric::Nominal => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
            AlphaMetric::Ordinal => (a.rank() as f64 - b.rank() as f64).powi(2),
        }
    };
    let n: usize = pairable.iter().map(Vec::len).sum();
    let mut d_o = 0.0;
    for unit in &pairable {
        let m = unit.len() as f64;
        for i in 0..unit.len() {
            for j in 0..unit.len() {
                if i != j {
                    d_o += delta(unit[i], unit[j]) / (m - 1.0);
                }
            }
        }
    }
    d_o /= n as f64;
    let all: Vec<RatingLabel> = pairable.concat();
    let mut d_e = 0.0;
    for i in 0..all.len() {
        for j in 0..all.len() {
            if i != j {
                d_e += delta(all[i], all[j]);
            }
        }
    }
    d_e /= (n * (n - 1)) as f64;
    if d_o == 0.0 {
        return Some(1.0);
    }
    Some(1.0 - d_o / d_e)
}

/// LCS length by trying every subsequence of `a`.
pub fn brute_lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let is_subseq = |mask: u32| {
        let mut it = b.iter();
        (0..a.len())
            .filter(|i| mask & (1 << i) != 0)
            .all(|i| it.any(|y| *y == a[i]))
    };
    (0u32..1 << a.len())
        .filter(|&m| is_subseq(m))
        .map(|m| m.count_ones() as usize)
        .max()
        .unwrap_or(0)
}

pub fn brute_rouge_l(c: &[String], r: &[String]) -> f64 {
    let l = brute_lcs(c, r);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / c.len() as f64;
    let rc = l as f64 / r.len() as f64;
    2.0 * p * rc / (p + rc)
}

/// Expands a 3×3 contingency table (rows: first annotator's Low/Medium/High,
/// columns: second annotator's) into aligned label lists.
pub fn from_contingency(table: [[usize; 3]; 3]) -> (Vec<RatingLabel>, Vec<RatingLabel>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, row) in table.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            for _ in 0..count {
                a.push(RatingLabel::ALL[i]);
                b.push(RatingLabel::ALL[j]);
            }
        }
    }
    (a, b)
}

/// Relevance κ ≈ 0.4634 over 50 items.
pub const KAPPA_INITIAL: [[usize; 3]; 3] = [[0, 7, 1], [3, 2, 0], [0, 0, 37]];
/// Relevance κ ≈ 0.6928 over 50 items.
pub const KAPPA_FINAL: [[usize; 3]; 3] = [[0, 4, 0], [3, 12, 1], [0, 0, 30]];

/// Malformed generator outputs for n = 5, with the expected outcome.
pub fn parse_corpus() -> Vec<(&'static str, String, Result<Vec<&'static str>, probe_audit::generation::ParseError>)> {
    use probe_audit::generation::ParseError::*;
    let five = || Ok(vec!["Alpha?", "Bravo?", "Charlie?", "Delta?", "Echo?"]);
    vec![
        ("clean", "1. Alpha?\n2. Bravo?\n3. Charlie?\n4. Delta?\n5. Echo?".into(), five()),
        (
            "preamble",
            "Sure! Here are five rephrasings:\n\n1. Alpha?\n2. Bravo?\n3. Charlie?\n4. Delta?\n5. Echo?\nHope that helps.".into(),
            five(),
        ),
        ("mixed enumerators", "1. Alpha?\n2) Bravo?\n3: Charlie?\n4. Delta?\n5) Echo?".into(), five()),
        ("no space after enumerator", "1.Alpha?\n2)Bravo?\n3.Charlie?\n4.Delta?\n5.Echo?".into(), five()),
        (
            "quoted and indented",
            "  1. \"Alpha?\"\n  2. “Bravo?”\n  3. 'Charlie?'\n  4. Delta?\n  5. Echo?".into(),
            five(),
        ),
        (
            "blank lines between items",
            "1. Alpha?\n\n2. Bravo?\n\n3. Charlie?\n\n4. Delta?\n\n5. Echo?\n".into(),
            five(),
        ),
        (
            "example list in preamble",
            "For instance:\n1. Example?\n2. Another?\n\nAnswer:\n1. Alpha?\n2. Bravo?\n3. Charlie?\n4. Delta?\n5. Echo?".into(),
            five(),
        ),
        ("too few", "1. Alpha?\n2. Bravo?\n3. Charlie?\n4. Delta?".into(), Err(Count { found: 4, expected: 5 })),
        (
            "too many",
            "1. Alpha?\n2. Bravo?\n3. Charlie?\n4. Delta?\n5. Echo?\n6. Foxtrot?".into(),
            Err(Count { found: 6, expected: 5 }),
        ),
        ("no list at all", "I cannot help with that request.".into(), Err(Count { found: 0, expected: 5 })),
        (
            "skipped number",
            "1. Alpha?\n2. Bravo?\n4. Delta?\n5. Echo?\n6. Foxtrot?".into(),
            Err(OutOfOrder { previous: 2, found: 4 }),
        ),
        ("starts at two", "2. Bravo?\n3. Charlie?".into(), Err(OutOfOrder { previous: 0, found: 2 })),
        (
            "duplicate probe",
            "1. Alpha?\n2. Bravo?\n3. Alpha?\n4. Delta?\n5. Echo?".into(),
            Err(Duplicate { first: 1, second: 3 }),
        ),
        (
            "empty quoted probe",
            "1. Alpha?\n2. \"\"\n3. Charlie?\n4. Delta?\n5. Echo?".into(),
            Err(EmptyProbe(2)),
        ),
        (
            "bullets are not enumerators",
            "- Alpha?\n- Bravo?\n- Charlie?\n- Delta?\n- Echo?".into(),
            Err(Count { found: 0, expected: 5 }),
        ),
    ]
}

/// Rates every subject of `round_id`: relevance subjects take `relevance`
/// pairs in order, diversity subjects take `diversity` pairs.
pub fn fill_round(
    p: &Project,
    round_id: &str,
    relevance: &(Vec<RatingLabel>, Vec<RatingLabel>),
    diversity: &(Vec<RatingLabel>, Vec<RatingLabel>),
) {
    use probe_audit::domain::Subject;
    use probe_audit::project::{load_round, submit_rating, RatingSubmission};
    let book = load_round(p, round_id).unwrap();
    let annotators = book.round.annotator_ids.clone();
    let (mut r, mut d) = (0, 0);
    for subject in &book.round.subjects {
        let (a, b) = match subject {
            Subject::Relevance { .. } => {
                r += 1;
                (relevance.0[r - 1], relevance.1[r - 1])
            }
            Subject::Diversity { .. } => {
                d += 1;
                (diversity.0[d - 1], diversity.1[d - 1])
            }
        };
        for (who, label) in annotators.iter().zip([a, b]) {
            submit_rating(
                p,
                RatingSubmission {
                    annotator_id: who.clone(),
                    round_id: round_id.into(),
                    subject: subject.clone(),
                    label,
                    timestamp: None,
                },
            )
            .unwrap();
        }
    }
}

/// One request against the in-process router; the body parses as JSON or `Null`.
pub async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<serde_json::Value>,
) -> (axum::http::StatusCode, serde_json::Value) {
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let mut req = axum::http::Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            axum::body::Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => axum::body::Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}
