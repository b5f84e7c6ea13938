//! Audit reports: per-model metric tables plus the annotation history,
//! rendered as JSON, CSV or Markdown.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{Criterion, RoundPurpose, RoundState};
use crate::metrics::{count_fails, macro_mean, Metric, MetricScores, QuestionScorecard};
use crate::project::{
    agreement_document, load_round, rounds, AgreementDocument, Project, ProjectError, Record,
    SCORES,
};

/// Reserved hallucination column; needs a learned regression model.
pub const BLEURT: &str = "bleurt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    /// `None` when the metric was not computed.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub questions: usize,
    pub hallucination: Vec<MetricRow>,
    pub relevance: Vec<MetricRow>,
    pub diversity: Vec<MetricRow>,
    /// Share of judge scores at or above the threshold.
    pub judge_fraction: Option<f64>,
    pub judge_mean: Option<f64>,
    pub fails: usize,
    pub passes: usize,
    pub failed_responses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub run_id: String,
    pub config_fingerprint: String,
    pub judge_threshold: f64,
    pub models: Vec<ModelSummary>,
    /// Closed rounds in creation order.
    pub annotation_history: Vec<AgreementDocument>,
    pub config: serde_json::Value,
}

fn rows(cards: &[&QuestionScorecard], pick: fn(&QuestionScorecard) -> &MetricScores) -> Vec<MetricRow> {
    let owned: Vec<QuestionScorecard> = cards.iter().map(|c| (*c).clone()).collect();
    [Metric::EmbedSim, Metric::RougeL]
        .into_iter()
        .map(|m| MetricRow {
            metric: m.name().to_string(),
            value: macro_mean(&owned, |c| pick(c).get(m)),
        })
        .collect()
}

pub fn summarize_model(model_id: &str, cards: &[&QuestionScorecard], threshold: f64) -> ModelSummary {
    let owned: Vec<QuestionScorecard> = cards.iter().map(|c| (*c).clone()).collect();
    let fails = count_fails(&owned, threshold);
    let mut hallucination = rows(cards, |c| &c.hallucination);
    hallucination.push(MetricRow {
        metric: BLEURT.into(),
        value: None,
    });
    ModelSummary {
        model_id: model_id.to_string(),
        questions: cards.len(),
        hallucination,
        relevance: rows(cards, |c| &c.relevance),
        diversity: rows(cards, |c| &c.diversity),
        judge_fraction: fails.truthful_fraction,
        judge_mean: fails.judge_mean,
        fails: fails.fails,
        passes: fails.groups - fails.fails,
        failed_responses: cards.iter().map(|c| c.failed_responses).sum(),
    }
}

/// Assembles the report for `run_id` (default: the last scored run).
pub fn build_report(project: &Project, run_id: Option<&str>) -> Result<AuditReport, ProjectError> {
    let scores: Vec<Record<QuestionScorecard>> = project.read(SCORES)?;
    let run = match run_id {
        Some(r) => r.to_string(),
        None => scores
            .last()
            .map(|r| r.run_id.clone())
            .ok_or(ProjectError::NoScoredRuns)?,
    };
    let cards: Vec<&Record<QuestionScorecard>> = scores.iter().filter(|r| r.run_id == run).collect();
    if cards.is_empty() {
        return Err(ProjectError::NoScoredRuns);
    }
    let mut fps: Vec<String> = cards.iter().map(|r| r.config_fingerprint.clone()).collect();
    fps.push(project.fingerprint().to_string());
    fps.sort();
    fps.dedup();
    if fps.len() > 1 {
        return Err(ProjectError::MixedFingerprints {
            run_id: run,
            found: fps,
        });
    }

    let threshold = project.config().judge_threshold;
    let mut model_ids: Vec<&str> = Vec::new();
    for r in &cards {
        if !model_ids.contains(&r.body.model_id.as_str()) {
            model_ids.push(&r.body.model_id);
        }
    }
    let models = model_ids
        .iter()
        .map(|m| {
            let mine: Vec<&QuestionScorecard> = cards
                .iter()
                .map(|r| &r.body)
                .filter(|c| c.model_id == *m)
                .collect();
            summarize_model(m, &mine, threshold)
        })
        .collect();

    let mut annotation_history = Vec::new();
    for round in rounds(project)? {
        if round.state != RoundState::Closed {
            continue;
        }
        let book = load_round(project, &round.round_id)?;
        annotation_history.push(agreement_document(project, &book)?);
    }

    Ok(AuditReport {
        run_id: run,
        config_fingerprint: project.fingerprint().to_string(),
        judge_threshold: threshold,
        models,
        annotation_history,
        config: serde_json::to_value(project.config()).expect("config serializes"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(format!("unknown format {other:?} (json, csv, markdown)")),
        }
    }
}

/// Three decimals, ties rounded up.
pub fn fmt3(x: f64) -> String {
    // Nudge by a few ulps so decimal ties like 0.1535 (stored just below) round up.
    let scaled = x * 1000.0;
    let rounded = (scaled + scaled.abs() * 1e-12).round() / 1000.0;
    let s = format!("{rounded:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), fmt3)
}

/// (name, header, rows) for each metric-by-model table.
fn model_tables(report: &AuditReport) -> Vec<(&'static str, Vec<String>, Vec<Vec<String>>)> {
    let mut header = vec!["metric".to_string()];
    header.extend(report.models.iter().map(|m| m.model_id.clone()));
    let table = |pick: fn(&ModelSummary) -> &Vec<MetricRow>, extra: &[(&str, fn(&ModelSummary) -> Option<f64>)]| {
        let mut out: Vec<Vec<String>> = Vec::new();
        if let Some(first) = report.models.first() {
            for (i, row) in pick(first).iter().enumerate() {
                let mut r = vec![row.metric.clone()];
                r.extend(report.models.iter().map(|m| cell(pick(m)[i].value)));
                out.push(r);
            }
        }
        for (name, f) in extra {
            let mut r = vec![name.to_string()];
            r.extend(report.models.iter().map(|m| cell(f(m))));
            out.push(r);
        }
        out
    };
    let judge: [(&str, fn(&ModelSummary) -> Option<f64>); 2] = [
        ("judge_truthful_fraction", |m| m.judge_fraction),
        ("judge_mean", |m| m.judge_mean),
    ];
    let mut fails = Vec::new();
    for (name, f) in [
        ("questions", (|m| m.questions) as fn(&ModelSummary) -> usize),
        ("fails", |m| m.fails),
        ("passes", |m| m.passes),
        ("failed_responses", |m| m.failed_responses),
    ] {
        let mut r = vec![name.to_string()];
        r.extend(report.models.iter().map(|m| f(m).to_string()));
        fails.push(r);
    }
    vec![
        ("hallucination", header.clone(), table(|m| &m.hallucination, &judge)),
        ("relevance", header.clone(), table(|m| &m.relevance, &[])),
        ("diversity", header.clone(), table(|m| &m.diversity, &[])),
        ("fails", header, fails),
    ]
}

/// Calibration rounds as columns; statistics per criterion as rows.
fn agreement_table(report: &AuditReport) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let rounds: Vec<&AgreementDocument> = report
        .annotation_history
        .iter()
        .filter(|d| d.purpose == RoundPurpose::CodebookCalibration)
        .collect();
    if rounds.is_empty() {
        return None;
    }
    let mut header = vec!["statistic".to_string()];
    let last = rounds.len() - 1;
    for (i, d) in rounds.iter().enumerate() {
        let tag = match i {
            0 if last == 0 => " (initial, final)",
            0 => " (initial)",
            i if i == last => " (final)",
            _ => "",
        };
        header.push(format!("{}{tag}", d.round_id));
    }
    let mut out = Vec::new();
    for criterion in Criterion::ALL {
        let stats: [(&str, fn(&crate::annotation::AgreementResult) -> Option<f64>); 3] = [
            ("kappa", |a| Some(a.cohen_kappa)),
            ("alpha", |a| a.krippendorff_alpha),
            ("overlap", |a| Some(a.overlap_rate)),
        ];
        for (name, f) in stats {
            let mut r = vec![format!("{criterion} {name}")];
            for d in &rounds {
                let v = d.agreement.iter().find(|a| a.criterion == criterion).and_then(f);
                r.push(v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}")));
            }
            out.push(r);
        }
    }
    let mut verdict = vec!["gate".to_string()];
    verdict.extend(rounds.iter().map(|d| if d.passed { "pass" } else { "fail" }.to_string()));
    out.push(verdict);
    Some((header, out))
}

/// Template-quality rounds as columns; pooled fractions as rows.
fn quality_table(report: &AuditReport) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let rounds: Vec<&AgreementDocument> = report
        .annotation_history
        .iter()
        .filter(|d| d.purpose == RoundPurpose::TemplateQuality)
        .collect();
    if rounds.is_empty() {
        return None;
    }
    let mut header = vec!["criterion".to_string()];
    header.extend(rounds.iter().map(|d| format!("{} (template v{})", d.round_id, d.template_version)));
    let pct = |x: f64| format!("{:.0}%", x * 100.0);
    let mut rel = vec!["relevance".to_string()];
    rel.extend(rounds.iter().map(|d| pct(d.quality.relevance)));
    let mut div = vec!["diversity".to_string()];
    div.extend(rounds.iter().map(|d| pct(d.quality.diversity)));
    let mut gate = vec!["gate".to_string()];
    gate.extend(rounds.iter().map(|d| if d.passed { "pass" } else { "fail" }.to_string()));
    Some((header, vec![rel, div, gate]))
}

fn csv_doc(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn md_table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", " --- |".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

/// Renders `report` as `(relative path, contents)` documents.
pub fn render(report: &AuditReport, format: Format) -> Vec<(String, String)> {
    match format {
        Format::Json => vec![(
            "report.json".into(),
            serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        )],
        Format::Csv => {
            let mut docs: Vec<(String, String)> = model_tables(report)
                .into_iter()
                .map(|(name, h, rows)| (format!("tables/{name}.csv"), csv_doc(&h, &rows)))
                .collect();
            if let Some((h, rows)) = agreement_table(report) {
                docs.push(("tables/agreement.csv".into(), csv_doc(&h, &rows)));
            }
            if let Some((h, rows)) = quality_table(report) {
                docs.push(("tables/template_quality.csv".into(), csv_doc(&h, &rows)));
            }
            docs
        }
        Format::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "# Audit report\n");
            let _ = writeln!(
                out,
                "Run `{}`, config `{}`, judge threshold {}.\n",
                report.run_id, report.config_fingerprint, report.judge_threshold
            );
            let titles = [
                ("hallucination", "Similarity of answers to the reference answer"),
                ("relevance", "Similarity of probes to the source question"),
                ("diversity", "Dissimilarity among probes of a group"),
                ("fails", "Question groups with at least one untruthful answer"),
            ];
            for ((name, h, rows), (_, title)) in model_tables(report).into_iter().zip(titles) {
                let _ = writeln!(out, "## {title} ({name})\n");
                md_table(&mut out, &h, &rows);
            }
            if let Some((h, rows)) = agreement_table(report) {
                let _ = writeln!(out, "## Annotator agreement\n");
                md_table(&mut out, &h, &rows);
            }
            if let Some((h, rows)) = quality_table(report) {
                let _ = writeln!(out, "## Template quality\n");
                md_table(&mut out, &h, &rows);
            }
            out.push_str("`n/a` marks a metric that was not computed.\n");
            vec![("report.md".into(), out)]
        }
    }
}

/// Writes the rendered documents under the project's reports directory and
/// returns their paths.
pub fn write_report(
    project: &Project,
    report: &AuditReport,
    formats: &[Format],
) -> Result<Vec<std::path::PathBuf>, ProjectError> {
    let dir = project.reports_dir();
    let mut written = Vec::new();
    for f in formats {
        for (name, body) in render(report, *f) {
            let path = dir.join(name);
            crate::project::write_atomic(&path, body.as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}
