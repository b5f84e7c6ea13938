//! Agreement and template-quality gates.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::round::{RoundBook, RoundError};
use super::stats::{cohen_kappa, krippendorff_alpha, overlap_rate, AlphaMetric};
use crate::domain::{Criterion, RatingLabel, RoundPurpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PrimaryStatistic {
    #[default]
    Kappa,
    Alpha,
    Overlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityPooling {
    /// One fraction over the ratings of both annotators.
    #[default]
    Pooled,
    /// Each annotator's fraction must clear the bar on its own.
    PerAnnotator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub kappa_min: f64,
    pub alpha_min: f64,
    #[serde(default = "default_overlap_min")]
    pub overlap_min: f64,
    pub relevance_quality_min: f64,
    pub diversity_quality_min: f64,
    #[serde(default)]
    pub primary_statistic: PrimaryStatistic,
    #[serde(default)]
    pub alpha_metric: AlphaMetric,
    #[serde(default)]
    pub quality_pooling: QualityPooling,
}

fn default_overlap_min() -> f64 {
    0.8
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            kappa_min: 0.61,
            alpha_min: 0.8,
            overlap_min: default_overlap_min(),
            relevance_quality_min: 0.80,
            diversity_quality_min: 0.80,
            primary_statistic: PrimaryStatistic::Kappa,
            alpha_metric: AlphaMetric::Ordinal,
            quality_pooling: QualityPooling::Pooled,
        }
    }
}

impl GateConfig {
    pub fn check(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} = {v} is outside [0, 1]"))
            }
        };
        if !(-1.0..=1.0).contains(&self.kappa_min) {
            return Err(format!("kappa_min = {} is outside [-1, 1]", self.kappa_min));
        }
        unit("alpha_min", self.alpha_min)?;
        unit("overlap_min", self.overlap_min)?;
        unit("relevance_quality_min", self.relevance_quality_min)?;
        unit("diversity_quality_min", self.diversity_quality_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub criterion: Criterion,
    pub cohen_kappa: f64,
    /// `None` when fewer than two items are pairable.
    pub krippendorff_alpha: Option<f64>,
    pub overlap_rate: f64,
    pub n_items: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Recommendation {
    Proceed,
    ReviseCodebook,
    ReviseTemplate,
}

impl fmt::Display for Recommendation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Recommendation::Proceed => "proceed",
            Recommendation::ReviseCodebook => "revise codebook",
            Recommendation::ReviseTemplate => "revise template",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCheck {
    pub statistic: String,
    pub value: Option<f64>,
    pub min: f64,
    pub passed: bool,
}

impl ThresholdCheck {
    fn new(statistic: &str, value: Option<f64>, min: f64) -> Self {
        Self {
            statistic: statistic.to_string(),
            value,
            min,
            passed: value.is_some_and(|v| v >= min),
        }
    }
}

impl fmt::Display for ThresholdCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            Some(v) => {
                let op = if self.passed { ">=" } else { "<" };
                write!(f, "{} {v:.4} {op} {}", self.statistic, self.min)
            }
            None => write!(f, "{} n/a < {}", self.statistic, self.min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityFractions {
    /// Share of relevance ratings labeled High or Medium.
    pub relevance: f64,
    /// Share of diversity ratings labeled High.
    pub diversity: f64,
    pub relevance_ratings: usize,
    pub diversity_ratings: usize,
    /// (relevance, diversity) per annotator.
    pub per_annotator: BTreeMap<String, (f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GateStatistics {
    Agreement(AgreementResult),
    Quality(QualityFractions),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    /// Set for agreement gates, which are evaluated per criterion.
    pub criterion: Option<Criterion>,
    pub passed: bool,
    pub statistic_values: GateStatistics,
    pub threshold_used: Vec<ThresholdCheck>,
    pub recommendation: Recommendation,
}

impl fmt::Display for GateOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self.criterion {
            Some(c) => c.to_string(),
            None => "template quality".to_string(),
        };
        let checks: Vec<String> = self.threshold_used.iter().map(ToString::to_string).collect();
        write!(
            f,
            "{label}: {} → {}",
            checks.join(", "),
            self.recommendation
        )
    }
}

/// Kappa, alpha and overlap per criterion for a closed round.
pub fn compute_agreement(
    book: &RoundBook,
    metric: AlphaMetric,
) -> Result<Vec<AgreementResult>, RoundError> {
    book.require_closed()?;
    let mut out = Vec::new();
    for criterion in Criterion::ALL {
        let (a, b) = book.paired_labels(criterion);
        if a.is_empty() {
            continue;
        }
        let kappa = cohen_kappa(&a, &b).expect("non-empty aligned lists");
        let overlap = overlap_rate(&a, &b).expect("non-empty aligned lists");
        let alpha = krippendorff_alpha(&book.matrix(criterion), metric).ok();
        out.push(AgreementResult {
            criterion,
            cohen_kappa: kappa,
            krippendorff_alpha: alpha,
            overlap_rate: overlap,
            n_items: a.len(),
        });
    }
    Ok(out)
}

/// Applies the primary-statistic threshold to one criterion's agreement.
pub fn agreement_verdict(result: &AgreementResult, cfg: &GateConfig) -> GateOutcome {
    let check = match cfg.primary_statistic {
        PrimaryStatistic::Kappa => ThresholdCheck::new("kappa", Some(result.cohen_kappa), cfg.kappa_min),
        PrimaryStatistic::Alpha => ThresholdCheck::new("alpha", result.krippendorff_alpha, cfg.alpha_min),
        PrimaryStatistic::Overlap => ThresholdCheck::new("overlap", Some(result.overlap_rate), cfg.overlap_min),
    };
    let passed = check.passed;
    GateOutcome {
        criterion: Some(result.criterion),
        passed,
        statistic_values: GateStatistics::Agreement(result.clone()),
        threshold_used: vec![check],
        recommendation: if passed {
            Recommendation::Proceed
        } else {
            Recommendation::ReviseCodebook
        },
    }
}

fn require_purpose(book: &RoundBook, purpose: RoundPurpose) -> Result<(), RoundError> {
    if book.round.purpose != purpose {
        return Err(RoundError::BadRound(format!(
            "round {} has purpose {:?}, expected {purpose:?}",
            book.round_id(),
            book.round.purpose
        )));
    }
    Ok(())
}

pub fn evaluate_agreement_gate(
    book: &RoundBook,
    cfg: &GateConfig,
) -> Result<Vec<GateOutcome>, RoundError> {
    book.require_closed()?;
    require_purpose(book, RoundPurpose::CodebookCalibration)?;
    Ok(compute_agreement(book, cfg.alpha_metric)?
        .iter()
        .map(|r| agreement_verdict(r, cfg))
        .collect())
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn quality_fractions(book: &RoundBook) -> QualityFractions {
    let relevant = |l: RatingLabel| l >= RatingLabel::Medium;
    let diverse = |l: RatingLabel| l == RatingLabel::High;
    let count = |criterion: Criterion, annotator: Option<&str>, ok: &dyn Fn(RatingLabel) -> bool| {
        let rs: Vec<RatingLabel> = book
            .ratings
            .iter()
            .filter(|r| r.subject.criterion() == criterion)
            .filter(|r| annotator.is_none_or(|a| r.annotator_id == a))
            .map(|r| r.label)
            .collect();
        (rs.iter().filter(|l| ok(**l)).count(), rs.len())
    };
    let (rel_hits, rel_total) = count(Criterion::Relevance, None, &relevant);
    let (div_hits, div_total) = count(Criterion::Diversity, None, &diverse);
    let per_annotator = book
        .round
        .annotator_ids
        .iter()
        .map(|a| {
            let (rh, rt) = count(Criterion::Relevance, Some(a), &relevant);
            let (dh, dt) = count(Criterion::Diversity, Some(a), &diverse);
            (a.clone(), (fraction(rh, rt), fraction(dh, dt)))
        })
        .collect();
    QualityFractions {
        relevance: fraction(rel_hits, rel_total),
        diversity: fraction(div_hits, div_total),
        relevance_ratings: rel_total,
        diversity_ratings: div_total,
        per_annotator,
    }
}

/// Applies the relevance and diversity bars (inclusive) to quality fractions.
pub fn quality_verdict(q: &QualityFractions, cfg: &GateConfig) -> GateOutcome {
    let checks = match cfg.quality_pooling {
        QualityPooling::Pooled => vec![
            ThresholdCheck::new("relevance", Some(q.relevance), cfg.relevance_quality_min),
            ThresholdCheck::new("diversity", Some(q.diversity), cfg.diversity_quality_min),
        ],
        QualityPooling::PerAnnotator => q
            .per_annotator
            .iter()
            .flat_map(|(a, (rel, div))| {
                [
                    ThresholdCheck::new(&format!("relevance[{a}]"), Some(*rel), cfg.relevance_quality_min),
                    ThresholdCheck::new(&format!("diversity[{a}]"), Some(*div), cfg.diversity_quality_min),
                ]
            })
            .collect(),
    };
    let passed = checks.iter().all(|c| c.passed);
    GateOutcome {
        criterion: None,
        passed,
        statistic_values: GateStatistics::Quality(q.clone()),
        threshold_used: checks,
        recommendation: if passed {
            Recommendation::Proceed
        } else {
            Recommendation::ReviseTemplate
        },
    }
}

pub fn evaluate_template_quality_gate(
    book: &RoundBook,
    cfg: &GateConfig,
) -> Result<GateOutcome, RoundError> {
    book.require_closed()?;
    require_purpose(book, RoundPurpose::TemplateQuality)?;
    Ok(quality_verdict(&quality_fractions(book), cfg))
}

/// Runs whichever gate matches the round's purpose.
pub fn evaluate_gate(book: &RoundBook, cfg: &GateConfig) -> Result<Vec<GateOutcome>, RoundError> {
    match book.round.purpose {
        RoundPurpose::CodebookCalibration => evaluate_agreement_gate(book, cfg),
        RoundPurpose::TemplateQuality => Ok(vec![evaluate_template_quality_gate(book, cfg)?]),
    }
}
