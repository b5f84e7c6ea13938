//! Inter-annotator agreement statistics.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::RatingLabel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgreementError {
    #[error("label lists differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("no items to compare")]
    EmptyInput,
    #[error("need at least 2 items with 2 or more ratings each")]
    InsufficientData,
}

fn check_pair<L>(a: &[L], b: &[L]) -> Result<(), AgreementError> {
    if a.len() != b.len() {
        return Err(AgreementError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(AgreementError::EmptyInput);
    }
    Ok(())
}

/// Share of positions where both lists hold the same label.
pub fn overlap_rate<L: PartialEq>(a: &[L], b: &[L]) -> Result<f64, AgreementError> {
    check_pair(a, b)?;
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// Unweighted Cohen's kappa for two index-aligned label lists.
///
/// Returns 1.0 when observed agreement is perfect, including the degenerate case
/// where both annotators used one identical label throughout.
pub fn cohen_kappa<L: Eq + Hash>(a: &[L], b: &[L]) -> Result<f64, AgreementError> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    if agree == a.len() {
        return Ok(1.0);
    }
    let p_o = agree as f64 / n;
    let mut marg_a: HashMap<&L, usize> = HashMap::new();
    let mut marg_b: HashMap<&L, usize> = HashMap::new();
    for x in a {
        *marg_a.entry(x).or_default() += 1;
    }
    for y in b {
        *marg_b.entry(y).or_default() += 1;
    }
    // Integer sum first, so the result does not depend on map iteration order.
    let chance: usize = marg_a
        .iter()
        .map(|(l, ca)| ca * marg_b.get(l).copied().unwrap_or(0))
        .sum();
    let p_e = chance as f64 / (n * n);
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AlphaMetric {
    Nominal,
    /// Squared difference of Likert ranks.
    #[default]
    Ordinal,
}

impl AlphaMetric {
    pub fn distance(self, a: RatingLabel, b: RatingLabel) -> f64 {
        match self {
            AlphaMetric::Nominal => f64::from(u8::from(a != b)),
            AlphaMetric::Ordinal => {
                let d = f64::from(a.rank()) - f64::from(b.rank());
                d * d
            }
        }
    }
}

/// Krippendorff's alpha from the coincidence matrix.
///
/// `units` is item × annotator; `None` marks a missing rating. Items with fewer
/// than two ratings are not pairable and are ignored.
pub fn krippendorff_alpha(
    units: &[Vec<Option<RatingLabel>>],
    metric: AlphaMetric,
) -> Result<f64, AgreementError> {
    const K: usize = 3;
    let mut coincidence = [[0.0f64; K]; K];
    let mut pairable = 0;
    for unit in units {
        let values: Vec<RatingLabel> = unit.iter().flatten().copied().collect();
        let m = values.len();
        if m < 2 {
            continue;
        }
        pairable += 1;
        let mut counts = [0usize; K];
        for v in &values {
            counts[v.rank() as usize] += 1;
        }
        let w = 1.0 / (m as f64 - 1.0);
        for c in 0..K {
            for k in 0..K {
                let pairs = if c == k {
                    counts[c] * counts[c].saturating_sub(1)
                } else {
                    counts[c] * counts[k]
                };
                coincidence[c][k] += pairs as f64 * w;
            }
        }
    }
    if pairable < 2 {
        return Err(AgreementError::InsufficientData);
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();
    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..K {
        for k in 0..K {
            let d = metric.distance(
                RatingLabel::from_rank(c as u8).unwrap(),
                RatingLabel::from_rank(k as u8).unwrap(),
            );
            observed += coincidence[c][k] * d;
            expected += marginals[c] * marginals[k] * d;
        }
    }
    if observed == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}
