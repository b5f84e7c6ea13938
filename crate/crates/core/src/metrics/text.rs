//! Tokenization, ROUGE-L and vector similarity.

use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Lowercased tokens from the canonical tokenizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn from_text(text: &str) -> Self {
        Self {
            tokens: tokenize(text),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercase, split on Unicode whitespace, trim non-alphanumeric characters from both
/// ends of every token, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1. Zero when either side is empty or nothing is shared.
pub fn rouge_l_f1(candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&candidate.tokens, &reference.tokens);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_l_text(candidate: &str, reference: &str) -> f64 {
    rouge_l_f1(
        &TokenSequence::from_text(candidate),
        &TokenSequence::from_text(reference),
    )
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn dissimilarity(similarity: f64) -> f64 {
    1.0 - similarity
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::from_text(s)
    }

    #[test]
    fn tokenizer_strips_edge_punctuation() {
        assert_eq!(
            tokenize("  What's  the (BEST) answer?! 3.5 -- "),
            vec!["what's", "the", "best", "answer", "3.5"]
        );
    }

    #[test]
    fn identical_sequences_score_one() {
        assert_eq!(rouge_l_f1(&seq("a b c"), &seq("a b c")), 1.0);
    }

    #[test]
    fn cat_on_mat() {
        let f = rouge_l_f1(&seq("the cat sat on the mat"), &seq("the cat lay on the mat"));
        assert!((f - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_and_empty_score_zero() {
        assert_eq!(rouge_l_f1(&seq("a b"), &seq("c d")), 0.0);
        assert_eq!(rouge_l_f1(&seq(""), &seq("c d")), 0.0);
        assert_eq!(rouge_l_f1(&seq("a"), &seq("")), 0.0);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[2.0, 3.0], &[2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(MetricsError::DimensionMismatch { left: 1, right: 2 })
        );
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]),
            Err(MetricsError::ZeroVector)
        );
    }

    #[test]
    fn dissimilarity_examples() {
        assert!((dissimilarity(0.847) - 0.153).abs() < 1e-12);
        assert_eq!(dissimilarity(1.0), 0.0);
        assert_eq!(dissimilarity(0.0), 1.0);
    }

    proptest! {
        #[test]
        fn cosine_is_scale_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 1..12),
            k in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3));
            let b: Vec<f64> = a.iter().rev().map(|x| x + 0.5).collect();
            prop_assume!(b.iter().any(|x| x.abs() > 1e-3));
            let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
            let c1 = cosine_similarity(&a, &b).unwrap();
            let c2 = cosine_similarity(&scaled, &b).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-12);
        }

        #[test]
        fn dissimilarity_is_an_involution(s in -1.0f64..1.0) {
            prop_assert!((dissimilarity(dissimilarity(s)) - s).abs() < 1e-15);
        }
    }
}
