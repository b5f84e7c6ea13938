//! Round lifecycle: open, collect ratings from two annotators, close.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    round_subjects, validate_rating, AnnotationRound, Codebook, Criterion, ProbeGroup, Rating,
    RatingLabel, RoundPurpose, RoundState, Subject, Violation,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoundError {
    #[error("rating rejected: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("round {0} is closed")]
    ImmutableRound(String),
    #[error("round {round_id} is incomplete: {missing} ratings outstanding")]
    IncompleteRound { round_id: String, missing: usize },
    #[error("round {0} is not closed")]
    RoundNotClosed(String),
    #[error("cannot open round: {0}")]
    BadRound(String),
}

/// A round together with the ratings submitted to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundBook {
    pub round: AnnotationRound,
    pub ratings: Vec<Rating>,
}

impl RoundBook {
    pub fn open(
        round_id: &str,
        purpose: RoundPurpose,
        codebook: &Codebook,
        groups: &[&ProbeGroup],
        annotators: [&str; 2],
    ) -> Result<Self, RoundError> {
        if groups.is_empty() {
            return Err(RoundError::BadRound("no probe groups in sample".into()));
        }
        if annotators[0] == annotators[1] || annotators.iter().any(|a| a.trim().is_empty()) {
            return Err(RoundError::BadRound(
                "a round needs two distinct annotators".into(),
            ));
        }
        let template_version = groups[0].template_version;
        if groups.iter().any(|g| g.template_version != template_version) {
            return Err(RoundError::BadRound(
                "all groups in a round must come from one template version".into(),
            ));
        }
        let missing = codebook.missing_cells();
        if !missing.is_empty() {
            return Err(RoundError::BadRound(format!(
                "codebook {} lacks definitions for {missing:?}",
                codebook.version
            )));
        }
        Ok(Self {
            round: AnnotationRound {
                round_id: round_id.to_string(),
                codebook_version: codebook.version,
                template_version,
                question_ids: groups.iter().map(|g| g.question_id.clone()).collect(),
                annotator_ids: annotators.iter().map(|a| a.to_string()).collect(),
                state: RoundState::Open,
                purpose,
                subjects: round_subjects(groups),
                completed_by: Vec::new(),
            },
            ratings: Vec::new(),
        })
    }

    pub fn from_parts(round: AnnotationRound, ratings: impl IntoIterator<Item = Rating>) -> Self {
        let ratings = ratings
            .into_iter()
            .filter(|r| r.round_id == round.round_id)
            .collect();
        Self { round, ratings }
    }

    pub fn round_id(&self) -> &str {
        &self.round.round_id
    }

    pub fn state(&self) -> RoundState {
        self.round.state
    }

    pub fn rated_by(&self, annotator: &str) -> usize {
        self.ratings
            .iter()
            .filter(|r| r.annotator_id == annotator)
            .count()
    }

    pub fn remaining_for(&self, annotator: &str) -> usize {
        self.round.subjects.len() - self.rated_by(annotator)
    }

    /// Accepts a rating and advances the state when an annotator finishes.
    pub fn submit(&mut self, rating: Rating) -> Result<RoundState, RoundError> {
        if self.round.state == RoundState::Closed {
            return Err(RoundError::ImmutableRound(self.round.round_id.clone()));
        }
        validate_rating(&rating, &self.round, &self.ratings).map_err(RoundError::Invalid)?;
        let annotator = rating.annotator_id.clone();
        self.ratings.push(rating);
        if self.remaining_for(&annotator) == 0 && !self.round.completed_by.contains(&annotator) {
            self.round.completed_by.push(annotator);
            self.round.state = match self.round.completed_by.len() {
                1 => RoundState::AwaitingSecond,
                _ => RoundState::Closed,
            };
        }
        Ok(self.round.state)
    }

    /// Confirms that `annotator` has rated everything.
    pub fn complete(&self, annotator: &str) -> Result<RoundState, RoundError> {
        let missing = self.remaining_for(annotator);
        if missing > 0 {
            return Err(RoundError::IncompleteRound {
                round_id: self.round.round_id.clone(),
                missing,
            });
        }
        Ok(self.round.state)
    }

    /// Succeeds only when both annotators are done.
    pub fn close(&mut self) -> Result<(), RoundError> {
        let missing: usize = self
            .round
            .annotator_ids
            .iter()
            .map(|a| self.remaining_for(a))
            .sum();
        if missing > 0 {
            return Err(RoundError::IncompleteRound {
                round_id: self.round.round_id.clone(),
                missing,
            });
        }
        self.round.state = RoundState::Closed;
        Ok(())
    }

    pub fn require_closed(&self) -> Result<(), RoundError> {
        if self.round.state == RoundState::Closed {
            Ok(())
        } else {
            Err(RoundError::RoundNotClosed(self.round.round_id.clone()))
        }
    }

    pub fn label_of(&self, annotator: &str, subject: &Subject) -> Option<RatingLabel> {
        self.ratings
            .iter()
            .find(|r| r.annotator_id == annotator && &r.subject == subject)
            .map(|r| r.label)
    }

    pub fn subjects(&self, criterion: Criterion) -> impl Iterator<Item = &Subject> {
        self.round
            .subjects
            .iter()
            .filter(move |s| s.criterion() == criterion)
    }

    /// Item × annotator matrix for one criterion, in subject order.
    pub fn matrix(&self, criterion: Criterion) -> Vec<Vec<Option<RatingLabel>>> {
        self.subjects(criterion)
            .map(|s| {
                self.round
                    .annotator_ids
                    .iter()
                    .map(|a| self.label_of(a, s))
                    .collect()
            })
            .collect()
    }

    /// Index-aligned label lists of the two annotators over fully rated subjects.
    pub fn paired_labels(&self, criterion: Criterion) -> (Vec<RatingLabel>, Vec<RatingLabel>) {
        let (a, b) = (&self.round.annotator_ids[0], &self.round.annotator_ids[1]);
        self.subjects(criterion)
            .filter_map(|s| Some((self.label_of(a, s)?, self.label_of(b, s)?)))
            .unzip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::DateTime;

    pub(crate) fn groups(n_questions: usize, n_probes: usize) -> Vec<ProbeGroup> {
        (0..n_questions)
            .map(|q| {
                let texts: Vec<String> = (0..n_probes).map(|p| format!("q{q} probe {p}?")).collect();
                ProbeGroup::from_texts(&format!("q{q}"), 1, &texts)
            })
            .collect()
    }

    fn open(gs: &[ProbeGroup]) -> RoundBook {
        let refs: Vec<&ProbeGroup> = gs.iter().collect();
        RoundBook::open(
            "r1",
            RoundPurpose::CodebookCalibration,
            &Codebook::default_rubric(),
            &refs,
            ["ann-a", "ann-b"],
        )
        .unwrap()
    }

    fn rate_all(book: &mut RoundBook, annotator: &str) -> RoundState {
        let subjects = book.round.subjects.clone();
        let mut state = book.state();
        for s in subjects {
            state = book
                .submit(Rating {
                    annotator_id: annotator.into(),
                    round_id: "r1".into(),
                    subject: s,
                    label: RatingLabel::High,
                    timestamp: DateTime::UNIX_EPOCH,
                })
                .unwrap();
        }
        state
    }

    #[test]
    fn sixty_items_for_ten_by_five() {
        let gs = groups(10, 5);
        let book = open(&gs);
        assert_eq!(book.round.subjects.len(), 60);
        assert_eq!(book.subjects(Criterion::Relevance).count(), 50);
        assert_eq!(book.subjects(Criterion::Diversity).count(), 10);
    }

    #[test]
    fn state_machine() {
        let gs = groups(10, 5);
        let mut book = open(&gs);
        assert!(matches!(book.close(), Err(RoundError::IncompleteRound { missing: 120, .. })));
        assert_eq!(rate_all(&mut book, "ann-a"), RoundState::AwaitingSecond);
        assert!(book.complete("ann-a").is_ok());
        assert!(book.complete("ann-b").is_err());
        assert!(book.require_closed().is_err());
        assert_eq!(rate_all(&mut book, "ann-b"), RoundState::Closed);
        assert!(book.close().is_ok());
        let late = Rating {
            annotator_id: "ann-a".into(),
            round_id: "r1".into(),
            subject: book.round.subjects[0].clone(),
            label: RatingLabel::Low,
            timestamp: DateTime::UNIX_EPOCH,
        };
        assert_eq!(book.submit(late), Err(RoundError::ImmutableRound("r1".into())));
    }

    #[test]
    fn duplicate_is_rejected_with_violation() {
        let gs = groups(1, 2);
        let mut book = open(&gs);
        let r = Rating {
            annotator_id: "ann-a".into(),
            round_id: "r1".into(),
            subject: book.round.subjects[0].clone(),
            label: RatingLabel::Low,
            timestamp: DateTime::UNIX_EPOCH,
        };
        book.submit(r.clone()).unwrap();
        match book.submit(r) {
            Err(RoundError::Invalid(v)) => assert_eq!(v[0].code, "duplicate"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn open_rejects_same_annotator_twice() {
        let gs = groups(1, 2);
        let refs: Vec<&ProbeGroup> = gs.iter().collect();
        assert!(RoundBook::open("r", RoundPurpose::TemplateQuality, &Codebook::default_rubric(), &refs, ["a", "a"]).is_err());
    }
}
