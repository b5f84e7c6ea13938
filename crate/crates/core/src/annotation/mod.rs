//! Human-in-the-loop annotation: rounds, agreement statistics and gates.

mod gate;
mod round;
mod stats;

pub use gate::{
    agreement_verdict, compute_agreement, evaluate_agreement_gate, evaluate_gate,
    evaluate_template_quality_gate, quality_fractions, quality_verdict, AgreementResult,
    GateConfig, GateOutcome, GateStatistics, PrimaryStatistic, QualityFractions, QualityPooling,
    Recommendation, ThresholdCheck,
};
pub use round::{RoundBook, RoundError};
pub use stats::{cohen_kappa, krippendorff_alpha, overlap_rate, AgreementError, AlphaMetric};
