//! Opens a codebook-calibration round, records two annotators' labels and
//! evaluates the agreement gate, as `audit gate` would.
//!
//! `cargo run --example calibration_gate`

use probe_audit::domain::{RatingLabel::*, RoundPurpose};
use probe_audit::project::{
    agreement_document, generate, import_questions, load_round, open_round, submit_rating,
    OpenRoundRequest, Project, RatingSubmission, StageOptions,
};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let p = Project::init(&dir.path().join("audit"))?;
    let file = dir.path().join("q.jsonl");
    std::fs::write(
        &file,
        "{\"question\":\"Does lightning never strike the same place twice?\",\"best_answer\":\"It often does.\"}\n",
    )?;
    import_questions(&p, &file)?;
    generate(&p, None, 0, &StageOptions { force_mock: true }).await?;

    let round = open_round(
        &p,
        &OpenRoundRequest {
            round_id: None,
            purpose: RoundPurpose::CodebookCalibration,
            annotators: ["ann-a".into(), "ann-b".into()],
            sample: None,
            seed: 0,
            codebook_version: None,
        },
    )?;
    let id = round.round_id().to_string();
    // Five relevance items and one diversity item; the annotators split on one.
    let labels = [(High, High), (High, Medium), (Medium, Medium), (Low, Low), (High, High), (High, High)];
    for (subject, (a, b)) in round.round.subjects.iter().zip(labels) {
        for (who, label) in [("ann-a", a), ("ann-b", b)] {
            submit_rating(
                &p,
                RatingSubmission {
                    annotator_id: who.into(),
                    round_id: id.clone(),
                    subject: subject.clone(),
                    label,
                    timestamp: None,
                },
            )?;
        }
    }

    let doc = agreement_document(&p, &load_round(&p, &id)?)?;
    for g in &doc.gates {
        println!("{g}");
    }
    println!("gate {}", if doc.passed { "passed" } else { "failed" });
    Ok(())
}
