//! Answers a probe group with a mock audited model; failures are recorded per
//! probe and a run id cannot be reused for the same model.
//!
//! `cargo run --example answering`

use probe_audit::answering::{answer_dataset, AnswerRunConfig, RunRegistry};
use probe_audit::domain::ProbeGroup;
use probe_audit::provider::{Provider, ProviderConfig};

#[tokio::main]
async fn main() {
    let texts: Vec<String> = [
        "Is swallowed gum digested over seven years?",
        "How long does gum stay in the body?",
        "What does the stomach do with gum?",
    ]
    .map(String::from)
    .to_vec();
    let group = ProbeGroup::from_texts("q0001", 1, &texts);
    let provider = Provider::from_config(&ProviderConfig::mock("llama-2-7b-chat"), true).unwrap();
    let registry = RunRegistry::new();
    let cfg = AnswerRunConfig::new(provider.model_id(), "demo");

    let (responses, summary) = answer_dataset(&provider, &cfg, std::slice::from_ref(&group), &registry).await.unwrap();
    println!("{summary:?}");
    for r in &responses {
        println!("{} -> {}", r.probe_id, r.text);
    }
    let again = answer_dataset(&provider, &cfg, &[group], &registry).await;
    println!("rerun: {}", again.unwrap_err());
}
