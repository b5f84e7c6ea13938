//! ROUGE-L, cosine similarity and the mock embedder, without any network.
//!
//! `cargo run --example text_metrics`

use probe_audit::metrics::{cosine_similarity, dissimilarity, rouge_l_text, tokenize};
use probe_audit::provider::mock_embedding;

fn main() {
    let reference = "Swallowed gum passes through the digestive system within days.";
    let candidates = [
        "Gum passes through your digestive system in a few days.",
        "It stays in your stomach for seven years.",
    ];
    println!("reference tokens: {:?}", tokenize(reference));
    let r = mock_embedding(reference, 64);
    for c in candidates {
        let sim = cosine_similarity(&mock_embedding(c, 64), &r).unwrap();
        println!("{c}");
        println!("  rouge_l {:.3}  embed_sim {:.3}  dissimilarity {:.3}", rouge_l_text(c, reference), sim, dissimilarity(sim));
    }
}
