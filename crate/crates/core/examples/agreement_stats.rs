//! Cohen's kappa, Krippendorff's alpha and raw overlap for two annotators.
//!
//! `cargo run --example agreement_stats`

use probe_audit::annotation::{cohen_kappa, krippendorff_alpha, overlap_rate, AlphaMetric};
use probe_audit::domain::RatingLabel::{self, *};

fn main() {
    let a = [High, High, Medium, Low, High, Medium, Low, High];
    let b = [High, Medium, Medium, Low, High, Medium, Medium, High];
    let units: Vec<Vec<Option<RatingLabel>>> =
        a.iter().zip(&b).map(|(x, y)| vec![Some(*x), Some(*y)]).collect();

    println!("items      {}", a.len());
    println!("overlap    {:.4}", overlap_rate(&a, &b).unwrap());
    println!("kappa      {:.4}", cohen_kappa(&a, &b).unwrap());
    for metric in [AlphaMetric::Nominal, AlphaMetric::Ordinal] {
        let alpha = krippendorff_alpha(&units, metric).unwrap();
        println!("alpha {metric:?}: {alpha:.4}");
    }
}
