// Prompted scoring: each prompt is scored on its own and the per-token
// log-probabilities are averaged across prompts.

use errlens::metric::{evaluate, EvalConfig};
use errlens::scorer::{variant_score, PromptSet};
use errlens::{NgramScorer, Variant};

pub fn run_example() -> anyhow::Result<()> {
    let backend = NgramScorer::default();
    let references = vec!["the young woman saw a bird in the garden".to_string()];
    let hypothesis = "the young woman saw the bird in garden";

    let prompts =
        PromptSet { encoder_suffixes: vec!["Such as".into()], decoder_prefixes: vec!["In other words ,".into()] };
    for variant in [Variant::Precision, Variant::Recall, Variant::F] {
        let plain = variant_score(&backend, None, &references, hypothesis, variant, &PromptSet::default())?;
        let prompted = variant_score(&backend, None, &references, hypothesis, variant, &prompts)?;
        println!("{variant:<10} plain {plain:.4}  prompted {prompted:.4}");
    }

    let cfg = EvalConfig { prompts, ..EvalConfig::default() };
    let report = evaluate(&backend, None, &references, hypothesis, &cfg)?;
    println!("prompted report: exp {:.4} imp {:.4} final {:.4}", report.dist_exp, report.dist_imp, report.final_score);
    anyhow::ensure!(report.final_score <= 0.0);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
