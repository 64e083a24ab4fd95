// Replays recorded model output so the refinement loop can be inspected
// without a neural model. The fixture holds per-token log-probabilities for
// every intermediate hypothesis and the candidates the model proposed.

use std::path::PathBuf;

use errlens::analysis::EditKind;
use errlens::metric::EvalConfig;
use errlens::replay::ReplayScorer;
use errlens::{refine, Variant};

pub fn run_example() -> anyhow::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/recorded_refinement.json");
    let backend = ReplayScorer::from_path(&path)?;
    let reference = backend.fixture().reference.clone();
    let hypothesis = &backend.fixture().sentences[0].text;
    let cfg = EvalConfig { variant: Variant::Precision, ..EvalConfig::default() };

    let trace = refine(&backend, &reference, hypothesis, &cfg)?;
    println!("reference: {reference}");
    println!("{:>8}  {}", format!("{:.2}", trace.initial_score), hypothesis);
    let mut detected = Vec::new();
    for it in &trace.iterations {
        detected.push(it.detected_token.surface().to_string());
        let what = match it.chosen_edit.as_ref().map(|e| &e.kind) {
            Some(EditKind::Substitute(t)) => format!("{} -> {}", it.detected_token.surface(), t.surface()),
            Some(EditKind::Delete) => format!("drop {}", it.detected_token.surface()),
            Some(EditKind::InsertBefore(t)) => format!("insert {}", t.surface()),
            None => format!("{} kept", it.detected_token.surface()),
        };
        println!("{:>8}  {what}", format!("{:.2}", it.score_after));
    }
    println!("refined: {}", trace.final_text);
    anyhow::ensure!(trace.final_score > trace.initial_score);
    anyhow::ensure!(detected.first().map(String::as_str) == Some("Jerry"));
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
