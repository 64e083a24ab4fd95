// Walks through the detect/correct loop one iteration at a time.

use errlens::analysis::EditKind;
use errlens::metric::EvalConfig;
use errlens::{refine, NgramScorer, ScorerBackend, Variant};

pub fn run_example() -> anyhow::Result<()> {
    let backend = NgramScorer::default();
    let cfg = EvalConfig { variant: Variant::Precision, ..EvalConfig::default() };
    let reference = "a young man found the old house near the river";
    let hypothesis = "a young man find the house near near the river";

    let trace = refine(&backend, reference, hypothesis, &cfg)?;
    println!("initial  {:.4}  {hypothesis}", trace.initial_score);
    for (i, it) in trace.iterations.iter().enumerate() {
        let edit = match it.chosen_edit.as_ref().map(|e| &e.kind) {
            Some(EditKind::Delete) => "delete".to_string(),
            Some(EditKind::Substitute(t)) => format!("substitute {}", t.surface()),
            Some(EditKind::InsertBefore(t)) => format!("insert {} before", t.surface()),
            None => "no improving edit".to_string(),
        };
        println!(
            "iter {}   {:.4} -> {:.4}  at {:>2} {:<8} {edit}",
            i + 1,
            it.score_before,
            it.score_after,
            it.detected_index,
            it.detected_token.surface()
        );
    }
    println!("final    {:.4}  {} ({:?})", trace.final_score, trace.final_text, trace.stop_reason);

    anyhow::ensure!(trace.final_score > trace.initial_score);
    anyhow::ensure!(trace.replay(&backend)? == trace.final_text);
    anyhow::ensure!(backend.info().supports_topk);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
