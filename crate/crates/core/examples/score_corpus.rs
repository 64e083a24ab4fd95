// Scores a small corpus with the in-process n-gram backend and prints the
// explicit/implicit split for every hypothesis.
//
//     cargo run --example score_corpus

use errlens::io::{load_reports, write_reports, EvalSample};
use errlens::metric::{evaluate_corpus, EvalConfig};
use errlens::NgramScorer;

fn sample(id: &str, system: &str, reference: &str, hypothesis: &str) -> EvalSample {
    EvalSample {
        id: id.into(),
        source: None,
        references: vec![reference.into()],
        hypothesis: hypothesis.into(),
        system: system.into(),
        segment_id: Some(id.split('-').next().unwrap().into()),
    }
}

pub fn run_example() -> anyhow::Result<()> {
    let samples = vec![
        sample("1-a", "A", "the cat sat on the mat .", "the cat sat on the mat ."),
        sample("1-b", "B", "the cat sat on the mat .", "the cat sit on mat ."),
        sample("2-a", "A", "birds sang loudly near the river", "birds sang near the river"),
        sample("2-b", "B", "birds sang loudly near the river", "weather looks nice today so we walked river"),
    ];
    let cfg = EvalConfig::default();
    let reports = evaluate_corpus(&NgramScorer::default(), &samples, &cfg, 4)?;

    println!("{:<5} {:>9} {:>9} {:>9}  refined", "id", "dist_exp", "dist_imp", "final");
    for r in &reports {
        println!(
            "{:<5} {:>9.4} {:>9.4} {:>9.4}  {}{}",
            r.id,
            r.dist_exp,
            r.dist_imp,
            r.final_score,
            r.refined_text,
            if r.non_translation { "  [non-translation]" } else { "" }
        );
    }
    anyhow::ensure!(reports[0].final_score == 0.0, "identical hypothesis should score zero");
    anyhow::ensure!(reports[1].dist_exp > 0.0, "corrupted hypothesis should have explicit errors");
    anyhow::ensure!(reports[3].non_translation, "unrelated hypothesis should be flagged");

    // Reports round-trip through JSONL, so expensive scoring runs once.
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("reports.jsonl");
    write_reports(&reports, &path)?;
    anyhow::ensure!(load_reports(&path)? == reports);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
