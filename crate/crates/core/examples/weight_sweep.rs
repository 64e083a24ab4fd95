// Tunes the explicit:implicit weight ratio. Reports are computed once; each
// ratio only recombines the stored distances.

use errlens::io::EvalSample;
use errlens::meta::{darr_from_human, weight_sweep, Judgments, ScoreTable, SweepCorpus};
use errlens::metric::{evaluate_corpus, EvalConfig};
use errlens::scorer::CountingBackend;
use errlens::NgramScorer;

pub fn run_example() -> anyhow::Result<()> {
    let pairs = [
        ("the cat sat on the mat", ["the cat sat on the mat", "the cat sat on mat", "a dog sat on the mat"]),
        ("birds sang near the river", ["birds sang near the river", "birds sang near river", "fish swam in the sea"]),
        ("a man found the old house", ["a man found the old house", "a man found the house", "man house old found"]),
    ];
    let mut samples = Vec::new();
    let mut human = ScoreTable::new();
    for (g, (reference, hyps)) in pairs.iter().enumerate() {
        for (s, hyp) in hyps.iter().enumerate() {
            let (system, segment) = (format!("sys{s}"), format!("seg{g}"));
            human.insert(&system, &segment, -(s as f64))?;
            samples.push(EvalSample {
                id: format!("{g}-{s}"),
                source: None,
                references: vec![reference.to_string()],
                hypothesis: hyp.to_string(),
                system,
                segment_id: Some(segment),
            });
        }
    }

    let backend = CountingBackend::new(NgramScorer::default());
    let reports = evaluate_corpus(&backend, &samples, &EvalConfig::default(), 2)?;
    let calls = backend.score_requests();

    let corpus = SweepCorpus { reports: &reports, judgments: Judgments::Darr(darr_from_human(&human, None)) };
    println!("ratio  kendall");
    for (ratio, result) in weight_sweep(&corpus, &[1.0, 1.2, 1.4, 1.6, 2.0]) {
        println!("{ratio:<5}  {:.3}", result?.statistic);
    }
    anyhow::ensure!(backend.score_requests() == calls, "the sweep must not rescore");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
