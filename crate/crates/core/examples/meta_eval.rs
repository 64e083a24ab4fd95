// Correlates two metrics with pairwise human judgments and tests whether
// the difference between them is significant.

use std::collections::BTreeSet;

use errlens::io::EvalSample;
use errlens::meta::{
    bootstrap_significance, darr_from_human, judgment_accuracy, kendall_darr, remove_outlier_systems,
    table_correlation, CorrelationKind, ScoreTable, DEFAULT_OUTLIER_CUTOFF,
};
use errlens::metric::{evaluate_corpus, EvalConfig};
use errlens::NgramScorer;

const REFERENCES: [&str; 6] = [
    "the old man saw a bird near the river",
    "a small dog ran quickly under the table",
    "the young woman found a blue house",
    "birds sang loudly in the big garden",
    "the cat sat slowly on the red mat",
    "a man and a woman walked to the tree",
];

/// System `sN` drops `N` words from every reference.
fn corpus() -> Vec<EvalSample> {
    let mut out = Vec::new();
    for (g, reference) in REFERENCES.iter().enumerate() {
        let words: Vec<&str> = reference.split(' ').collect();
        for s in 0..4 {
            let hyp: Vec<&str> =
                words.iter().enumerate().filter(|(i, _)| !(1..=s).any(|k| k * 2 == *i)).map(|(_, w)| *w).collect();
            out.push(EvalSample {
                id: format!("{g}-s{s}"),
                source: None,
                references: vec![reference.to_string()],
                hypothesis: hyp.join(" "),
                system: format!("s{s}"),
                segment_id: Some(format!("seg{g}")),
            });
        }
    }
    out
}

pub fn run_example() -> anyhow::Result<()> {
    let samples = corpus();
    let reports = evaluate_corpus(&NgramScorer::default(), &samples, &EvalConfig::default(), 4)?;

    // Human scores: fewer dropped words is better, with one inconsistent segment.
    let mut human = ScoreTable::new();
    for s in &samples {
        let n: f64 = s.system[1..].parse()?;
        let noise = if s.segment() == "seg3" && n == 1.0 { -3.0 } else { 0.0 };
        human.insert(&s.system, s.segment(), -n + noise)?;
    }
    let judgments = darr_from_human(&human, None);

    let weighted = ScoreTable::from_reports(&reports, |r| r.final_score)?;
    // Baseline: share of hypothesis words found in the reference.
    let mut overlap = ScoreTable::new();
    for s in &samples {
        let words: Vec<&str> = s.hypothesis.split(' ').collect();
        let hits = words.iter().filter(|w| s.references[0].split(' ').any(|r| r == **w)).count();
        overlap.insert(&s.system, s.segment(), hits as f64 / words.len() as f64)?;
    }
    let kendall_weighted = kendall_darr(&judgments, &weighted)?;
    let kendall_overlap = kendall_darr(&judgments, &overlap)?;
    println!("{} pairs", judgments.len());
    println!("errlens        tau {:.3}", kendall_weighted.statistic);
    println!("word overlap   tau {:.3}", kendall_overlap.statistic);
    println!("errlens        accuracy {:.3}", judgment_accuracy(&judgments, &weighted)?.statistic);

    let p = bootstrap_significance(&judgments, &weighted, &overlap, 1000, 7)?;
    println!("bootstrap p = {p:.3}");

    let segment_level = table_correlation(&weighted, &human, CorrelationKind::Pearson)?;
    println!("segment-level pearson {:.3} over {} items", segment_level.statistic, segment_level.n_items);

    let kept = remove_outlier_systems(&human.system_means(), DEFAULT_OUTLIER_CUTOFF);
    let all: BTreeSet<String> = human.systems();
    println!("outliers removed: {:?}", all.difference(&kept).collect::<Vec<_>>());

    anyhow::ensure!(kendall_weighted.statistic > 0.5);
    anyhow::ensure!(p < 0.05, "errlens should beat the overlap baseline");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
