//! Agreement between metric scores and human judgments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::ErrorReport;

pub const DEFAULT_OUTLIER_CUTOFF: f64 = 2.5;
pub const DEFAULT_RESAMPLES: usize = 1000;

/// Human preference of one system's output over another's on a segment.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DarrJudgment {
    pub segment_id: String,
    pub better: String,
    pub worse: String,
}

impl DarrJudgment {
    pub fn new(segment_id: &str, better: &str, worse: &str) -> Result<Self> {
        if better == worse {
            return Err(Error::Data(format!("judgment on segment {segment_id} compares system {better} with itself")));
        }
        Ok(DarrJudgment { segment_id: segment_id.to_string(), better: better.to_string(), worse: worse.to_string() })
    }
}

/// Scores keyed by (system, segment). Used for metric outputs and for human
/// scores alike.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    scores: BTreeMap<(String, String), f64>,
}

pub type SegmentScores = ScoreTable;
pub type HumanScores = ScoreTable;

impl ScoreTable {
    pub fn new() -> Self {
        ScoreTable::default()
    }

    pub fn insert(&mut self, system: &str, segment: &str, score: f64) -> Result<()> {
        let key = (system.to_string(), segment.to_string());
        if self.scores.contains_key(&key) {
            return Err(Error::Data(format!("duplicate score for system {system}, segment {segment}")));
        }
        self.scores.insert(key, score);
        Ok(())
    }

    pub fn get(&self, system: &str, segment: &str) -> Option<f64> {
        self.scores.get(&(system.to_string(), segment.to_string())).copied()
    }

    fn require(&self, system: &str, segment: &str) -> Result<f64> {
        self.get(system, segment).ok_or_else(|| Error::Data(format!("no score for system {system}, segment {segment}")))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), f64)> {
        self.scores.iter().map(|(k, v)| (k, *v))
    }

    pub fn systems(&self) -> BTreeSet<String> {
        self.scores.keys().map(|(s, _)| s.clone()).collect()
    }

    /// Mean score per system.
    pub fn system_means(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for ((sys, _), v) in &self.scores {
            let e = acc.entry(sys.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        acc.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect()
    }

    pub fn restrict(&self, systems: &BTreeSet<String>) -> ScoreTable {
        ScoreTable {
            scores: self
                .scores
                .iter()
                .filter(|((s, _), _)| systems.contains(s))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// Builds a table from reports' `system`/`segment_id` and a score.
    pub fn from_reports(reports: &[ErrorReport], score: impl Fn(&ErrorReport) -> f64) -> Result<Self> {
        let mut t = ScoreTable::new();
        for r in reports {
            t.insert(&r.system, &r.segment_id, score(r))?;
        }
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CorrelationKind {
    KendallDarr,
    Spearman,
    Pearson,
    Accuracy,
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationKind::KendallDarr => "kendall_darr",
            CorrelationKind::Spearman => "spearman",
            CorrelationKind::Pearson => "pearson",
            CorrelationKind::Accuracy => "accuracy",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub statistic: f64,
    pub n_items: usize,
    pub kind: CorrelationKind,
}

/// +1 when the metric agrees with the judgment, -1 otherwise (ties included).
fn agreement(judgments: &[DarrJudgment], scores: &ScoreTable) -> Result<Vec<i8>> {
    judgments
        .iter()
        .map(|j| {
            let b = scores.require(&j.better, &j.segment_id)?;
            let w = scores.require(&j.worse, &j.segment_id)?;
            Ok(if b > w { 1 } else { -1 })
        })
        .collect()
}

/// Kendall's tau in its DARR form: (concordant - discordant) / total, ties
/// counted as discordant.
pub fn kendall_darr(judgments: &[DarrJudgment], scores: &ScoreTable) -> Result<CorrelationResult> {
    if judgments.is_empty() {
        return Err(Error::UndefinedCorrelation("no judgments".into()));
    }
    let signs = agreement(judgments, scores)?;
    Ok(CorrelationResult { statistic: tau_of(&signs), n_items: judgments.len(), kind: CorrelationKind::KendallDarr })
}

fn tau_of(signs: &[i8]) -> f64 {
    let sum: i64 = signs.iter().map(|&s| i64::from(s)).sum();
    sum as f64 / signs.len() as f64
}

fn check_paired(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("need at least 2 items, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite value in correlation input".into()));
    }
    Ok(())
}

fn product_moment(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check_paired(x, y)?;
    Ok(CorrelationResult { statistic: product_moment(x, y)?, n_items: x.len(), kind: CorrelationKind::Pearson })
}

/// 1-based ranks; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean of (i+1..=j)
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check_paired(x, y)?;
    Ok(CorrelationResult {
        statistic: product_moment(&average_ranks(x), &average_ranks(y))?,
        n_items: x.len(),
        kind: CorrelationKind::Spearman,
    })
}

/// Fraction of `(score_correct, score_incorrect)` pairs ranked correctly;
/// ties count as failures.
pub fn pairwise_accuracy(pairs: &[(f64, f64)]) -> Result<CorrelationResult> {
    if pairs.is_empty() {
        return Err(Error::Argument("no pairs".into()));
    }
    let correct = pairs.iter().filter(|(c, i)| c > i).count();
    Ok(CorrelationResult {
        statistic: correct as f64 / pairs.len() as f64,
        n_items: pairs.len(),
        kind: CorrelationKind::Accuracy,
    })
}

/// Accuracy over judgment pairs: `better` is the correct output.
pub fn judgment_accuracy(judgments: &[DarrJudgment], scores: &ScoreTable) -> Result<CorrelationResult> {
    let pairs = judgments
        .iter()
        .map(|j| Ok((scores.require(&j.better, &j.segment_id)?, scores.require(&j.worse, &j.segment_id)?)))
        .collect::<Result<Vec<_>>>()?;
    pairwise_accuracy(&pairs)
}

/// Paired bootstrap over judgments. Each resample draws judgments with
/// replacement and compares the two metrics' tau; the p-value is the share
/// of resamples in which the metric that wins on the full set fails to win.
/// Resample `i` draws from its own ChaCha stream derived from `seed`, so
/// the result does not depend on scheduling.
pub fn bootstrap_significance(
    judgments: &[DarrJudgment],
    scores_a: &ScoreTable,
    scores_b: &ScoreTable,
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    if resamples < 100 {
        return Err(Error::Argument(format!("need at least 100 resamples, got {resamples}")));
    }
    if judgments.is_empty() {
        return Err(Error::UndefinedCorrelation("no judgments".into()));
    }
    let a = agreement(judgments, scores_a)?;
    let b = agreement(judgments, scores_b)?;
    let a_wins = tau_of(&a) >= tau_of(&b);
    let n = judgments.len();

    let losses: usize = (0..resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut diff: i64 = 0;
            for _ in 0..n {
                let k = rng.random_range(0..n);
                diff += i64::from(a[k]) - i64::from(b[k]);
            }
            let winner_won = if a_wins { diff > 0 } else { diff < 0 };
            usize::from(!winner_won)
        })
        .sum();
    Ok(losses as f64 / resamples as f64)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Systems kept after dropping those further than `cutoff` median absolute
/// deviations from the median. Removal repeats until nothing changes, so the
/// result is a fixed point. Fewer than three systems, or zero spread, keeps
/// everything.
pub fn remove_outlier_systems(system_scores: &BTreeMap<String, f64>, cutoff: f64) -> BTreeSet<String> {
    let mut kept: BTreeMap<&String, f64> = system_scores.iter().map(|(k, v)| (k, *v)).collect();
    loop {
        if kept.len() < 3 {
            break;
        }
        let med = median(&sorted(kept.values().copied().collect()));
        let mad = median(&sorted(kept.values().map(|v| (v - med).abs()).collect()));
        if mad == 0.0 {
            break;
        }
        let before = kept.len();
        kept.retain(|_, v| (*v - med).abs() <= cutoff * mad);
        if kept.len() == before {
            break;
        }
    }
    kept.into_keys().cloned().collect()
}

/// The `k` systems with the highest mean human score; ties by name.
pub fn topk_filter(human: &ScoreTable, k: usize) -> Result<BTreeSet<String>> {
    let means = human.system_means();
    if k == 0 || k > means.len() {
        return Err(Error::Argument(format!("k must be in 1..={}, got {k}", means.len())));
    }
    let mut ranked: Vec<(&String, f64)> = means.iter().map(|(s, v)| (s, *v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(k).map(|(s, _)| s.clone()).collect())
}

/// Share of judgments each system wins, as a one-segment table (segment
/// `"*"`). Lets [`topk_filter`] rank systems when only pairwise judgments
/// exist.
pub fn win_rates(judgments: &[DarrJudgment]) -> ScoreTable {
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for j in judgments {
        tally.entry(&j.better).or_default().0 += 1;
        tally.entry(&j.worse).or_default().1 += 1;
    }
    let mut t = ScoreTable::new();
    for (sys, (w, l)) in tally {
        t.insert(sys, "*", w as f64 / (w + l) as f64).expect("unique systems");
    }
    t
}

/// Relative-ranking judgments implied by human scores: every pair of systems
/// on a segment whose scores differ. Restricted to `systems` when given.
pub fn darr_from_human(human: &ScoreTable, systems: Option<&BTreeSet<String>>) -> Vec<DarrJudgment> {
    let mut by_segment: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for ((sys, seg), v) in human.iter() {
        if systems.is_none_or(|s| s.contains(sys)) {
            by_segment.entry(seg).or_default().push((sys, v));
        }
    }
    let mut out = Vec::new();
    for (seg, entries) in by_segment {
        for (i, (sa, va)) in entries.iter().enumerate() {
            for (sb, vb) in &entries[i + 1..] {
                if va > vb {
                    out.push(DarrJudgment::new(seg, sa, sb).expect("distinct systems"));
                } else if vb > va {
                    out.push(DarrJudgment::new(seg, sb, sa).expect("distinct systems"));
                }
            }
        }
    }
    out
}

pub fn restrict_judgments(judgments: &[DarrJudgment], systems: &BTreeSet<String>) -> Vec<DarrJudgment> {
    judgments.iter().filter(|j| systems.contains(&j.better) && systems.contains(&j.worse)).cloned().collect()
}

/// Metric-vs-human correlation over the keys both tables share.
pub fn table_correlation(metric: &ScoreTable, human: &ScoreTable, kind: CorrelationKind) -> Result<CorrelationResult> {
    match kind {
        CorrelationKind::KendallDarr => kendall_darr(&darr_from_human(human, None), metric),
        CorrelationKind::Spearman | CorrelationKind::Pearson => {
            let (x, y): (Vec<f64>, Vec<f64>) =
                human.iter().filter_map(|((s, g), h)| metric.get(s, g).map(|m| (m, h))).unzip();
            if kind == CorrelationKind::Spearman {
                spearman(&x, &y)
            } else {
                pearson(&x, &y)
            }
        }
        CorrelationKind::Accuracy => judgment_accuracy(&darr_from_human(human, None), metric),
    }
}

/// Human signal a weight sweep is scored against.
#[derive(Clone, Debug)]
pub enum Judgments {
    /// Kendall's tau against pairwise judgments.
    Darr(Vec<DarrJudgment>),
    /// Pairwise accuracy against pairwise judgments.
    Accuracy(Vec<DarrJudgment>),
    Human {
        scores: ScoreTable,
        kind: CorrelationKind,
    },
}

impl Judgments {
    /// The same judgments restricted to `systems`.
    pub fn restrict(&self, systems: &BTreeSet<String>) -> Judgments {
        match self {
            Judgments::Darr(j) => Judgments::Darr(restrict_judgments(j, systems)),
            Judgments::Accuracy(j) => Judgments::Accuracy(restrict_judgments(j, systems)),
            Judgments::Human { scores, kind } => Judgments::Human { scores: scores.restrict(systems), kind: *kind },
        }
    }

    pub fn correlate(&self, metric: &ScoreTable) -> Result<CorrelationResult> {
        match self {
            Judgments::Darr(j) => kendall_darr(j, metric),
            Judgments::Accuracy(j) => judgment_accuracy(j, metric),
            Judgments::Human { scores, kind } => table_correlation(metric, scores, *kind),
        }
    }
}

/// Precomputed reports plus the judgments to correlate against.
pub struct SweepCorpus<'a> {
    pub reports: &'a [ErrorReport],
    pub judgments: Judgments,
}

/// Correlation per explicit:implicit weight ratio `r` (weights `(r, 1)`),
/// re-weighting stored distances without re-running refinement.
pub fn weight_sweep(corpus: &SweepCorpus<'_>, ratios: &[f64]) -> Vec<(f64, Result<CorrelationResult>)> {
    ratios
        .iter()
        .map(|&r| {
            let res = if !(r.is_finite() && r > 0.0) {
                Err(Error::Argument(format!("weight ratio must be finite and > 0, got {r}")))
            } else {
                ScoreTable::from_reports(corpus.reports, |rep| rep.reweighted(r, 1.0))
                    .and_then(|t| corpus.judgments.correlate(&t))
            };
            (r, res)
        })
        .collect()
}

/// One line of a meta-evaluation results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub metric: String,
    pub dataset: String,
    pub kind: CorrelationKind,
    pub statistic: f64,
    pub n: usize,
    pub p_value: Option<f64>,
}

pub const RESULTS_HEADER: &str = "metric\tdataset\tstatistic\tn\tp_value";

pub fn results_tsv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let p = r.p_value.map(|p| p.to_string()).unwrap_or_default();
        out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.metric, r.dataset, r.statistic, r.n, p));
    }
    out
}
