//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 backend or transport.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::EditKind;
use crate::error::{Error, Result};
use crate::io::{
    load_darr, load_mqm, load_prompts, load_reports, load_samples, load_segment_scores, write_reports_to, SampleFormat,
};
use crate::meta::{
    bootstrap_significance, darr_from_human, restrict_judgments, results_tsv, topk_filter, weight_sweep, win_rates,
    CorrelationKind, DarrJudgment, Judgments, ResultRow, ScoreTable, SweepCorpus,
};
use crate::metric::{evaluate, evaluate_corpus, ErrorReport, EvalConfig};
use crate::ngram::NgramScorer;
use crate::remote::{RemoteScorer, ServerEndpoint};
use crate::scorer::{PromptSet, ScorerBackend, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "errlens", version, about = "Score generated text with automatic error analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate a corpus of samples and write one JSON report per line
    Score(ScoreArgs),
    /// Refine a single hypothesis and show the result or its trace
    Refine(RefineArgs),
    /// Correlate metric scores with human judgments
    MetaEval(MetaEvalArgs),
    /// Correlation across explicit:implicit weight ratios
    Sweep(SweepArgs),
    /// Check a model server against the wire protocol
    ServeCheck(ServeCheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendKind {
    Ngram,
    Remote,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Kendall,
    Spearman,
    Pearson,
    Accuracy,
}

impl From<KindArg> for CorrelationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Kendall => CorrelationKind::KendallDarr,
            KindArg::Spearman => CorrelationKind::Spearman,
            KindArg::Pearson => CorrelationKind::Pearson,
            KindArg::Accuracy => CorrelationKind::Accuracy,
        }
    }
}

/// `EXP:IMP`, e.g. `1.4:1`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Weights(f64, f64);

impl FromStr for Weights {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (e, i) = s.split_once(':').ok_or_else(|| format!("expected EXP:IMP, got {s:?}"))?;
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| format!("weight {t:?} is not a positive number"))
        };
        Ok(Weights(num(e)?, num(i)?))
    }
}

fn parse_ratio(s: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v > 0.0)
        .ok_or_else(|| format!("ratio {s:?} is not a positive number"))
}

#[derive(Args, Debug)]
struct BackendArgs {
    /// Scoring backend
    #[arg(long, value_enum, default_value = "ngram")]
    backend: BackendKind,
    /// Model server base URL for the remote backend
    #[arg(long, env = "ERRLENS_ENDPOINT")]
    endpoint: Option<String>,
}

#[derive(Args, Debug)]
struct AnalysisArgs {
    /// Score variant: precision, recall, f or faithfulness
    #[arg(long, default_value = "f", value_parser = parse_variant)]
    variant: Variant,
    /// JSON file with "encoder_suffixes" and "decoder_prefixes"
    #[arg(long, value_name = "FILE")]
    prompts: Option<PathBuf>,
    /// Candidates considered per correction
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Maximum detect-correct rounds
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    /// Explicit and implicit weights as EXP:IMP
    #[arg(long, default_value = "1.4:1", value_name = "EXP:IMP")]
    weights: Weights,
    /// Overlap ratio below which a hypothesis may be a non-translation
    #[arg(long, default_value_t = 0.15)]
    overlap_threshold: f64,
    /// Share of below-mean tokens above which a hypothesis may be a non-translation
    #[arg(long, default_value_t = 0.6)]
    lowprob_threshold: f64,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Samples file (.jsonl or .tsv)
    #[arg(long)]
    samples: PathBuf,
    /// Write reports here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print each refinement step to stderr
    #[arg(long)]
    trace: bool,
    /// Worker threads
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Reference text; repeat for several references
    #[arg(long = "ref", value_name = "TEXT")]
    references: Vec<String>,
    /// Source text
    #[arg(long, value_name = "TEXT")]
    src: Option<String>,
    /// Hypothesis text
    #[arg(long, value_name = "TEXT")]
    hyp: String,
    /// Print the full refinement trace as JSON
    #[arg(long)]
    trace: bool,
    /// Write output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct JudgmentArgs {
    /// Pairwise judgments TSV: segment_id, better_system, worse_system
    #[arg(long, conflicts_with = "human", required_unless_present = "human")]
    judgments: Option<PathBuf>,
    /// Human scores TSV: system, segment_id, score
    #[arg(long)]
    human: Option<PathBuf>,
    /// Correlation statistic
    #[arg(long, value_enum, default_value = "kendall")]
    kind: KindArg,
    /// Keep only the K best systems by human judgment
    #[arg(long, value_name = "K")]
    topk: Option<usize>,
}

#[derive(Args, Debug)]
struct MetaEvalArgs {
    #[command(flatten)]
    judgments: JudgmentArgs,
    /// Metric scores (JSONL with system, segment_id, score); repeat per metric
    #[arg(long, required = true)]
    scores: Vec<PathBuf>,
    /// Paired bootstrap resamples against the best metric
    #[arg(long, value_name = "N", requires = "seed")]
    bootstrap: Option<usize>,
    /// Random seed for the bootstrap
    #[arg(long)]
    seed: Option<u64>,
    /// Emit JSON lines instead of TSV
    #[arg(long)]
    json: bool,
    /// Write results here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    judgments: JudgmentArgs,
    /// Reports written by `score`
    #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
    reports: Option<PathBuf>,
    /// Samples to evaluate once before sweeping
    #[arg(long)]
    samples: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Comma-separated explicit:implicit ratios
    #[arg(long, default_value = "1.0,1.1,1.2,1.3,1.4,1.5", value_delimiter = ',', value_parser = parse_ratio)]
    sweep: Vec<f64>,
    /// Worker threads for the initial evaluation
    #[arg(long)]
    jobs: Option<usize>,
    /// Write results here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeCheckArgs {
    /// Model server base URL
    #[arg(long, env = "ERRLENS_ENDPOINT")]
    endpoint: String,
}

/// Runs the CLI on process arguments with the standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{rendered}");
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Score(a) => score(a, out, err),
        Command::Refine(a) => refine_cmd(a, out),
        Command::MetaEval(a) => meta_eval(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::ServeCheck(a) => serve_check(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_backend() {
        EXIT_BACKEND
    } else {
        match e {
            Error::Argument(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

fn backend(args: &BackendArgs) -> Result<Box<dyn ScorerBackend>> {
    match args.backend {
        BackendKind::Ngram => Ok(Box::new(NgramScorer::default())),
        BackendKind::Remote => {
            let url = args
                .endpoint
                .as_deref()
                .ok_or_else(|| Error::Argument("--backend remote needs --endpoint or ERRLENS_ENDPOINT".into()))?;
            Ok(Box::new(RemoteScorer::connect(ServerEndpoint::new(url)?)?))
        }
    }
}

fn config(a: &AnalysisArgs) -> Result<EvalConfig> {
    let prompts = match &a.prompts {
        Some(p) => load_prompts(p)?,
        None => PromptSet::default(),
    };
    let cfg = EvalConfig {
        top_k: a.k,
        max_iterations: a.iterations,
        weight_exp: a.weights.0,
        weight_imp: a.weights.1,
        overlap_threshold: a.overlap_threshold,
        low_prob_threshold: a.lowprob_threshold,
        variant: a.variant,
        prompts,
        ..EvalConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn jobs(j: Option<usize>) -> Result<usize> {
    match j {
        Some(0) => Err(Error::Argument("--jobs must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Output sink: the named file, or the given stream.
fn emit(path: Option<&Path>, out: &mut dyn Write, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn evaluate_samples(
    samples_path: &Path,
    backend_args: &BackendArgs,
    analysis: &AnalysisArgs,
    jobs_arg: Option<usize>,
) -> Result<Vec<ErrorReport>> {
    let cfg = config(analysis)?;
    let n_jobs = jobs(jobs_arg)?;
    let samples = load_samples(samples_path, SampleFormat::from_path(samples_path))?;
    let backend = backend(backend_args)?;
    evaluate_corpus(backend.as_ref(), &samples, &cfg, n_jobs)
}

fn score(a: ScoreArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let reports = evaluate_samples(&a.samples, &a.backend, &a.analysis, a.jobs)?;
    if a.trace {
        for r in &reports {
            for (i, it) in r.trace.iterations.iter().enumerate() {
                let edit = match it.chosen_edit.as_ref().map(|e| &e.kind) {
                    None => "rejected".to_string(),
                    Some(EditKind::Delete) => "delete".to_string(),
                    Some(EditKind::Substitute(t)) => format!("substitute {t}"),
                    Some(EditKind::InsertBefore(t)) => format!("insert {t}"),
                };
                let _ = writeln!(
                    err,
                    "{}\t{}\t{}@{}\t{}\t{:.4} -> {:.4}",
                    r.id,
                    i + 1,
                    it.detected_token,
                    it.detected_index,
                    edit,
                    it.score_before,
                    it.score_after
                );
            }
        }
    }
    let mut buf = Vec::new();
    write_reports_to(&reports, &mut buf)?;
    emit(a.out.as_deref(), out, &String::from_utf8_lossy(&buf))
}

#[derive(Serialize)]
struct RefineSummary<'a> {
    refined_text: &'a str,
    score_hyp: f64,
    score_refined: f64,
    score_ref_self: f64,
    dist_exp: f64,
    dist_imp: f64,
    final_score: f64,
    non_translation: bool,
}

fn refine_cmd(a: RefineArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = config(&a.analysis)?;
    if a.hyp.trim().is_empty() {
        return Err(Error::Argument("--hyp must be non-empty".into()));
    }
    if cfg.variant == Variant::Faithfulness && a.src.is_none() {
        return Err(Error::Argument("the faithfulness variant needs --src".into()));
    }
    if cfg.variant != Variant::Faithfulness && a.references.is_empty() {
        return Err(Error::Argument(format!("the {} variant needs --ref", cfg.variant)));
    }
    let backend = backend(&a.backend)?;
    let report = evaluate(backend.as_ref(), a.src.as_deref(), &a.references, &a.hyp, &cfg)?;
    let json = if a.trace {
        serde_json::to_string_pretty(&report.trace)
    } else {
        serde_json::to_string(&RefineSummary {
            refined_text: &report.refined_text,
            score_hyp: report.score_hyp,
            score_refined: report.score_refined,
            score_ref_self: report.score_ref_self,
            dist_exp: report.dist_exp,
            dist_imp: report.dist_imp,
            final_score: report.final_score,
            non_translation: report.non_translation,
        })
    }
    .map_err(|e| Error::Data(e.to_string()))?;
    emit(a.out.as_deref(), out, &format!("{json}\n"))
}

/// Loaded human signal, restricted to the top-K systems when asked.
struct Human {
    judgments: Judgments,
    /// Pairwise form used by the bootstrap.
    darr: Vec<DarrJudgment>,
    systems: Option<BTreeSet<String>>,
    dataset: String,
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn load_human(a: &JudgmentArgs) -> Result<Human> {
    let kind: CorrelationKind = a.kind.into();
    let (judgments, darr, ranking, mut dataset) = match (&a.judgments, &a.human) {
        (Some(p), _) => {
            let darr = load_darr(p)?;
            let judgments = match kind {
                CorrelationKind::KendallDarr => Judgments::Darr(darr.clone()),
                CorrelationKind::Accuracy => Judgments::Accuracy(darr.clone()),
                other => return Err(Error::Argument(format!("{other} needs --human scores, not pairwise judgments"))),
            };
            (judgments, darr.clone(), win_rates(&darr), stem(p))
        }
        (None, Some(p)) => {
            let scores = load_mqm(p)?;
            let darr = darr_from_human(&scores, None);
            (Judgments::Human { scores: scores.clone(), kind }, darr, scores, stem(p))
        }
        (None, None) => return Err(Error::Argument("need --judgments or --human".into())),
    };
    let Some(k) = a.topk else {
        return Ok(Human { judgments, darr, systems: None, dataset });
    };
    let keep = topk_filter(&ranking, k)?;
    dataset = format!("{dataset}@top{k}");
    Ok(Human {
        judgments: judgments.restrict(&keep),
        darr: restrict_judgments(&darr, &keep),
        systems: Some(keep),
        dataset,
    })
}

impl Human {
    fn restrict_metric(&self, metric: &ScoreTable) -> ScoreTable {
        match &self.systems {
            Some(s) => metric.restrict(s),
            None => metric.clone(),
        }
    }
}

fn metric_names(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths.iter().map(|p| stem(p)).collect();
    let unique: BTreeSet<&String> = stems.iter().collect();
    if unique.len() == stems.len() {
        stems
    } else {
        paths.iter().map(|p| p.display().to_string()).collect()
    }
}

fn meta_eval(a: MetaEvalArgs, out: &mut dyn Write) -> Result<()> {
    let human = load_human(&a.judgments)?;
    let tables = a.scores.iter().map(|p| load_segment_scores(p)).collect::<Result<Vec<_>>>()?;
    let names = metric_names(&a.scores);
    let tables: Vec<ScoreTable> = tables.iter().map(|t| human.restrict_metric(t)).collect();
    let results = tables.iter().map(|t| human.judgments.correlate(t)).collect::<Result<Vec<_>>>()?;

    let mut p_values = vec![None; tables.len()];
    if let Some(n) = a.bootstrap {
        let seed = a.seed.ok_or_else(|| Error::Argument("--bootstrap needs --seed".into()))?;
        if tables.len() < 2 {
            return Err(Error::Argument("--bootstrap needs at least two --scores files".into()));
        }
        let best = (0..results.len())
            .max_by(|&i, &j| results[i].statistic.total_cmp(&results[j].statistic).then(j.cmp(&i)))
            .expect("non-empty");
        for i in (0..tables.len()).filter(|&i| i != best) {
            p_values[i] = Some(bootstrap_significance(&human.darr, &tables[best], &tables[i], n, seed)?);
        }
    }

    let rows: Vec<ResultRow> = results
        .iter()
        .zip(names)
        .zip(p_values)
        .map(|((r, metric), p_value)| ResultRow {
            metric,
            dataset: human.dataset.clone(),
            kind: r.kind,
            statistic: r.statistic,
            n: r.n_items,
            p_value,
        })
        .collect();
    let text = if a.json {
        let mut s = String::new();
        for r in &rows {
            s.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
            s.push('\n');
        }
        s
    } else {
        results_tsv(&rows)
    };
    emit(a.out.as_deref(), out, &text)
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let human = load_human(&a.judgments)?;
    let reports = match (&a.reports, &a.samples) {
        (Some(p), _) => load_reports(p)?,
        (None, Some(s)) => evaluate_samples(s, &a.backend, &a.analysis, a.jobs)?,
        (None, None) => return Err(Error::Argument("need --reports or --samples".into())),
    };
    let reports: Vec<ErrorReport> = match &human.systems {
        Some(keep) => reports.into_iter().filter(|r| keep.contains(&r.system)).collect(),
        None => reports,
    };
    let corpus = SweepCorpus { reports: &reports, judgments: human.judgments };
    let mut text = String::from("ratio\tstatistic\tn\n");
    let results = weight_sweep(&corpus, &a.sweep);
    for (ratio, res) in results {
        let r = res?;
        text.push_str(&format!("{ratio}\t{}\t{}\n", r.statistic, r.n_items));
    }
    emit(a.out.as_deref(), out, &text)
}

fn serve_check(a: ServeCheckArgs, out: &mut dyn Write) -> Result<()> {
    let client = RemoteScorer::new(ServerEndpoint::new(&a.endpoint)?);
    let mut failed = Vec::new();
    for (name, res) in client.conformance() {
        let line = match &res {
            Ok(()) => format!("PASS {name}\n"),
            Err(e) => format!("FAIL {name}: {e}\n"),
        };
        out.write_all(line.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
        if res.is_err() {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Protocol(format!("failed checks: {}", failed.join(", "))))
    }
}
