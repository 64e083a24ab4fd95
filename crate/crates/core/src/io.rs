//! Corpus, judgment and report files.
//!
//! * samples: JSONL (`{"id","src","refs","hyp","system","segment"}`) or TSV
//!   with a header naming `id`, `hyp`, and `ref` and/or `src`
//! * DARR judgments: TSV `segment_id \t better_system \t worse_system`
//! * MQM / aspect scores: TSV `system \t segment_id \t score`
//! * reports: JSONL, one [`ErrorReport`] per line
//!
//! TSV files may start with a header row spelling out the column names.
//! Blank lines and lines starting with `#` are skipped everywhere.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::{DarrJudgment, ScoreTable};
use crate::metric::ErrorReport;
use crate::scorer::{PromptSet, Variant};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub id: String,
    pub source: Option<String>,
    pub references: Vec<String>,
    pub hypothesis: String,
    pub system: String,
    /// Segment the hypothesis translates; defaults to `id`.
    pub segment_id: Option<String>,
}

impl EvalSample {
    pub fn segment(&self) -> &str {
        self.segment_id.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Jsonl,
    Tsv,
}

impl SampleFormat {
    /// `.tsv` files are TSV; everything else is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => SampleFormat::Tsv,
            _ => SampleFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRow {
    id: String,
    #[serde(default)]
    src: Option<String>,
    #[serde(default)]
    refs: Vec<String>,
    #[serde(default, rename = "ref")]
    reference: Option<String>,
    hyp: String,
    #[serde(default)]
    system: String,
    #[serde(default)]
    segment: Option<String>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Numbered lines that carry content.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn load_samples(path: &Path, format: SampleFormat) -> Result<Vec<EvalSample>> {
    let text = read(path)?;
    let rows = match format {
        SampleFormat::Jsonl => jsonl_rows(path, &text)?,
        SampleFormat::Tsv => tsv_rows(path, &text)?,
    };
    merge_rows(rows)
}

fn jsonl_rows(path: &Path, text: &str) -> Result<Vec<(usize, SampleRow)>> {
    content_lines(text)
        .map(|(n, line)| {
            serde_json::from_str::<SampleRow>(line).map(|r| (n, r)).map_err(|e| Error::parse(path, n, e.to_string()))
        })
        .collect()
}

fn tsv_rows(path: &Path, text: &str) -> Result<Vec<(usize, SampleRow)>> {
    let mut lines = content_lines(text);
    let (header_line, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header row"))?;
    let cols: HashMap<&str, usize> = header.split('\t').enumerate().map(|(i, c)| (c.trim(), i)).collect();
    let col = |name: &str| cols.get(name).copied();
    let (Some(id), Some(hyp)) = (col("id"), col("hyp")) else {
        return Err(Error::parse(path, header_line, "header must name `id` and `hyp` columns"));
    };
    let (reference, src) = (col("ref"), col("src"));
    if reference.is_none() && src.is_none() {
        return Err(Error::parse(path, header_line, "header must name a `ref` or `src` column"));
    }
    let (system, segment) = (col("system"), col("segment"));
    let width = cols.len();

    lines
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != width {
                return Err(Error::parse(path, n, format!("expected {width} fields, found {}", fields.len())));
            }
            let get = |i: Option<usize>| i.map(|i| fields[i].to_string()).filter(|s| !s.is_empty());
            Ok((
                n,
                SampleRow {
                    id: fields[id].to_string(),
                    src: get(src),
                    refs: Vec::new(),
                    reference: get(reference),
                    hyp: fields[hyp].to_string(),
                    system: get(system).unwrap_or_default(),
                    segment: get(segment),
                },
            ))
        })
        .collect()
}

/// Rows sharing an id merge their references; any other disagreement is a
/// data error.
fn merge_rows(rows: Vec<(usize, SampleRow)>) -> Result<Vec<EvalSample>> {
    let mut order: Vec<EvalSample> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, row) in rows {
        if row.id.is_empty() {
            return Err(Error::Data(format!("line {line}: empty id")));
        }
        if row.hyp.trim().is_empty() {
            return Err(Error::Data(format!("line {line}: sample {} has an empty hypothesis", row.id)));
        }
        let mut refs = row.refs;
        refs.extend(row.reference);
        let sample = EvalSample {
            id: row.id.clone(),
            source: row.src,
            references: Vec::new(),
            hypothesis: row.hyp,
            system: row.system,
            segment_id: row.segment,
        };
        let slot = match index.get(&row.id) {
            Some(&i) => {
                let existing = &order[i];
                let same = existing.source == sample.source
                    && existing.hypothesis == sample.hypothesis
                    && existing.system == sample.system
                    && existing.segment_id == sample.segment_id;
                if !same {
                    return Err(Error::Data(format!("line {line}: sample {} repeats with conflicting fields", row.id)));
                }
                i
            }
            None => {
                index.insert(row.id.clone(), order.len());
                order.push(sample);
                order.len() - 1
            }
        };
        for r in refs {
            if !order[slot].references.contains(&r) {
                order[slot].references.push(r);
            }
        }
    }
    Ok(order)
}

fn is_header(fields: &[&str], names: &[&str]) -> bool {
    fields.len() == names.len() && fields.iter().zip(names).all(|(f, n)| f.trim() == *n)
}

pub const DARR_HEADER: [&str; 3] = ["segment_id", "better_system", "worse_system"];
pub const MQM_HEADER: [&str; 3] = ["system", "segment_id", "score"];

/// Also reads pairwise-preference files (`segment \t correct \t incorrect`).
pub fn load_darr(path: &Path) -> Result<Vec<DarrJudgment>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (n, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if out.is_empty() && is_header(&fields, &DARR_HEADER) {
            continue;
        }
        let [seg, better, worse] = fields[..] else {
            return Err(Error::parse(path, n, format!("expected 3 fields, found {}", fields.len())));
        };
        let j =
            DarrJudgment::new(seg, better, worse).map_err(|e| Error::Data(format!("{}:{n}: {e}", path.display())))?;
        out.push(j);
    }
    Ok(out)
}

pub fn write_darr(judgments: &[DarrJudgment], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&DARR_HEADER.join("\t"));
    out.push('\n');
    for j in judgments {
        for field in [&j.segment_id, &j.better, &j.worse] {
            if field.contains(['\t', '\n']) {
                return Err(Error::Data(format!("field {field:?} cannot be written as TSV")));
            }
        }
        out.push_str(&format!("{}\t{}\t{}\n", j.segment_id, j.better, j.worse));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Human scores keyed by (system, segment). Repeated keys (several
/// annotators) are averaged.
pub fn load_mqm(path: &Path) -> Result<ScoreTable> {
    let text = read(path)?;
    let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    let mut first = true;
    for (n, line) in content_lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if first && is_header(&fields, &MQM_HEADER) {
            first = false;
            continue;
        }
        first = false;
        let [system, segment, score] = fields[..] else {
            return Err(Error::parse(path, n, format!("expected 3 fields, found {}", fields.len())));
        };
        let value: f64 =
            score.trim().parse().map_err(|_| Error::parse(path, n, format!("score {score:?} is not a number")))?;
        if !value.is_finite() {
            return Err(Error::parse(path, n, "score must be finite"));
        }
        let e = acc.entry((system.to_string(), segment.to_string())).or_insert((0.0, 0));
        e.0 += value;
        e.1 += 1;
    }
    let mut table = ScoreTable::new();
    for ((sys, seg), (sum, n)) in acc {
        table.insert(&sys, &seg, sum / n as f64)?;
    }
    Ok(table)
}

pub fn write_mqm(table: &ScoreTable, path: &Path) -> Result<()> {
    let mut out = MQM_HEADER.join("\t");
    out.push('\n');
    for ((sys, seg), v) in table.iter() {
        out.push_str(&format!("{sys}\t{seg}\t{v}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn check_finite(r: &ErrorReport) -> Result<()> {
    let fields = [
        ("score_hyp", r.score_hyp),
        ("score_refined", r.score_refined),
        ("score_ref_self", r.score_ref_self),
        ("dist_exp", r.dist_exp),
        ("dist_imp", r.dist_imp),
        ("final_score", r.final_score),
        ("trace.initial_score", r.trace.initial_score),
        ("trace.final_score", r.trace.final_score),
    ];
    for (name, v) in fields {
        if !v.is_finite() {
            return Err(Error::Data(format!("report {:?}: {name} is not finite ({v})", r.id)));
        }
    }
    let iter_scores = r
        .trace
        .iterations
        .iter()
        .flat_map(|it| [it.score_before, it.score_after].into_iter().chain(it.candidates.iter().map(|c| c.1)));
    if iter_scores.clone().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("report {:?}: trace holds a non-finite score", r.id)));
    }
    Ok(())
}

/// One JSON report per line; floats use the shortest round-trip form.
pub fn write_reports(reports: &[ErrorReport], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_reports_to(reports, &mut w).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_reports_to(reports: &[ErrorReport], w: &mut dyn Write) -> Result<()> {
    for r in reports {
        check_finite(r)?;
    }
    for r in reports {
        let line = serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn load_reports(path: &Path) -> Result<Vec<ErrorReport>> {
    let text = read(path)?;
    content_lines(&text)
        .map(|(n, line)| serde_json::from_str(line).map_err(|e| Error::parse(path, n, e.to_string())))
        .collect()
}

#[derive(Deserialize)]
struct ScoreRow {
    system: String,
    #[serde(default)]
    segment_id: Option<String>,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    final_score: Option<f64>,
}

/// Metric scores from JSONL rows with `system`, `segment_id` (or `id`) and
/// `score` (or `final_score`). Report files qualify.
pub fn load_segment_scores(path: &Path) -> Result<ScoreTable> {
    let text = read(path)?;
    let mut table = ScoreTable::new();
    for (n, line) in content_lines(&text) {
        let row: ScoreRow = serde_json::from_str(line).map_err(|e| Error::parse(path, n, e.to_string()))?;
        let seg = row
            .segment_id
            .filter(|s| !s.is_empty())
            .or(row.id)
            .ok_or_else(|| Error::parse(path, n, "row needs `segment_id` or `id`"))?;
        let value =
            row.score.or(row.final_score).ok_or_else(|| Error::parse(path, n, "row needs `score` or `final_score`"))?;
        table.insert(&row.system, &seg, value).map_err(|e| Error::parse(path, n, e.to_string()))?;
    }
    Ok(table)
}

pub fn load_prompts(path: &Path) -> Result<PromptSet> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, 1, e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Task {
    Mt,
    Sum,
    D2t,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgmentKind {
    Darr,
    Mqm,
    Aspect,
    Pairwise,
}

/// Describes one evaluation dataset. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub task: Task,
    #[serde(default)]
    pub variant: Option<Variant>,
    pub samples: PathBuf,
    #[serde(default)]
    pub judgments: Option<PathBuf>,
    pub judgment_kind: JudgmentKind,
}

impl CorpusManifest {
    pub fn default_variant(&self) -> Variant {
        self.variant.unwrap_or(match self.task {
            Task::Mt | Task::D2t => Variant::F,
            Task::Sum => Variant::Faithfulness,
        })
    }
}

/// Loads a manifest and checks that every file it names parses.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = read(path)?;
    let mut m: CorpusManifest = serde_json::from_str(&text).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    m.samples = base.join(&m.samples);
    m.judgments = m.judgments.map(|j| base.join(j));
    load_samples(&m.samples, SampleFormat::from_path(&m.samples))?;
    if let Some(j) = &m.judgments {
        match m.judgment_kind {
            JudgmentKind::Darr | JudgmentKind::Pairwise => {
                load_darr(j)?;
            }
            JudgmentKind::Mqm | JudgmentKind::Aspect => {
                load_mqm(j)?;
            }
        }
    }
    Ok(m)
}
