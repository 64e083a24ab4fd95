//! Explicit/implicit error distances and the weighted final score.
//!
//! For hypothesis `y`, refined hypothesis `y*` and reference `r`, with `S`
//! the variant score:
//!
//! ```text
//! dist_exp = S(y*, r) - S(y, r)
//! dist_imp = S(r, r)  - S(y*, r)      (S(r, r) := 0 with several references)
//! final    = -(w_exp * dist_exp + w_imp * dist_imp)
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{refine_in, RefinementTrace};
use crate::error::{Error, Result};
use crate::io::EvalSample;
use crate::scorer::{variant_score, PromptSet, ScorerBackend, ScoringContext, Variant};

/// Tolerance below which a negative explicit distance is rounding noise.
pub const DIST_EPSILON: f64 = 1e-9;

/// Where the whole distance of a hypothesis skipped as non-translation goes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonTranslationWeighting {
    #[default]
    Explicit,
    Implicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Candidates requested from the backend per correction.
    pub top_k: usize,
    /// Upper bound on detect-correct rounds.
    pub max_iterations: usize,
    pub weight_exp: f64,
    pub weight_imp: f64,
    pub overlap_threshold: f64,
    pub low_prob_threshold: f64,
    pub variant: Variant,
    pub prompts: PromptSet,
    pub non_translation_weighting: NonTranslationWeighting,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            top_k: 10,
            max_iterations: 5,
            weight_exp: 1.4,
            weight_imp: 1.0,
            overlap_threshold: 0.15,
            low_prob_threshold: 0.6,
            variant: Variant::F,
            prompts: PromptSet::default(),
            non_translation_weighting: NonTranslationWeighting::Explicit,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Argument("iteration bound must be at least 1".into()));
        }
        for (name, w) in [("explicit", self.weight_exp), ("implicit", self.weight_imp)] {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Argument(format!("{name} weight must be finite and > 0, got {w}")));
            }
        }
        for (name, t) in
            [("overlap threshold", self.overlap_threshold), ("low-probability threshold", self.low_prob_threshold)]
        {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Argument(format!("{name} must be in [0,1], got {t}")));
            }
        }
        Ok(())
    }

    pub fn with_weights(mut self, weight_exp: f64, weight_imp: f64) -> Self {
        self.weight_exp = weight_exp;
        self.weight_imp = weight_imp;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub system: String,
    #[serde(default)]
    pub segment_id: String,
    pub score_hyp: f64,
    pub score_refined: f64,
    pub score_ref_self: f64,
    pub dist_exp: f64,
    pub dist_imp: f64,
    pub final_score: f64,
    pub refined_text: String,
    pub trace: RefinementTrace,
    pub non_translation: bool,
}

impl ErrorReport {
    /// Final score under other weights, reusing the stored distances.
    pub fn reweighted(&self, weight_exp: f64, weight_imp: f64) -> f64 {
        weighted(self.dist_exp, self.dist_imp, weight_exp, weight_imp)
    }
}

pub fn explicit_distance(score_refined: f64, score_hyp: f64) -> f64 {
    score_refined - score_hyp
}

pub fn implicit_distance(score_ref_self: f64, score_refined: f64) -> f64 {
    score_ref_self - score_refined
}

pub fn final_score(dist_exp: f64, dist_imp: f64, cfg: &EvalConfig) -> f64 {
    weighted(dist_exp, dist_imp, cfg.weight_exp, cfg.weight_imp)
}

fn weighted(dist_exp: f64, dist_imp: f64, weight_exp: f64, weight_imp: f64) -> f64 {
    0.0 - (dist_exp * weight_exp + dist_imp * weight_imp)
}

/// Distances for a hypothesis that skipped refinement: the full gap to the
/// reference self-score lands on one side.
pub fn split_non_translation(score_ref_self: f64, score_hyp: f64, weighting: NonTranslationWeighting) -> (f64, f64) {
    let total = score_ref_self - score_hyp;
    match weighting {
        NonTranslationWeighting::Explicit => (total, 0.0),
        NonTranslationWeighting::Implicit => (0.0, total),
    }
}

/// Self-score of the reference side. Several references make the reference
/// uncertain, so the self-score is pinned to zero.
fn reference_self_score(backend: &dyn ScorerBackend, ctx: &ScoringContext, cfg: &EvalConfig) -> Result<f64> {
    match cfg.variant {
        Variant::Faithfulness => {
            let src = ctx.source.as_deref().unwrap_or_default();
            variant_score(backend, Some(src), &[], src, cfg.variant, &cfg.prompts)
        }
        _ if ctx.references.len() > 1 => Ok(0.0),
        _ => {
            let r = &ctx.references[0];
            variant_score(backend, None, &ctx.references, r, cfg.variant, &cfg.prompts)
        }
    }
}

/// Full pipeline for one hypothesis.
pub fn evaluate(
    backend: &dyn ScorerBackend,
    source: Option<&str>,
    references: &[String],
    hypothesis: &str,
    cfg: &EvalConfig,
) -> Result<ErrorReport> {
    let ctx = ScoringContext { source: source.map(str::to_string), references: references.to_vec() };
    ctx.validate(cfg.variant)?;
    let trace = refine_in(backend, &ctx, hypothesis, cfg)?;
    let score_ref_self = reference_self_score(backend, &ctx, cfg)?;
    Ok(assemble(trace, score_ref_self, cfg))
}

fn assemble(trace: RefinementTrace, score_ref_self: f64, cfg: &EvalConfig) -> ErrorReport {
    let score_hyp = trace.initial_score;
    let score_refined = trace.final_score;
    let non_translation = trace.verdict.flagged;
    let (dist_exp, dist_imp) = if non_translation {
        split_non_translation(score_ref_self, score_hyp, cfg.non_translation_weighting)
    } else {
        let mut d = explicit_distance(score_refined, score_hyp);
        if d < 0.0 && d > -DIST_EPSILON {
            d = 0.0;
        }
        (d, implicit_distance(score_ref_self, score_refined))
    };
    ErrorReport {
        id: String::new(),
        system: String::new(),
        segment_id: String::new(),
        score_hyp,
        score_refined,
        score_ref_self,
        dist_exp,
        dist_imp,
        final_score: final_score(dist_exp, dist_imp, cfg),
        refined_text: trace.final_text.clone(),
        trace,
        non_translation,
    }
}

/// [`evaluate`] on a sample, carrying its identifiers into the report.
pub fn evaluate_sample(backend: &dyn ScorerBackend, sample: &EvalSample, cfg: &EvalConfig) -> Result<ErrorReport> {
    let mut report = evaluate(backend, sample.source.as_deref(), &sample.references, &sample.hypothesis, cfg).map_err(
        |e| match e {
            Error::Argument(m) => Error::Data(format!("sample {}: {m}", sample.id)),
            other => other,
        },
    )?;
    report.id = sample.id.clone();
    report.system = sample.system.clone();
    report.segment_id = sample.segment().to_string();
    Ok(report)
}

/// Evaluates samples on up to `jobs` threads. Output order follows input
/// order. Backends that do not declare concurrent safety run on one thread.
pub fn evaluate_corpus(
    backend: &dyn ScorerBackend,
    samples: &[EvalSample],
    cfg: &EvalConfig,
    jobs: usize,
) -> Result<Vec<ErrorReport>> {
    cfg.validate()?;
    let jobs = if backend.info().concurrent { jobs.max(1) } else { 1 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))?;
    pool.install(|| samples.par_iter().map(|s| evaluate_sample(backend, s, cfg)).collect())
}
