//! Conditional sequence scoring.
//!
//! A [`ScorerBackend`] turns `(condition, target)` into per-token
//! conditional log-probabilities (natural log). Everything above this layer
//! (vanilla scores, directional variants, prompt averaging) is computed here
//! so that any backend, local or remote, yields the same metric semantics.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One unit of the backend's tokenizer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    surface: String,
    id: u64,
}

impl Token {
    pub fn new(surface: impl Into<String>, id: u64) -> Result<Self> {
        let surface = surface.into();
        if surface.is_empty() {
            return Err(Error::Argument("token surface must be non-empty".into()));
        }
        Ok(Token { surface, id })
    }

    /// Builds a token whose id is a stable FNV-1a hash of the surface. Used by
    /// backends that only expose surfaces.
    pub fn from_surface(surface: impl Into<String>) -> Result<Self> {
        let surface = surface.into();
        let id = fnv1a(surface.as_bytes());
        Token::new(surface, id)
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn id(&self) -> u64 {
        self.id
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |hash, &b| (hash ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// A tokenized target with its per-token conditional log-probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScoredSequence")]
pub struct ScoredSequence {
    tokens: Vec<Token>,
    logprobs: Vec<f64>,
    mean: f64,
}

#[derive(Deserialize)]
struct RawScoredSequence {
    tokens: Vec<Token>,
    logprobs: Vec<f64>,
}

impl TryFrom<RawScoredSequence> for ScoredSequence {
    type Error = Error;

    fn try_from(raw: RawScoredSequence) -> Result<Self> {
        ScoredSequence::new(raw.tokens, raw.logprobs)
    }
}

impl ScoredSequence {
    pub fn new(tokens: Vec<Token>, logprobs: Vec<f64>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Argument("scored sequence needs at least one token".into()));
        }
        if tokens.len() != logprobs.len() {
            return Err(Error::Argument(format!("{} tokens but {} logprobs", tokens.len(), logprobs.len())));
        }
        if let Some(bad) = logprobs.iter().find(|lp| !lp.is_finite()) {
            return Err(Error::Argument(format!("non-finite logprob {bad}")));
        }
        let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
        Ok(ScoredSequence { tokens, logprobs, mean })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Mean token log-probability of a scored target.
pub fn vanilla_score(seq: &ScoredSequence) -> f64 {
    seq.mean()
}

/// Which text conditions which.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    RefToHyp,
    HypToRef,
    SrcToHyp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// reference → hypothesis
    Precision,
    /// hypothesis → reference
    Recall,
    /// mean of precision and recall
    #[default]
    F,
    /// source → hypothesis
    Faithfulness,
}

impl Variant {
    /// The direction whose target side is the hypothesis. Token-level error
    /// detection reads this direction.
    pub fn hypothesis_direction(self) -> Direction {
        match self {
            Variant::Faithfulness => Direction::SrcToHyp,
            _ => Direction::RefToHyp,
        }
    }

    pub fn needs_references(self) -> bool {
        !matches!(self, Variant::Faithfulness)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "precision" => Ok(Variant::Precision),
            "recall" => Ok(Variant::Recall),
            "f" => Ok(Variant::F),
            "faithfulness" => Ok(Variant::Faithfulness),
            other => Err(Error::Argument(format!("unknown variant {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Variant::Precision => "precision",
            Variant::Recall => "recall",
            Variant::F => "f",
            Variant::Faithfulness => "faithfulness",
        })
    }
}

/// Prompts combined with the condition (encoder suffix) or force-decoded
/// before the target (decoder prefix).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    #[serde(default)]
    pub encoder_suffixes: Vec<String>,
    #[serde(default)]
    pub decoder_prefixes: Vec<String>,
}

impl PromptSet {
    pub fn is_empty(&self) -> bool {
        self.encoder_suffixes.is_empty() && self.decoder_prefixes.is_empty()
    }

    /// Each prompt on its own, encoder suffixes first.
    pub fn prompts(&self) -> Vec<Prompt> {
        self.encoder_suffixes
            .iter()
            .cloned()
            .map(Prompt::EncoderSuffix)
            .chain(self.decoder_prefixes.iter().cloned().map(Prompt::DecoderPrefix))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Prompt {
    EncoderSuffix(String),
    DecoderPrefix(String),
}

impl From<Prompt> for PromptSet {
    fn from(p: Prompt) -> Self {
        match p {
            Prompt::EncoderSuffix(s) => PromptSet { encoder_suffixes: vec![s], decoder_prefixes: vec![] },
            Prompt::DecoderPrefix(s) => PromptSet { encoder_suffixes: vec![], decoder_prefixes: vec![s] },
        }
    }
}

/// A single backend scoring call: at most one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRequest {
    pub condition: String,
    pub target: String,
    pub prompt: Option<Prompt>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackendInfo {
    pub model_id: String,
    /// Identifies the tokenizer; token ids are only comparable within it.
    pub tokenizer: String,
    pub supports_topk: bool,
    /// Whether independent calls may be issued from several threads at once.
    pub concurrent: bool,
    pub max_batch: usize,
}

/// Source of conditional token log-probabilities.
///
/// Implementations must be deterministic: the same request on the same
/// instance returns bitwise-identical results.
pub trait ScorerBackend: Send + Sync {
    fn info(&self) -> BackendInfo;

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence>;

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoredSequence>> {
        requests.iter().map(|r| self.score(r)).collect()
    }

    /// The `k` most probable next tokens after `prefix`, sorted descending.
    fn topk(&self, condition: &str, prefix: &[Token], k: usize) -> Result<Vec<(Token, f64)>>;

    /// Inverse of the backend's tokenizer.
    fn detokenize(&self, tokens: &[Token]) -> String;
}

impl<B: ScorerBackend + ?Sized> ScorerBackend for &B {
    fn info(&self) -> BackendInfo {
        (**self).info()
    }
    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence> {
        (**self).score(request)
    }
    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoredSequence>> {
        (**self).score_batch(requests)
    }
    fn topk(&self, condition: &str, prefix: &[Token], k: usize) -> Result<Vec<(Token, f64)>> {
        (**self).topk(condition, prefix, k)
    }
    fn detokenize(&self, tokens: &[Token]) -> String {
        (**self).detokenize(tokens)
    }
}

impl<B: ScorerBackend + ?Sized> ScorerBackend for Box<B> {
    fn info(&self) -> BackendInfo {
        (**self).info()
    }
    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence> {
        (**self).score(request)
    }
    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoredSequence>> {
        (**self).score_batch(requests)
    }
    fn topk(&self, condition: &str, prefix: &[Token], k: usize) -> Result<Vec<(Token, f64)>> {
        (**self).topk(condition, prefix, k)
    }
    fn detokenize(&self, tokens: &[Token]) -> String {
        (**self).detokenize(tokens)
    }
}

/// Scores `target` given `condition`. With prompts, every prompt is scored
/// separately and the per-token log-probabilities are averaged.
pub fn score_tokens<B: ScorerBackend + ?Sized>(
    backend: &B,
    condition: &str,
    target: &str,
    prompts: &PromptSet,
) -> Result<ScoredSequence> {
    let mut out = score_pairs(backend, &[(condition, target)], prompts)?;
    Ok(out.pop().expect("one pair in, one sequence out"))
}

/// Batched [`score_tokens`]: one backend batch call for all pairs and prompts.
pub fn score_pairs<B: ScorerBackend + ?Sized>(
    backend: &B,
    pairs: &[(&str, &str)],
    prompts: &PromptSet,
) -> Result<Vec<ScoredSequence>> {
    if let Some((_, _)) = pairs.iter().find(|(_, t)| t.trim().is_empty()) {
        return Err(Error::Argument("target text must be non-empty".into()));
    }
    let variants: Vec<Option<Prompt>> =
        if prompts.is_empty() { vec![None] } else { prompts.prompts().into_iter().map(Some).collect() };
    let requests: Vec<ScoreRequest> = pairs
        .iter()
        .flat_map(|(c, t)| {
            variants.iter().map(move |p| ScoreRequest {
                condition: (*c).to_string(),
                target: (*t).to_string(),
                prompt: p.clone(),
            })
        })
        .collect();
    let scored = backend.score_batch(&requests)?;
    if scored.len() != requests.len() {
        return Err(Error::Protocol(format!(
            "backend returned {} results for {} requests",
            scored.len(),
            requests.len()
        )));
    }
    scored.chunks(variants.len()).map(average_prompted).collect()
}

fn average_prompted(group: &[ScoredSequence]) -> Result<ScoredSequence> {
    if group.len() == 1 {
        return Ok(group[0].clone());
    }
    let first = &group[0];
    let mut sums = vec![0.0; first.len()];
    for seq in group {
        if seq.tokens() != first.tokens() {
            return Err(Error::Protocol("prompted scoring changed the target tokenization".into()));
        }
        for (acc, lp) in sums.iter_mut().zip(seq.logprobs()) {
            *acc += lp;
        }
    }
    let n = group.len() as f64;
    ScoredSequence::new(first.tokens().to_vec(), sums.into_iter().map(|s| s / n).collect())
}

/// The texts a hypothesis is scored against.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoringContext {
    pub source: Option<String>,
    pub references: Vec<String>,
}

impl ScoringContext {
    pub fn with_reference(reference: impl Into<String>) -> Self {
        ScoringContext { source: None, references: vec![reference.into()] }
    }

    /// Treats `condition` as the reference, or as the source for
    /// [`Variant::Faithfulness`].
    pub fn for_condition(condition: &str, variant: Variant) -> Self {
        match variant {
            Variant::Faithfulness => ScoringContext { source: Some(condition.to_string()), references: vec![] },
            _ => ScoringContext::with_reference(condition),
        }
    }

    pub fn validate(&self, variant: Variant) -> Result<()> {
        if variant.needs_references() {
            if self.references.is_empty() {
                return Err(Error::Argument(format!("variant {variant} needs a reference")));
            }
            if self.references.iter().any(|r| r.trim().is_empty()) {
                return Err(Error::Argument("empty reference text".into()));
            }
        } else if self.source.as_deref().is_none_or(|s| s.trim().is_empty()) {
            return Err(Error::Argument(format!("variant {variant} needs a source")));
        }
        Ok(())
    }

    /// Conditions that score the hypothesis side (references, or the source
    /// for faithfulness).
    pub(crate) fn hypothesis_conditions(&self, variant: Variant) -> Vec<&str> {
        match variant {
            Variant::Faithfulness => self.source.iter().map(String::as_str).collect(),
            _ => self.references.iter().map(String::as_str).collect(),
        }
    }
}

/// Variant score of one hypothesis plus the hypothesis-side token scores
/// under the condition that scored it best.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Assessment {
    pub objective: f64,
    pub hypothesis_side: ScoredSequence,
    pub condition_index: usize,
}

/// Scores many hypotheses under one variant in a single batch.
pub(crate) fn assess_many<B: ScorerBackend + ?Sized>(
    backend: &B,
    ctx: &ScoringContext,
    hypotheses: &[&str],
    variant: Variant,
    prompts: &PromptSet,
) -> Result<Vec<Assessment>> {
    ctx.validate(variant)?;
    let conds = ctx.hypothesis_conditions(variant);
    let with_recall = matches!(variant, Variant::F | Variant::Recall);
    let per_hyp = conds.len() * if with_recall { 2 } else { 1 };

    let mut pairs: Vec<(&str, &str)> = Vec::with_capacity(hypotheses.len() * per_hyp);
    for hyp in hypotheses {
        for c in &conds {
            pairs.push((c, hyp));
        }
        if with_recall {
            for c in &conds {
                pairs.push((hyp, c));
            }
        }
    }
    let scored = score_pairs(backend, &pairs, prompts)?;

    scored
        .chunks(per_hyp)
        .map(|chunk| {
            let (fwd, bwd) = chunk.split_at(conds.len());
            let per_cond = |i: usize| match variant {
                Variant::Precision | Variant::Faithfulness => fwd[i].mean(),
                Variant::Recall => bwd[i].mean(),
                Variant::F => (fwd[i].mean() + bwd[i].mean()) / 2.0,
            };
            let objective = (0..conds.len()).map(per_cond).fold(f64::NEG_INFINITY, f64::max);
            let condition_index = argmax_first(fwd.iter().map(ScoredSequence::mean));
            Ok(Assessment { objective, hypothesis_side: fwd[condition_index].clone(), condition_index })
        })
        .collect()
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Variant score of `hypothesis`. With several references the maximum
/// per-reference score is returned.
pub fn variant_score<B: ScorerBackend + ?Sized>(
    backend: &B,
    source: Option<&str>,
    references: &[String],
    hypothesis: &str,
    variant: Variant,
    prompts: &PromptSet,
) -> Result<f64> {
    let ctx = ScoringContext { source: source.map(str::to_string), references: references.to_vec() };
    if hypothesis.trim().is_empty() {
        return Err(Error::Argument("hypothesis must be non-empty".into()));
    }
    let out = assess_many(backend, &ctx, &[hypothesis], variant, prompts)?;
    Ok(out[0].objective)
}

/// Wraps a backend and counts the scoring work it is asked to do.
pub struct CountingBackend<B> {
    inner: B,
    score_requests: AtomicUsize,
    topk_calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend { inner, score_requests: AtomicUsize::new(0), topk_calls: AtomicUsize::new(0) }
    }

    /// Individual score requests, counting each member of a batch.
    pub fn score_requests(&self) -> usize {
        self.score_requests.load(Ordering::SeqCst)
    }

    pub fn topk_calls(&self) -> usize {
        self.topk_calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ScorerBackend> ScorerBackend for CountingBackend<B> {
    fn info(&self) -> BackendInfo {
        self.inner.info()
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence> {
        self.score_requests.fetch_add(1, Ordering::SeqCst);
        self.inner.score(request)
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoredSequence>> {
        self.score_requests.fetch_add(requests.len(), Ordering::SeqCst);
        self.inner.score_batch(requests)
    }

    fn topk(&self, condition: &str, prefix: &[Token], k: usize) -> Result<Vec<(Token, f64)>> {
        self.topk_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.topk(condition, prefix, k)
    }

    fn detokenize(&self, tokens: &[Token]) -> String {
        self.inner.detokenize(tokens)
    }
}
