//! Automatic error analysis: a non-translation screen followed by the
//! iterative detect-correct loop that turns a hypothesis into its refined
//! form.
//!
//! Each round scores the current hypothesis, takes the token with the lowest
//! conditional log-probability, asks the backend for its top-k replacements
//! at that position, and tries deleting the token, substituting each
//! candidate, or inserting each candidate before it. The best-scoring edit
//! is kept only if it strictly improves the variant score.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::EvalConfig;
use crate::ngram;
use crate::scorer::{assess_many, PromptSet, ScoredSequence, ScorerBackend, ScoringContext, Token, Variant};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "candidate", rename_all = "snake_case")]
pub enum EditKind {
    InsertBefore(Token),
    Delete,
    Substitute(Token),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub position: usize,
    pub kind: EditKind,
}

impl Edit {
    pub fn apply(&self, tokens: &[Token]) -> Result<Vec<Token>> {
        if self.position >= tokens.len() {
            return Err(Error::Argument(format!(
                "edit position {} outside hypothesis of {} tokens",
                self.position,
                tokens.len()
            )));
        }
        let mut out = tokens.to_vec();
        match &self.kind {
            EditKind::Delete => {
                if tokens.len() == 1 {
                    return Err(Error::Argument("cannot delete the only token".into()));
                }
                out.remove(self.position);
            }
            EditKind::Substitute(t) => out[self.position] = t.clone(),
            EditKind::InsertBefore(t) => out.insert(self.position, t.clone()),
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementIteration {
    pub detected_index: usize,
    pub detected_token: Token,
    pub candidates: Vec<(Token, f64)>,
    /// Present only when the best edit strictly improved the score.
    pub chosen_edit: Option<Edit>,
    pub score_before: f64,
    /// Score of the best edit, whether or not it was accepted.
    pub score_after: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    MaxIterations,
    EarlyStop,
    NonTranslationSkipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub initial_tokens: Vec<Token>,
    pub initial_score: f64,
    pub iterations: Vec<RefinementIteration>,
    pub final_text: String,
    pub final_score: f64,
    pub stop_reason: StopReason,
    pub verdict: NonTranslationVerdict,
}

impl RefinementTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &Edit> {
        self.iterations.iter().filter_map(|it| it.chosen_edit.as_ref())
    }

    /// Re-applies the accepted edits to the initial tokens.
    pub fn replay(&self, backend: &dyn ScorerBackend) -> Result<String> {
        let mut tokens = self.initial_tokens.clone();
        for edit in self.accepted() {
            tokens = edit.apply(&tokens)?;
        }
        Ok(backend.detokenize(&tokens))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonTranslationVerdict {
    pub flagged: bool,
    pub overlap_ratio: f64,
    pub low_prob_fraction: f64,
}

/// Screens out hypotheses too far from the reference to be worth refining.
/// Flags only when the surface overlap is low *and* most tokens score below
/// the sentence mean.
pub fn non_translation_test(
    hyp_tokens: &[Token],
    ref_tokens: &[Token],
    scored: &ScoredSequence,
    cfg: &EvalConfig,
) -> NonTranslationVerdict {
    let mut pool: HashMap<&str, usize> = HashMap::new();
    for t in ref_tokens {
        *pool.entry(t.surface()).or_insert(0) += 1;
    }
    let mut shared = 0usize;
    for t in hyp_tokens {
        if let Some(n) = pool.get_mut(t.surface()) {
            if *n > 0 {
                *n -= 1;
                shared += 1;
            }
        }
    }
    let overlap_ratio = if hyp_tokens.is_empty() { 0.0 } else { shared as f64 / hyp_tokens.len() as f64 };
    let mean = scored.mean();
    let low = scored.logprobs().iter().filter(|&&lp| lp < mean).count();
    let low_prob_fraction = low as f64 / scored.len() as f64;
    NonTranslationVerdict {
        flagged: overlap_ratio < cfg.overlap_threshold && low_prob_fraction > cfg.low_prob_threshold,
        overlap_ratio,
        low_prob_fraction,
    }
}

/// Index of the lowest log-probability; the first one on ties.
pub fn detect(scored: &ScoredSequence) -> usize {
    let mut best = 0;
    for (i, lp) in scored.logprobs().iter().enumerate() {
        if *lp < scored.logprobs()[best] {
            best = i;
        }
    }
    best
}

/// Delete, then substitutions, then insertions, candidate order preserved.
/// Self-substitution is skipped, as is deleting a hypothesis's only token.
pub fn propose_edits(hyp_tokens: &[Token], position: usize, candidates: &[(Token, f64)]) -> Result<Vec<Edit>> {
    let current = hyp_tokens.get(position).ok_or_else(|| {
        Error::Argument(format!("position {position} outside hypothesis of {} tokens", hyp_tokens.len()))
    })?;
    let mut edits = Vec::with_capacity(1 + 2 * candidates.len());
    if hyp_tokens.len() > 1 {
        edits.push(Edit { position, kind: EditKind::Delete });
    }
    edits.extend(
        candidates
            .iter()
            .filter(|(w, _)| w.surface() != current.surface())
            .map(|(w, _)| Edit { position, kind: EditKind::Substitute(w.clone()) }),
    );
    edits.extend(candidates.iter().map(|(w, _)| Edit { position, kind: EditKind::InsertBefore(w.clone()) }));
    Ok(edits)
}

/// Applies every edit, scores the results with the variant, and returns the
/// highest-scoring edit (first on ties) with its score.
pub fn select_best(
    backend: &dyn ScorerBackend,
    ctx: &ScoringContext,
    hyp_tokens: &[Token],
    edits: &[Edit],
    variant: Variant,
    prompts: &PromptSet,
) -> Result<(Edit, f64)> {
    let (i, score, _) = select_best_inner(backend, ctx, hyp_tokens, edits, variant, prompts)?;
    Ok((edits[i].clone(), score))
}

struct Candidate {
    text: String,
    hypothesis_side: ScoredSequence,
    condition_index: usize,
}

fn select_best_inner(
    backend: &dyn ScorerBackend,
    ctx: &ScoringContext,
    hyp_tokens: &[Token],
    edits: &[Edit],
    variant: Variant,
    prompts: &PromptSet,
) -> Result<(usize, f64, Candidate)> {
    if edits.is_empty() {
        return Err(Error::Argument("no edits to select from".into()));
    }
    let texts: Vec<String> =
        edits.iter().map(|e| e.apply(hyp_tokens).map(|t| backend.detokenize(&t))).collect::<Result<_>>()?;
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let assessed = assess_many(backend, ctx, &refs, variant, prompts)?;
    let mut best = 0;
    for (i, a) in assessed.iter().enumerate() {
        if a.objective > assessed[best].objective {
            best = i;
        }
    }
    let winner = assessed.into_iter().nth(best).expect("non-empty");
    Ok((
        best,
        winner.objective,
        Candidate {
            text: texts.into_iter().nth(best).expect("non-empty"),
            hypothesis_side: winner.hypothesis_side,
            condition_index: winner.condition_index,
        },
    ))
}

fn word_tokens(text: &str) -> Vec<Token> {
    ngram::tokenize(text).into_iter().filter_map(|w| Token::from_surface(w).ok()).collect()
}

/// Refines `hypothesis` against a single condition (the reference, or the
/// source for the faithfulness variant).
pub fn refine(
    backend: &dyn ScorerBackend,
    condition: &str,
    hypothesis: &str,
    cfg: &EvalConfig,
) -> Result<RefinementTrace> {
    let ctx = ScoringContext::for_condition(condition, cfg.variant);
    refine_in(backend, &ctx, hypothesis, cfg)
}

/// Refines `hypothesis` against a full scoring context. With several
/// references, detection and top-k proposals use the reference that scores
/// the current hypothesis best.
pub fn refine_in(
    backend: &dyn ScorerBackend,
    ctx: &ScoringContext,
    hypothesis: &str,
    cfg: &EvalConfig,
) -> Result<RefinementTrace> {
    cfg.validate()?;
    if hypothesis.trim().is_empty() {
        return Err(Error::Argument("hypothesis must be non-empty".into()));
    }
    let conditions = ctx.hypothesis_conditions(cfg.variant);
    let initial = assess_many(backend, ctx, &[hypothesis], cfg.variant, &cfg.prompts)
        .map_err(|e| at_iteration(0, e))?
        .pop()
        .expect("one hypothesis");

    let verdict = non_translation_test(
        &word_tokens(hypothesis),
        &word_tokens(conditions[initial.condition_index]),
        &initial.hypothesis_side,
        cfg,
    );
    let initial_tokens = initial.hypothesis_side.tokens().to_vec();
    let mut trace = RefinementTrace {
        initial_tokens,
        initial_score: initial.objective,
        iterations: Vec::new(),
        final_text: hypothesis.to_string(),
        final_score: initial.objective,
        stop_reason: StopReason::NonTranslationSkipped,
        verdict,
    };
    if verdict.flagged {
        return Ok(trace);
    }
    // A hypothesis that is one of its conditions has nothing to correct.
    if conditions.iter().any(|c| c.split_whitespace().eq(hypothesis.split_whitespace())) {
        trace.stop_reason = StopReason::EarlyStop;
        return Ok(trace);
    }

    let mut current = Candidate {
        text: hypothesis.to_string(),
        hypothesis_side: initial.hypothesis_side,
        condition_index: initial.condition_index,
    };
    let mut score = initial.objective;
    trace.stop_reason = StopReason::MaxIterations;

    for round in 1..=cfg.max_iterations {
        let tokens = current.hypothesis_side.tokens().to_vec();
        let idx = detect(&current.hypothesis_side);
        let candidates = backend
            .topk(conditions[current.condition_index], &tokens[..idx], cfg.top_k)
            .map_err(|e| at_iteration(round, e))?;
        let edits = propose_edits(&tokens, idx, &candidates)?;
        if edits.is_empty() {
            trace.stop_reason = StopReason::EarlyStop;
            break;
        }
        let (best, best_score, next) = select_best_inner(backend, ctx, &tokens, &edits, cfg.variant, &cfg.prompts)
            .map_err(|e| at_iteration(round, e))?;
        let improved = best_score > score;
        trace.iterations.push(RefinementIteration {
            detected_index: idx,
            detected_token: tokens[idx].clone(),
            candidates,
            chosen_edit: improved.then(|| edits[best].clone()),
            score_before: score,
            score_after: best_score,
        });
        if !improved {
            trace.stop_reason = StopReason::EarlyStop;
            break;
        }
        score = best_score;
        current = next;
    }

    trace.final_text = current.text;
    trace.final_score = score;
    Ok(trace)
}

fn at_iteration(iteration: usize, e: Error) -> Error {
    match e {
        Error::Argument(_) => e,
        other => Error::Iteration { iteration, source: Box::new(other) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::NgramScorer;

    fn toks(words: &[&str]) -> Vec<Token> {
        words.iter().map(|w| Token::from_surface(*w).unwrap()).collect()
    }

    fn scored(words: &[&str], lps: &[f64]) -> ScoredSequence {
        ScoredSequence::new(toks(words), lps.to_vec()).unwrap()
    }

    fn cands(words: &[&str]) -> Vec<(Token, f64)> {
        words.iter().enumerate().map(|(i, w)| (Token::from_surface(*w).unwrap(), -(i as f64))).collect()
    }

    #[test]
    fn identical_text_is_not_flagged() {
        let t = toks(&["a", "b", "c"]);
        let v = non_translation_test(&t, &t, &scored(&["a", "b", "c"], &[-1.0, -2.0, -3.0]), &EvalConfig::default());
        assert_eq!(v.overlap_ratio, 1.0);
        assert!(!v.flagged);
    }

    #[test]
    fn low_prob_fraction_counts_tokens_below_mean() {
        let s = scored(&["w", "x", "y", "z"], &[-9.0, -9.0, -9.0, -1.0]);
        let v = non_translation_test(&toks(&["w", "x", "y", "z"]), &toks(&["q"]), &s, &EvalConfig::default());
        assert_eq!(v.low_prob_fraction, 0.75);
        assert_eq!(v.overlap_ratio, 0.0);
        // 0.0 < 0.15 and 0.75 > 0.6
        assert!(v.flagged);
    }

    #[test]
    fn decision_rule_with_default_thresholds() {
        // 1 of 20 hypothesis tokens shared -> 0.05; 16 of 20 below mean -> 0.8
        let hyp: Vec<String> = (0..20).map(|i| format!("h{i}")).collect();
        let hyp_refs: Vec<&str> = hyp.iter().map(String::as_str).collect();
        let mut lps = vec![-5.0; 16];
        lps.extend([-0.5; 4]);
        let s = scored(&hyp_refs, &lps);
        let v = non_translation_test(&toks(&hyp_refs), &toks(&["h0", "r1", "r2"]), &s, &EvalConfig::default());
        assert!((v.overlap_ratio - 0.05).abs() < 1e-12);
        assert!((v.low_prob_fraction - 0.8).abs() < 1e-12);
        assert!(v.flagged);
    }

    #[test]
    fn overlap_uses_multiset_intersection() {
        let v = non_translation_test(
            &toks(&["a", "a", "a", "b"]),
            &toks(&["a", "b"]),
            &scored(&["a", "a", "a", "b"], &[-1.0; 4]),
            &EvalConfig::default(),
        );
        assert_eq!(v.overlap_ratio, 0.5);
        assert_eq!(v.low_prob_fraction, 0.0);
    }

    #[test]
    fn detect_breaks_ties_low() {
        assert_eq!(detect(&scored(&["a", "b"], &[-1.0, -1.0])), 0);
        assert_eq!(detect(&scored(&["a", "b", "c"], &[-1.0, -3.0, -3.0])), 1);
    }

    #[test]
    fn edit_counts() {
        let hyp = toks(&["a", "b", "c"]);
        let ten: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let ten_refs: Vec<&str> = ten.iter().map(String::as_str).collect();
        assert_eq!(propose_edits(&hyp, 1, &cands(&ten_refs)).unwrap().len(), 21);

        let mut with_self = ten_refs.clone();
        with_self[3] = "b";
        assert_eq!(propose_edits(&hyp, 1, &cands(&with_self)).unwrap().len(), 20);

        let single = toks(&["a"]);
        let edits = propose_edits(&single, 0, &cands(&["x", "y"])).unwrap();
        assert!(edits.iter().all(|e| e.kind != EditKind::Delete));
        assert_eq!(edits.len(), 4);
    }

    #[test]
    fn edit_order_is_delete_substitute_insert() {
        let edits = propose_edits(&toks(&["a", "b"]), 0, &cands(&["x", "y"])).unwrap();
        let kinds: Vec<String> = edits
            .iter()
            .map(|e| match &e.kind {
                EditKind::Delete => "D".to_string(),
                EditKind::Substitute(t) => format!("S{t}"),
                EditKind::InsertBefore(t) => format!("I{t}"),
            })
            .collect();
        assert_eq!(kinds, ["D", "Sx", "Sy", "Ix", "Iy"]);
    }

    #[test]
    fn edit_application_bounds() {
        let hyp = toks(&["a"]);
        let del = Edit { position: 0, kind: EditKind::Delete };
        assert!(del.apply(&hyp).is_err());
        let far = Edit { position: 5, kind: EditKind::Substitute(hyp[0].clone()) };
        assert!(far.apply(&hyp).is_err());
        assert!(propose_edits(&hyp, 3, &[]).is_err());
    }

    #[test]
    fn select_best_restores_original_token() {
        let backend = NgramScorer::default();
        let ctx = ScoringContext::with_reference("the cat sat on the mat");
        let hyp = toks(&["the", "cat", "qqq", "on", "the", "mat"]);
        let edits = propose_edits(&hyp, 2, &cands(&["sat", "dog", "mat"])).unwrap();
        let (edit, _) = select_best(&backend, &ctx, &hyp, &edits, Variant::Precision, &PromptSet::default()).unwrap();
        assert_eq!(edit.kind, EditKind::Substitute(Token::from_surface("sat").unwrap()));
    }

    #[test]
    fn select_best_single_edit_and_empty() {
        let backend = NgramScorer::default();
        let ctx = ScoringContext::with_reference("a b c");
        let hyp = toks(&["a", "b", "c"]);
        let only = vec![Edit { position: 0, kind: EditKind::Delete }];
        let (e, _) = select_best(&backend, &ctx, &hyp, &only, Variant::Precision, &PromptSet::default()).unwrap();
        assert_eq!(e, only[0]);
        assert!(select_best(&backend, &ctx, &hyp, &[], Variant::Precision, &PromptSet::default()).is_err());
    }

    #[test]
    fn refine_recovers_substituted_token() {
        let backend = NgramScorer::default();
        let cfg = EvalConfig { variant: Variant::Precision, top_k: 5, max_iterations: 3, ..EvalConfig::default() };
        let trace = refine(&backend, "a b c d e", "a b zz d e", &cfg).unwrap();
        let first = trace.accepted().next().expect("an accepted edit");
        assert!(matches!(&first.kind, EditKind::Substitute(t) if t.surface() == "c"));
        for it in &trace.iterations {
            if it.chosen_edit.is_some() {
                assert!(it.score_after > it.score_before);
            }
        }
        assert_eq!(trace.replay(&backend).unwrap(), trace.final_text);
    }

    #[test]
    fn refine_on_reference_stops_immediately() {
        let backend = NgramScorer::default();
        let cfg = EvalConfig { variant: Variant::Precision, ..EvalConfig::default() };
        let trace = refine(&backend, "a b c d e", "a b  c d e", &cfg).unwrap();
        assert_eq!(trace.stop_reason, StopReason::EarlyStop);
        assert!(trace.iterations.is_empty());
        assert_eq!(trace.accepted().count(), 0);
        assert_eq!(trace.final_text, "a b  c d e");
    }

    #[test]
    fn optimal_hypothesis_rejects_every_edit() {
        let backend = NgramScorer::default();
        let cfg = EvalConfig { variant: Variant::Precision, ..EvalConfig::default() };
        let trace = refine(&backend, "a b c d e", "a b c d", &cfg).unwrap();
        for it in &trace.iterations {
            assert_eq!(it.chosen_edit.is_some(), it.score_after > it.score_before);
        }
        assert!(trace.iterations.len() <= cfg.max_iterations);
    }

    #[test]
    fn flagged_hypothesis_is_not_refined() {
        let backend = NgramScorer::default();
        // Everything must look like a non-translation.
        let cfg = EvalConfig { overlap_threshold: 1.0, low_prob_threshold: 0.0, ..EvalConfig::default() };
        let trace = refine(&backend, "a b c d", "x y z y x x", &cfg).unwrap();
        if trace.verdict.flagged {
            assert_eq!(trace.stop_reason, StopReason::NonTranslationSkipped);
            assert!(trace.iterations.is_empty());
            assert_eq!(trace.final_text, "x y z y x x");
        } else {
            panic!("expected the hypothesis to be flagged: {:?}", trace.verdict);
        }
    }

    #[test]
    fn empty_hypothesis_rejected() {
        let backend = NgramScorer::default();
        assert!(matches!(refine(&backend, "a b", " ", &EvalConfig::default()), Err(Error::Argument(_))));
    }

    #[test]
    fn trace_serializes_to_json() {
        let backend = NgramScorer::default();
        let cfg = EvalConfig { variant: Variant::Precision, ..EvalConfig::default() };
        let trace = refine(&backend, "a b c d", "a b X d", &cfg).unwrap();
        let json = serde_json::to_string(&trace).unwrap();
        let back: RefinementTrace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, trace);
        assert!(json.contains("\"stop_reason\""));
    }
}
