//! Interpolated, additively smoothed bigram scorer built from the condition
//! text alone. It is the offline stand-in for a pretrained model: tokens seen
//! in the condition (and in the condition's order) score high, everything
//! else falls to the smoothing floor.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::scorer::{BackendInfo, Prompt, ScoreRequest, ScoredSequence, ScorerBackend, Token};

/// Reserved vocabulary entry that absorbs every unseen surface.
pub const UNK: &str = "⟨unk⟩";

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.3;

/// Whitespace tokenization with punctuation split off as separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_ascii_punctuation() {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            } else {
                word.push(ch);
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

pub fn detokenize(tokens: &[Token]) -> String {
    tokens.iter().map(Token::surface).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug)]
pub struct OracleModel {
    vocab: BTreeSet<String>,
    unigrams: HashMap<String, u32>,
    total: u32,
    bigrams: HashMap<(String, String), u32>,
    bigram_totals: HashMap<String, u32>,
    beta: f64,
    lambda: f64,
}

impl OracleModel {
    /// Counts come from `condition`; `extra` surfaces (target or prefix
    /// tokens) only widen the vocabulary.
    pub fn new<S: AsRef<str>>(condition: &str, extra: &[S], beta: f64, lambda: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Argument(format!("smoothing constant must be > 0, got {beta}")));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Argument(format!("interpolation weight must be in [0,1], got {lambda}")));
        }
        let cond = tokenize(condition);
        let mut unigrams = HashMap::new();
        for t in &cond {
            *unigrams.entry(t.clone()).or_insert(0) += 1;
        }
        let mut bigrams = HashMap::new();
        let mut bigram_totals = HashMap::new();
        for w in cond.windows(2) {
            *bigrams.entry((w[0].clone(), w[1].clone())).or_insert(0) += 1;
            *bigram_totals.entry(w[0].clone()).or_insert(0) += 1;
        }
        let mut vocab: BTreeSet<String> = cond.iter().cloned().collect();
        vocab.extend(extra.iter().map(|s| s.as_ref().to_string()));
        vocab.insert(UNK.to_string());
        Ok(OracleModel { vocab, unigrams, total: cond.len() as u32, bigrams, bigram_totals, beta, lambda })
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(String::as_str)
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    fn resolve<'a>(&self, token: &'a str) -> &'a str {
        if self.vocab.contains(token) {
            token
        } else {
            UNK
        }
    }

    fn unigram_prob(&self, token: &str) -> f64 {
        let count = self.unigrams.get(token).copied().unwrap_or(0);
        (f64::from(count) + self.beta) / (f64::from(self.total) + self.beta * self.vocab.len() as f64)
    }

    fn bigram_prob(&self, prev: &str, token: &str) -> f64 {
        let count = self.bigrams.get(&(prev.to_string(), token.to_string())).copied().unwrap_or(0);
        let total = self.bigram_totals.get(prev).copied().unwrap_or(0);
        (f64::from(count) + self.beta) / (f64::from(total) + self.beta * self.vocab.len() as f64)
    }

    /// Natural-log probability of `token` after `prev` (unigram only when
    /// there is no previous token).
    pub fn logprob(&self, prev: Option<&str>, token: &str) -> f64 {
        let token = self.resolve(token);
        let p = match prev {
            None => self.unigram_prob(token),
            Some(prev) => {
                let prev = self.resolve(prev);
                self.lambda * self.bigram_prob(prev, token) + (1.0 - self.lambda) * self.unigram_prob(token)
            }
        };
        p.ln()
    }

    /// The `k` most probable vocabulary entries after `prev`, descending,
    /// ties by surface. `k` larger than the vocabulary returns everything.
    pub fn topk(&self, prev: Option<&str>, k: usize) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = self.vocab.iter().map(|w| (w.clone(), self.logprob(prev, w))).collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }
}

/// [`ScorerBackend`] over [`OracleModel`]s built per request.
#[derive(Clone, Debug)]
pub struct NgramScorer {
    beta: f64,
    lambda: f64,
}

impl Default for NgramScorer {
    fn default() -> Self {
        NgramScorer { beta: DEFAULT_BETA, lambda: DEFAULT_LAMBDA }
    }
}

impl NgramScorer {
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        // validates both constants
        OracleModel::new::<&str>("", &[], beta, lambda)?;
        Ok(NgramScorer { beta, lambda })
    }

    pub fn model<S: AsRef<str>>(&self, condition: &str, extra: &[S]) -> Result<OracleModel> {
        OracleModel::new(condition, extra, self.beta, self.lambda)
    }
}

fn to_tokens(surfaces: Vec<String>) -> Result<Vec<Token>> {
    surfaces.into_iter().map(Token::from_surface).collect()
}

impl ScorerBackend for NgramScorer {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            model_id: format!("ngram(beta={},lambda={})", self.beta, self.lambda),
            tokenizer: "whitespace+punct".into(),
            supports_topk: true,
            concurrent: true,
            max_batch: usize::MAX,
        }
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence> {
        let target = tokenize(&request.target);
        if target.is_empty() {
            return Err(Error::Argument("target text must be non-empty".into()));
        }
        let (condition, prefix) = match &request.prompt {
            None => (request.condition.clone(), Vec::new()),
            Some(Prompt::EncoderSuffix(s)) if s.trim().is_empty() => (request.condition.clone(), Vec::new()),
            Some(Prompt::EncoderSuffix(s)) => (format!("{} {}", request.condition, s), Vec::new()),
            Some(Prompt::DecoderPrefix(p)) => (request.condition.clone(), tokenize(p)),
        };
        let extra: Vec<&String> = prefix.iter().chain(&target).collect();
        let model = self.model(&condition, &extra)?;
        let mut prev: Option<&str> = prefix.last().map(String::as_str);
        let mut logprobs = Vec::with_capacity(target.len());
        for tok in &target {
            logprobs.push(model.logprob(prev, tok));
            prev = Some(tok);
        }
        ScoredSequence::new(to_tokens(target)?, logprobs)
    }

    fn topk(&self, condition: &str, prefix: &[Token], k: usize) -> Result<Vec<(Token, f64)>> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        let extra: Vec<&str> = prefix.iter().map(Token::surface).collect();
        let model = self.model(condition, &extra)?;
        model
            .topk(prefix.last().map(Token::surface), k)
            .into_iter()
            .map(|(w, lp)| Ok((Token::from_surface(w)?, lp)))
            .collect()
    }

    fn detokenize(&self, tokens: &[Token]) -> String {
        detokenize(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(cond: &str, beta: f64, lambda: f64) -> OracleModel {
        OracleModel::new::<&str>(cond, &[], beta, lambda).unwrap()
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("Mike goes, on Thursday."), vec!["Mike", "goes", ",", "on", "Thursday", "."]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn unigram_hand_arithmetic() {
        // vocab {a, b, UNK}, beta 1: P(a) = (2+1)/(3+3)
        let m = model("a b a", 1.0, 0.0);
        assert_eq!(m.vocab_len(), 3);
        assert!((m.logprob(None, "a") - 0.5f64.ln()).abs() < 1e-15);
        assert!((m.logprob(None, "b") - (2.0f64 / 6.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn unseen_token_gets_smoothing_floor() {
        let m = model("a b a", 1.0, 0.0);
        let floor = (1.0f64 / 6.0).ln();
        assert!((m.logprob(None, "zzz") - floor).abs() < 1e-15);
        for w in ["a", "b"] {
            assert!(m.logprob(None, w) > floor);
        }
    }

    #[test]
    fn bigram_hand_arithmetic() {
        // "a b a": bigrams (a,b) (b,a); vocab 3; beta 1, lambda 0.5
        // P_bi(b|a) = (1+1)/(1+3) = 0.5, P_uni(b) = 2/6
        let m = model("a b a", 1.0, 0.5);
        let expected = (0.5 * 0.5 + 0.5 * (2.0 / 6.0f64)).ln();
        assert!((m.logprob(Some("a"), "b") - expected).abs() < 1e-15);
    }

    #[test]
    fn topk_examples() {
        let m = model("a b a", 1.0, 0.0);
        let top = m.topk(None, 1);
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].0, "a");
        assert!((top[0].1 - 0.5f64.ln()).abs() < 1e-15);

        let all = m.topk(None, 100);
        assert_eq!(all.len(), 3);
        let mass: f64 = all.iter().map(|(_, lp)| lp.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_encoder_suffix_is_identity() {
        let s = NgramScorer::default();
        let plain = ScoreRequest { condition: "the cat sat".into(), target: "the cat".into(), prompt: None };
        let prompted = ScoreRequest { prompt: Some(Prompt::EncoderSuffix(String::new())), ..plain.clone() };
        assert_eq!(s.score(&plain).unwrap(), s.score(&prompted).unwrap());
    }

    #[test]
    fn decoder_prefix_conditions_first_token() {
        let s = NgramScorer::default();
        let req = ScoreRequest {
            condition: "x y z".into(),
            target: "y".into(),
            prompt: Some(Prompt::DecoderPrefix("x".into())),
        };
        let out = s.score(&req).unwrap();
        assert_eq!(out.len(), 1);
        let m = s.model("x y z", &["x", "y"]).unwrap();
        assert_eq!(out.logprobs()[0], m.logprob(Some("x"), "y"));
    }

    #[test]
    fn bad_constants_rejected() {
        assert!(NgramScorer::new(0.0, 0.3).is_err());
        assert!(NgramScorer::new(0.1, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn distribution_normalizes(
            cond in prop::collection::vec("[a-e]", 1..20),
            prev in prop::option::of("[a-g]"),
            beta in 0.01f64..2.0,
            lambda in 0.0f64..=1.0,
        ) {
            let m = OracleModel::new::<&str>(&cond.join(" "), &[], beta, lambda).unwrap();
            let mass: f64 = m.vocab().map(|w| m.logprob(prev.as_deref(), w).exp()).sum();
            prop_assert!((mass - 1.0).abs() < 1e-9);
            for w in m.vocab() {
                let p = m.logprob(prev.as_deref(), w).exp();
                prop_assert!(p > 0.0 && p <= 1.0);
            }
        }

        #[test]
        fn topk_is_prefix_of_topk_plus_one(
            cond in prop::collection::vec("[a-f]", 1..20),
            prev in prop::option::of("[a-f]"),
            k in 1usize..8,
        ) {
            let m = OracleModel::new::<&str>(&cond.join(" "), &[], 0.1, 0.3).unwrap();
            let a = m.topk(prev.as_deref(), k);
            let b = m.topk(prev.as_deref(), k + 1);
            prop_assert_eq!(&b[..a.len()], &a[..]);
            for w in a.windows(2) {
                prop_assert!(w[0].1 >= w[1].1);
            }
        }

        #[test]
        fn condition_tokens_outscore_unseen(
            cond in prop::collection::vec("[a-e]", 1..20),
            beta in 0.01f64..2.0,
        ) {
            let m = OracleModel::new(&cond.join(" "), &["zz"], beta, 0.0).unwrap();
            let floor = m.logprob(None, "zz");
            for w in &cond {
                prop_assert!(m.logprob(None, w) > floor);
            }
        }
    }
}
