//! Backend that serves recorded log-probabilities.
//!
//! Targets are looked up by their word tokenization; anything unrecorded
//! scores `unknown_logprob` per token. Top-k proposals are a fixed list.
//! Useful for reproducing a published refinement run without the model.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ngram;
use crate::scorer::{BackendInfo, ScoreRequest, ScoredSequence, ScorerBackend, Token};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordedSentence {
    pub text: String,
    pub logprobs: Vec<f64>,
    /// Marks rows filled in by hand rather than recorded.
    #[serde(default)]
    pub interpolated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordedCandidate {
    pub token: String,
    pub logprob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayFixture {
    pub reference: String,
    pub unknown_logprob: f64,
    pub candidates: Vec<RecordedCandidate>,
    pub sentences: Vec<RecordedSentence>,
}

pub struct ReplayScorer {
    fixture: ReplayFixture,
    table: HashMap<Vec<String>, Vec<f64>>,
}

impl ReplayScorer {
    pub fn new(fixture: ReplayFixture) -> Result<Self> {
        if !fixture.unknown_logprob.is_finite() {
            return Err(Error::Data("unknown_logprob must be finite".into()));
        }
        if fixture.candidates.windows(2).any(|w| w[0].logprob < w[1].logprob) {
            return Err(Error::Data("candidates must be sorted by descending logprob".into()));
        }
        let mut table = HashMap::new();
        for s in &fixture.sentences {
            let words = ngram::tokenize(&s.text);
            if words.len() != s.logprobs.len() {
                return Err(Error::Data(format!(
                    "{:?}: {} tokens but {} logprobs",
                    s.text,
                    words.len(),
                    s.logprobs.len()
                )));
            }
            table.insert(words, s.logprobs.clone());
        }
        Ok(ReplayScorer { fixture, table })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fixture = serde_json::from_str(&text).map_err(|e| Error::parse(path, 1, e.to_string()))?;
        ReplayScorer::new(fixture)
    }

    pub fn fixture(&self) -> &ReplayFixture {
        &self.fixture
    }
}

impl ScorerBackend for ReplayScorer {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            model_id: "replay".into(),
            tokenizer: "words".into(),
            supports_topk: true,
            concurrent: true,
            max_batch: usize::MAX,
        }
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence> {
        let words = ngram::tokenize(&request.target);
        if words.is_empty() {
            return Err(Error::Argument("target text must be non-empty".into()));
        }
        let logprobs =
            self.table.get(&words).cloned().unwrap_or_else(|| vec![self.fixture.unknown_logprob; words.len()]);
        let tokens = words.into_iter().map(Token::from_surface).collect::<Result<_>>()?;
        ScoredSequence::new(tokens, logprobs)
    }

    fn topk(&self, _condition: &str, _prefix: &[Token], k: usize) -> Result<Vec<(Token, f64)>> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        self.fixture.candidates.iter().take(k).map(|c| Ok((Token::from_surface(c.token.clone())?, c.logprob))).collect()
    }

    fn detokenize(&self, tokens: &[Token]) -> String {
        ngram::detokenize(tokens)
    }
}
