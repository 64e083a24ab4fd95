//! JSON-over-HTTP client for an external seq2seq scoring server.
//!
//! Wire protocol (all bodies UTF-8 JSON):
//!
//! ```text
//! POST {base}/v1/score        {"condition","target","prompts":{"encoder_suffixes","decoder_prefixes"}}
//!                          -> {"tokens":[str],"logprobs":[float],"model_id":str}
//! POST {base}/v1/score_batch  {"items":[score bodies]} -> {"results":[score responses]}
//! POST {base}/v1/topk         {"condition","prefix_tokens":[str],"k"}
//!                          -> {"candidates":[{"token","logprob"}],"model_id"}
//! GET  {base}/v1/info      -> {"model_id","max_batch","supports_topk"}
//! errors                   -> {"error":{"code","message"}} with a non-2xx status
//! ```
//!
//! Token surfaces are text pieces whose concatenation reproduces the scored
//! target, so the client detokenizes by concatenation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::error::{Error, Result};
use crate::scorer::{BackendInfo, PromptSet, ScoreRequest, ScoredSequence, ScorerBackend, Token};

pub const DEFAULT_MAX_BATCH: usize = 4;

#[derive(Clone, Debug)]
pub struct ServerEndpoint {
    base_url: Url,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub auth_token: Option<String>,
    /// Extra attempts after a transport failure.
    pub retries: usize,
}

impl ServerEndpoint {
    pub fn new(base_url: &str) -> Result<Self> {
        let parsed =
            Url::parse(base_url).map_err(|e| Error::Argument(format!("invalid endpoint URL {base_url:?}: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") || parsed.host().is_none() {
            return Err(Error::Argument(format!("endpoint must be an absolute http(s) URL, got {base_url:?}")));
        }
        Ok(ServerEndpoint {
            base_url: parsed,
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
            auth_token: None,
            retries: 2,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn with_auth_token(mut self, token: impl Into<String>) -> Self {
        self.auth_token = Some(token.into());
        self
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn base_url(&self) -> &Url {
        &self.base_url
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.as_str().trim_end_matches('/'), path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBody {
    pub condition: String,
    pub target: String,
    pub prompts: PromptSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
    pub model_id: String,
}

impl ScoreResponse {
    pub fn into_sequence(self) -> Result<ScoredSequence> {
        if self.tokens.len() != self.logprobs.len() {
            return Err(Error::Protocol(format!("{} tokens but {} logprobs", self.tokens.len(), self.logprobs.len())));
        }
        if self.tokens.is_empty() {
            return Err(Error::Protocol("empty token list".into()));
        }
        if self.logprobs.iter().any(|lp| !lp.is_finite()) {
            return Err(Error::Protocol("non-finite logprob".into()));
        }
        let tokens = self
            .tokens
            .into_iter()
            .map(|s| Token::from_surface(s).map_err(|e| Error::Protocol(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        ScoredSequence::new(tokens, self.logprobs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBatchBody {
    pub items: Vec<ScoreBody>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBatchResponse {
    pub results: Vec<ScoreResponse>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopkBody {
    pub condition: String,
    pub prefix_tokens: Vec<String>,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    pub logprob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopkResponse {
    pub candidates: Vec<Candidate>,
    pub model_id: String,
}

impl TopkResponse {
    pub fn into_candidates(self, k: usize) -> Result<Vec<(Token, f64)>> {
        if self.candidates.len() > k {
            return Err(Error::Protocol(format!("asked for {k} candidates, got {}", self.candidates.len())));
        }
        if self.candidates.windows(2).any(|w| w[0].logprob < w[1].logprob) {
            return Err(Error::Protocol("candidates are not sorted by descending logprob".into()));
        }
        self.candidates
            .into_iter()
            .map(|c| {
                if !c.logprob.is_finite() {
                    return Err(Error::Protocol("non-finite candidate logprob".into()));
                }
                let tok = Token::from_surface(c.token).map_err(|e| Error::Protocol(e.to_string()))?;
                Ok((tok, c.logprob))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub model_id: String,
    pub max_batch: usize,
    pub supports_topk: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorDetail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

/// Counting semaphore bounding outstanding requests.
struct InFlight {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(max: usize) -> Self {
        InFlight { max: max.max(1), active: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.max {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// Remote [`ScorerBackend`]. Shareable across threads.
pub struct RemoteScorer {
    endpoint: ServerEndpoint,
    agent: ureq::Agent,
    gate: InFlight,
    info: OnceLock<InfoResponse>,
}

impl RemoteScorer {
    /// Builds a client without touching the network; server limits default
    /// until [`RemoteScorer::fetch_info`] succeeds.
    pub fn new(endpoint: ServerEndpoint) -> Self {
        let config =
            ureq::Agent::config_builder().timeout_global(Some(endpoint.timeout)).http_status_as_error(false).build();
        RemoteScorer {
            gate: InFlight::new(endpoint.max_in_flight),
            agent: ureq::Agent::new_with_config(config),
            endpoint,
            info: OnceLock::new(),
        }
    }

    /// Builds a client and reads the server's advertised limits.
    pub fn connect(endpoint: ServerEndpoint) -> Result<Self> {
        let client = RemoteScorer::new(endpoint);
        client.fetch_info()?;
        Ok(client)
    }

    pub fn endpoint(&self) -> &ServerEndpoint {
        &self.endpoint
    }

    pub fn fetch_info(&self) -> Result<InfoResponse> {
        let body = self.request("v1/info", None)?;
        let info: InfoResponse = parse(&body)?;
        if info.max_batch == 0 {
            return Err(Error::Protocol("max_batch must be at least 1".into()));
        }
        let _ = self.info.set(info.clone());
        Ok(info)
    }

    fn max_batch(&self) -> usize {
        self.info.get().map_or(DEFAULT_MAX_BATCH, |i| i.max_batch)
    }

    pub fn remote_score(&self, condition: &str, target: &str, prompts: &PromptSet) -> Result<ScoredSequence> {
        if target.trim().is_empty() {
            return Err(Error::Argument("target text must be non-empty".into()));
        }
        let body = ScoreBody { condition: condition.to_string(), target: target.to_string(), prompts: prompts.clone() };
        let raw = self.request("v1/score", Some(to_json(&body)?))?;
        parse::<ScoreResponse>(&raw)?.into_sequence()
    }

    /// Scores `items` through `/v1/score_batch`, chunked to the server's
    /// batch limit. Chunks are issued concurrently up to `max_in_flight`;
    /// results keep input order.
    pub fn remote_score_batch(&self, items: &[ScoreBody]) -> Result<Vec<ScoredSequence>> {
        if items.iter().any(|i| i.target.trim().is_empty()) {
            return Err(Error::Argument("target text must be non-empty".into()));
        }
        let chunks: Vec<&[ScoreBody]> = items.chunks(self.max_batch()).collect();
        if chunks.len() <= 1 {
            return chunks.first().map_or(Ok(Vec::new()), |c| self.score_chunk(c));
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Vec<ScoredSequence>>>>> = chunks.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.endpoint.max_in_flight.min(chunks.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(chunk) = chunks.get(i) else { break };
                    let r = self.score_chunk(chunk);
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
                });
            }
        });
        let mut out = Vec::with_capacity(items.len());
        for slot in slots {
            let r = slot
                .into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .unwrap_or_else(|| Err(Error::Protocol("batch worker did not finish".into())));
            out.extend(r?);
        }
        Ok(out)
    }

    fn score_chunk(&self, chunk: &[ScoreBody]) -> Result<Vec<ScoredSequence>> {
        let body = ScoreBatchBody { items: chunk.to_vec() };
        let raw = self.request("v1/score_batch", Some(to_json(&body)?))?;
        let resp: ScoreBatchResponse = parse(&raw)?;
        if resp.results.len() != chunk.len() {
            return Err(Error::Protocol(format!("sent {} items, got {} results", chunk.len(), resp.results.len())));
        }
        resp.results.into_iter().map(ScoreResponse::into_sequence).collect()
    }

    pub fn remote_topk(&self, condition: &str, prefix_tokens: &[Token], k: usize) -> Result<Vec<(Token, f64)>> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        let body = TopkBody {
            condition: condition.to_string(),
            prefix_tokens: prefix_tokens.iter().map(|t| t.surface().to_string()).collect(),
            k,
        };
        let raw = self.request("v1/topk", Some(to_json(&body)?))?;
        parse::<TopkResponse>(&raw)?.into_candidates(k)
    }

    /// Probes every endpoint once and reports each check by name. The error
    /// check sends an empty target directly and expects a 4xx status with
    /// an error envelope.
    pub fn conformance(&self) -> Vec<(&'static str, Result<()>)> {
        let mut checks: Vec<(&'static str, Result<()>)> = Vec::new();
        checks.push(("info", self.fetch_info().map(|_| ())));
        let condition = "The cat sat on the mat.";
        let prompts = PromptSet::default();
        checks.push(("score", self.remote_score(condition, "A cat sat.", &prompts).map(|_| ())));
        let items: Vec<ScoreBody> = ["A cat sat.", "The cat sat.", "A dog ran."]
            .iter()
            .map(|t| ScoreBody { condition: condition.to_string(), target: t.to_string(), prompts: prompts.clone() })
            .collect();
        checks.push((
            "score_batch",
            self.remote_score_batch(&items).and_then(|r| {
                if r.len() == items.len() {
                    Ok(())
                } else {
                    Err(Error::Protocol(format!("expected {} results, got {}", items.len(), r.len())))
                }
            }),
        ));
        checks.push(("topk", self.remote_topk(condition, &[], 5).map(|_| ())));
        let bad = ScoreBody { condition: condition.to_string(), target: String::new(), prompts };
        let envelope = match to_json(&bad).and_then(|b| self.request("v1/score", Some(b))) {
            Err(Error::Server { status, body }) if (400..500).contains(&status) => {
                parse::<ErrorEnvelope>(&body).map(|_| ())
            }
            Err(e) => Err(e),
            Ok(_) => Err(Error::Protocol("empty target was accepted".into())),
        };
        checks.push(("error_envelope", envelope));
        checks
    }

    /// GET when `body` is `None`, POST otherwise. Transport failures are
    /// retried; HTTP error statuses are not.
    fn request(&self, path: &str, body: Option<String>) -> Result<String> {
        let url = self.endpoint.url(path);
        let _permit = self.gate.acquire();
        let mut attempt = 0;
        loop {
            match self.send_once(&url, body.as_deref()) {
                Err(Error::Transport { .. }) if attempt < self.endpoint.retries => attempt += 1,
                other => return other,
            }
        }
    }

    fn send_once(&self, url: &str, body: Option<&str>) -> Result<String> {
        let transport = |e: ureq::Error| Error::Transport { endpoint: url.to_string(), message: e.to_string() };
        let auth = self.endpoint.auth_token.as_ref().map(|t| format!("Bearer {t}"));
        let mut response = match body {
            None => {
                let mut req = self.agent.get(url);
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                req.call().map_err(transport)?
            }
            Some(b) => {
                let mut req = self.agent.post(url).header("Content-Type", "application/json");
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                req.send(b).map_err(transport)?
            }
        };
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport)?;
        if !(200..300).contains(&status) {
            return Err(Error::Server { status, body: text });
        }
        Ok(text)
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Argument(format!("cannot encode request: {e}")))
}

fn parse<'a, T: Deserialize<'a>>(raw: &'a str) -> Result<T> {
    serde_json::from_str(raw).map_err(|e| Error::Protocol(format!("malformed payload: {e}")))
}

impl ScorerBackend for RemoteScorer {
    fn info(&self) -> BackendInfo {
        let info = self.info.get();
        BackendInfo {
            model_id: info.map_or_else(|| "unknown".to_string(), |i| i.model_id.clone()),
            tokenizer: format!("remote:{}", self.endpoint.base_url),
            supports_topk: info.is_none_or(|i| i.supports_topk),
            concurrent: true,
            max_batch: self.max_batch(),
        }
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence> {
        let prompts = request.prompt.clone().map(PromptSet::from).unwrap_or_default();
        self.remote_score(&request.condition, &request.target, &prompts)
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoredSequence>> {
        let items: Vec<ScoreBody> = requests
            .iter()
            .map(|r| ScoreBody {
                condition: r.condition.clone(),
                target: r.target.clone(),
                prompts: r.prompt.clone().map(PromptSet::from).unwrap_or_default(),
            })
            .collect();
        self.remote_score_batch(&items)
    }

    fn topk(&self, condition: &str, prefix: &[Token], k: usize) -> Result<Vec<(Token, f64)>> {
        self.remote_topk(condition, prefix, k)
    }

    fn detokenize(&self, tokens: &[Token]) -> String {
        tokens.iter().map(Token::surface).collect()
    }
}
