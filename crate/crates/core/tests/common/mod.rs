#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use errlens::io::EvalSample;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl HttpRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or(serde_json::Value::Null)
    }
}

/// Handler status that closes the connection without a response.
pub const DROP_CONNECTION: u16 = 0;

pub type Handler = dyn Fn(&HttpRequest) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server: one request per connection, a thread per
/// connection. Tracks how many requests are being handled at once.
pub struct MockServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    pub peak_in_flight: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    addr: std::net::SocketAddr,
}

impl MockServer {
    pub fn start(handler: impl Fn(&HttpRequest) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let addr = listener.local_addr().unwrap();
        let handler: Arc<Handler> = Arc::new(handler);
        let requests = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let active = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        {
            let (requests, peak, stop) = (requests.clone(), peak.clone(), stop.clone());
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let (handler, requests, peak, active) =
                        (handler.clone(), requests.clone(), peak.clone(), active.clone());
                    thread::spawn(move || {
                        let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                        peak.fetch_max(now, Ordering::SeqCst);
                        requests.fetch_add(1, Ordering::SeqCst);
                        let _ = serve(stream, handler.as_ref());
                        active.fetch_sub(1, Ordering::SeqCst);
                    });
                }
            });
        }
        MockServer { url: format!("http://{addr}"), requests, peak_in_flight: peak, stop, addr }
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

fn serve(stream: TcpStream, handler: &Handler) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h == "\r\n" || h == "\n" {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let len = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;
    let req = HttpRequest { method, path, headers, body: String::from_utf8_lossy(&body).into_owned() };
    let (status, payload) = handler(&req);
    if status == DROP_CONNECTION {
        return Ok(());
    }
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    stream.flush()
}

pub const WORDS: &[&str] = &[
    "the", "a", "cat", "dog", "sat", "ran", "on", "under", "mat", "table", "quickly", "slowly", "red", "blue", "big",
    "small", "house", "garden", "tree", "river", "bird", "sang", "loudly", "near", "old", "young", "man", "woman",
    "saw", "found",
];

/// Reference of 5..=15 words drawn from [`WORDS`].
pub fn random_reference(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.random_range(5..=15);
    (0..n).map(|_| WORDS.choose(rng).unwrap().to_string()).collect()
}

/// Replaces one word with a token absent from the reference vocabulary.
pub fn oov_substitution(rng: &mut ChaCha8Rng, reference: &[String]) -> (Vec<String>, usize) {
    let mut hyp = reference.to_vec();
    let i = rng.random_range(0..hyp.len());
    hyp[i] = format!("zq{}x", rng.random_range(0..1000));
    (hyp, i)
}

/// One to three random substitutions, insertions or deletions.
pub fn random_corruption(rng: &mut ChaCha8Rng, reference: &[String]) -> Vec<String> {
    let mut hyp = reference.to_vec();
    for _ in 0..rng.random_range(1..=3) {
        let i = rng.random_range(0..hyp.len());
        let w = if rng.random_bool(0.5) {
            WORDS.choose(rng).unwrap().to_string()
        } else {
            format!("oov{}", rng.random_range(0..100))
        };
        match rng.random_range(0..3) {
            0 => hyp[i] = w,
            1 => hyp.insert(i, w),
            _ if hyp.len() > 2 => {
                hyp.remove(i);
            }
            _ => hyp[i] = w,
        }
    }
    hyp
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `segments` references, each translated by `systems` systems with
/// increasing amounts of corruption: system `s{i}` applies `i` edits.
pub fn graded_corpus(seed: u64, segments: usize, systems: usize) -> Vec<EvalSample> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for g in 0..segments {
        let reference = random_reference(&mut r);
        for s in 0..systems {
            let mut hyp = reference.clone();
            for _ in 0..s {
                let i = r.random_range(0..hyp.len());
                hyp[i] = format!("oov{}", r.random_range(0..100));
            }
            out.push(EvalSample {
                id: format!("seg{g}-s{s}"),
                source: None,
                references: vec![reference.join(" ")],
                hypothesis: hyp.join(" "),
                system: format!("s{s}"),
                segment_id: Some(format!("seg{g}")),
            });
        }
    }
    out
}

/// Splits `text` into word pieces that keep their leading whitespace, so
/// the pieces concatenate back to the trimmed text.
pub fn pieces(text: &str) -> Vec<String> {
    let text = text.trim();
    let mut out = Vec::new();
    let mut pos = 0;
    for w in errlens::ngram::tokenize(text) {
        let at = text[pos..].find(&w).expect("token in text");
        out.push(text[pos..pos + at + w.len()].to_string());
        pos += at + w.len();
    }
    out
}

fn envelope(code: &str, message: &str) -> String {
    serde_json::json!({"error": {"code": code, "message": message}}).to_string()
}

/// A conforming server backed by the n-gram oracle.
pub fn oracle_server(max_batch: usize) -> MockServer {
    use errlens::scorer::{ScoreRequest, ScorerBackend, Token};
    let model = errlens::ngram::NgramScorer::default();
    let score_one =
        move |model: &errlens::ngram::NgramScorer, item: &serde_json::Value| -> Result<serde_json::Value, String> {
            let condition = item["condition"].as_str().ok_or("missing condition")?;
            let target = item["target"].as_str().ok_or("missing target")?;
            if target.trim().is_empty() {
                return Err("target must be non-empty".into());
            }
            let seq = model
                .score(&ScoreRequest { condition: condition.into(), target: target.into(), prompt: None })
                .map_err(|e| e.to_string())?;
            Ok(serde_json::json!({"tokens": pieces(target), "logprobs": seq.logprobs(), "model_id": "ngram-oracle"}))
        };
    MockServer::start(move |req| match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/v1/info") => (
            200,
            serde_json::json!({"model_id": "ngram-oracle", "max_batch": max_batch, "supports_topk": true}).to_string(),
        ),
        ("POST", "/v1/score") => match score_one(&model, &req.json()) {
            Ok(v) => (200, v.to_string()),
            Err(m) => (400, envelope("invalid_request", &m)),
        },
        ("POST", "/v1/score_batch") => {
            let body = req.json();
            let items = body["items"].as_array().cloned().unwrap_or_default();
            if items.len() > max_batch {
                return (400, envelope("batch_too_large", "too many items"));
            }
            match items.iter().map(|i| score_one(&model, i)).collect::<Result<Vec<_>, _>>() {
                Ok(results) => (200, serde_json::json!({"results": results}).to_string()),
                Err(m) => (400, envelope("invalid_request", &m)),
            }
        }
        ("POST", "/v1/topk") => {
            let body = req.json();
            let condition = body["condition"].as_str().unwrap_or_default();
            let k = body["k"].as_u64().unwrap_or(0) as usize;
            let prefix: Vec<Token> = body["prefix_tokens"]
                .as_array()
                .cloned()
                .unwrap_or_default()
                .iter()
                .filter_map(|t| Token::from_surface(t.as_str()?.trim()).ok())
                .collect();
            match model.topk(condition, &prefix, k) {
                Ok(c) => {
                    let lead = if prefix.is_empty() { "" } else { " " };
                    let cands: Vec<serde_json::Value> = c
                        .iter()
                        .map(|(t, lp)| serde_json::json!({"token": format!("{lead}{}", t.surface()), "logprob": lp}))
                        .collect();
                    (200, serde_json::json!({"candidates": cands, "model_id": "ngram-oracle"}).to_string())
                }
                Err(e) => (400, envelope("invalid_request", &e.to_string())),
            }
        }
        _ => (404, envelope("not_found", "no such endpoint")),
    })
}
