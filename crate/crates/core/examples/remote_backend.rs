// Evaluating against an HTTP model server.
//
// With `ERRLENS_ENDPOINT` set, the example talks to that server. Otherwise
// it starts a toy server in-process that answers the same protocol from the
// n-gram model, which is enough to see the client at work.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::time::Duration;

use errlens::metric::{evaluate, EvalConfig};
use errlens::ngram::tokenize;
use errlens::scorer::{ScoreRequest, Token};
use errlens::{NgramScorer, RemoteScorer, ScorerBackend, ServerEndpoint};
use serde_json::{json, Value};

/// Word pieces carrying their leading whitespace, like a subword tokenizer.
fn pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut pos = 0;
    for w in tokenize(text) {
        let at = text[pos..].find(&w).unwrap();
        out.push(text[pos..pos + at + w.len()].to_string());
        pos += at + w.len();
    }
    out
}

fn answer(model: &NgramScorer, path: &str, body: &Value) -> (u16, Value) {
    let score = |item: &Value| -> Option<Value> {
        let target = item["target"].as_str()?.trim();
        let req = ScoreRequest { condition: item["condition"].as_str()?.into(), target: target.into(), prompt: None };
        let seq = model.score(&req).ok()?;
        Some(json!({"tokens": pieces(target), "logprobs": seq.logprobs(), "model_id": "toy"}))
    };
    let bad = || (400, json!({"error": {"code": "invalid_request", "message": "bad request"}}));
    match path {
        "/v1/info" => (200, json!({"model_id": "toy", "max_batch": 8, "supports_topk": true})),
        "/v1/score" => score(body).map_or_else(bad, |v| (200, v)),
        "/v1/score_batch" => {
            let items = body["items"].as_array().cloned().unwrap_or_default();
            match items.iter().map(score).collect::<Option<Vec<_>>>() {
                Some(results) => (200, json!({ "results": results })),
                None => bad(),
            }
        }
        "/v1/topk" => {
            let prefix: Vec<Token> = body["prefix_tokens"]
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(|t| Token::from_surface(t.as_str()?.trim()).ok())
                .collect();
            let lead = if prefix.is_empty() { "" } else { " " };
            let k = body["k"].as_u64().unwrap_or(1) as usize;
            match model.topk(body["condition"].as_str().unwrap_or_default(), &prefix, k) {
                Ok(c) => {
                    let cands: Vec<Value> = c
                        .iter()
                        .map(|(t, lp)| json!({"token": format!("{lead}{}", t.surface()), "logprob": lp}))
                        .collect();
                    (200, json!({"candidates": cands, "model_id": "toy"}))
                }
                Err(_) => bad(),
            }
        }
        _ => (404, json!({"error": {"code": "not_found", "message": path}})),
    }
}

fn spawn_toy_server() -> anyhow::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("http://{}", listener.local_addr()?);
    std::thread::spawn(move || {
        let model = NgramScorer::default();
        for stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(&stream);
            let mut line = String::new();
            let _ = reader.read_line(&mut line);
            let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let mut len = 0;
            loop {
                let mut h = String::new();
                if reader.read_line(&mut h).unwrap_or(0) == 0 || h.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let (status, payload) = answer(&model, &path, &serde_json::from_slice(&body).unwrap_or(Value::Null));
            let payload = payload.to_string();
            let _ = write!(
                &stream,
                "HTTP/1.1 {status} OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    Ok(url)
}

pub fn run_example() -> anyhow::Result<()> {
    let url = match std::env::var("ERRLENS_ENDPOINT") {
        Ok(url) => url,
        Err(_) => spawn_toy_server()?,
    };
    let endpoint =
        ServerEndpoint::new(&url)?.with_timeout(Duration::from_secs(30)).with_max_in_flight(4).with_retries(2);
    let client = RemoteScorer::connect(endpoint)?;
    println!("connected to {} ({})", url, client.info().model_id);

    for (check, result) in client.conformance() {
        println!("  {check:<15} {}", if result.is_ok() { "ok" } else { "FAILED" });
    }

    let references = vec!["the small dog ran under the table .".to_string()];
    let report = evaluate(&client, None, &references, "the small dog run under table .", &EvalConfig::default())?;
    println!("refined: {}", report.refined_text);
    println!("final:   {:.4}", report.final_score);
    anyhow::ensure!(report.dist_exp > 0.0);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
