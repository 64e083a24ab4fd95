mod common;

use std::path::Path;
use std::process::Command;

use errlens::cli::{run_with, EXIT_BACKEND, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use errlens::io::load_reports;
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_with(std::iter::once("errlens").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn identity_corpus(dir: &Path) -> String {
    write(
        dir,
        "identity.jsonl",
        concat!(
            r#"{"id":"1","ref":"the cat sat on the mat .","hyp":"the cat sat on the mat .","system":"A"}"#,
            "\n",
            r#"{"id":"2","ref":"a quick brown fox jumps over the lazy dog","hyp":"a quick brown fox jumps over the lazy dog","system":"A"}"#,
            "\n",
            r#"{"id":"3","refs":["birds sang loudly near the old river"],"hyp":"birds sang loudly near the old river","system":"B"}"#,
            "\n",
        ),
    )
}

#[test]
fn score_identity_corpus_is_all_zero() {
    let dir = TempDir::new().unwrap();
    let samples = identity_corpus(dir.path());
    let (code, out, err) = run(&["score", "--backend", "ngram", "--samples", &samples, "--weights", "1.4:1"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let lines: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        assert_eq!(l["final_score"].as_f64(), Some(0.0), "{l}");
    }
    let ids: Vec<&str> = lines.iter().map(|l| l["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["1", "2", "3"]);
}

#[test]
fn score_writes_to_out_and_reports_reload() {
    let dir = TempDir::new().unwrap();
    let samples =
        write(dir.path(), "s.tsv", "id\tsystem\tref\thyp\nx\tA\ta b c d e\ta b qq d e\ny\tB\ta b c d e\ta b c d e\n");
    let out_path = dir.path().join("reports.jsonl");
    let (code, out, err) = run(&[
        "score",
        "--samples",
        &samples,
        "--out",
        out_path.to_str().unwrap(),
        "--variant",
        "precision",
        "--jobs",
        "2",
        "--trace",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.is_empty());
    assert!(err.contains("substitute c"), "{err}");
    let reports = load_reports(&out_path).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports[0].dist_exp > 0.0);
    assert_eq!(reports[1].final_score, 0.0);
}

#[test]
fn refine_trace_has_accepted_substitution() {
    let (code, out, err) = run(&["refine", "--backend", "ngram", "--ref", "a b c d", "--hyp", "a b X d", "--trace"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let trace: Value = serde_json::from_str(&out).unwrap();
    let accepted: Vec<&Value> = trace["iterations"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|it| it.get("chosen_edit").filter(|e| !e.is_null()))
        .collect();
    assert!(accepted.iter().any(|e| e["kind"]["type"] == "substitute"), "{out}");
}

fn meta_inputs(dir: &Path) -> (String, String, String) {
    let mut darr = String::from("segment_id\tbetter_system\tworse_system\n");
    let mut a = String::new();
    let mut b = String::new();
    for g in 0..40 {
        darr.push_str(&format!("g{g}\tS1\tS2\n"));
        darr.push_str(&format!("g{g}\tS2\tS3\n"));
        for (s, base) in [("S1", 3.0), ("S2", 2.0), ("S3", 1.0)] {
            a.push_str(&format!(r#"{{"system":"{s}","segment_id":"g{g}","score":{}}}"#, base + f64::from(g % 3) * 0.1));
            a.push('\n');
            let noisy = if g % 4 == 0 { -base } else { base };
            b.push_str(&format!(r#"{{"system":"{s}","segment_id":"g{g}","score":{noisy}}}"#));
            b.push('\n');
        }
    }
    (write(dir, "darr.tsv", &darr), write(dir, "a.jsonl", &a), write(dir, "b.jsonl", &b))
}

#[test]
fn meta_eval_bootstrap_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (darr, a, b) = meta_inputs(dir.path());
    let args =
        ["meta-eval", "--judgments", &darr, "--scores", &a, "--scores", &b, "--bootstrap", "1000", "--seed", "7"];
    let (c1, o1, e1) = run(&args);
    let (c2, o2, _) = run(&args);
    assert_eq!(c1, EXIT_OK, "{e1}");
    assert_eq!(c2, EXIT_OK);
    assert_eq!(o1, o2);
    let rows: Vec<Vec<&str>> = o1.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0][0], "a");
    assert_eq!(rows[0][2], "1");
    assert_eq!(rows[0][4], "", "best metric has no p-value");
    let p: f64 = rows[1][4].parse().unwrap();
    assert!(p < 0.05, "{o1}");
}

#[test]
fn meta_eval_variants() {
    let dir = TempDir::new().unwrap();
    let (darr, a, _) = meta_inputs(dir.path());
    let (code, out, _) = run(&["meta-eval", "--judgments", &darr, "--scores", &a, "--kind", "accuracy", "--json"]);
    assert_eq!(code, EXIT_OK);
    let row: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(row["kind"], "ACCURACY");
    assert_eq!(row["statistic"], 1.0);

    let human = write(
        dir.path(),
        "mqm.tsv",
        "system\tsegment_id\tscore\nS1\tg0\t-1\nS2\tg0\t-3\nS3\tg0\t-9\nS1\tg1\t0\nS2\tg1\t-2\nS3\tg1\t-4\n",
    );
    let (code, out, err) = run(&["meta-eval", "--human", &human, "--scores", &a, "--kind", "spearman", "--topk", "2"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("mqm@top2"), "{out}");

    let (code, _, _) = run(&["meta-eval", "--judgments", &darr, "--scores", &a, "--kind", "pearson"]);
    assert_eq!(code, EXIT_USAGE);
    let (code, _, _) = run(&["meta-eval", "--judgments", &darr, "--scores", &a, "--bootstrap", "100"]);
    assert_eq!(code, EXIT_USAGE, "bootstrap requires a seed");
    let (code, _, err) = run(&["meta-eval", "--judgments", &darr, "--scores", &human]);
    assert_eq!(code, EXIT_DATA, "{err}");
}

#[test]
fn sweep_from_reports_and_from_samples() {
    let dir = TempDir::new().unwrap();
    let samples: Vec<String> = common::graded_corpus(4, 6, 3)
        .iter()
        .map(|s| {
            serde_json::json!({"id": s.id, "ref": s.references[0], "hyp": s.hypothesis, "system": s.system, "segment": s.segment_id})
                .to_string()
        })
        .collect();
    let samples = write(dir.path(), "s.jsonl", &(samples.join("\n") + "\n"));
    let mut darr = String::new();
    for g in 0..6 {
        darr.push_str(&format!("seg{g}\ts0\ts1\nseg{g}\ts1\ts2\nseg{g}\ts0\ts2\n"));
    }
    let darr = write(dir.path(), "darr.tsv", &darr);
    let reports = dir.path().join("r.jsonl");
    let (code, _, err) = run(&["score", "--samples", &samples, "--out", reports.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");

    let (code, from_reports, err) =
        run(&["sweep", "--reports", reports.to_str().unwrap(), "--judgments", &darr, "--sweep", "1.0,1.2,1.4"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let lines: Vec<&str> = from_reports.lines().collect();
    assert_eq!(lines[0], "ratio\tstatistic\tn");
    assert_eq!(lines.len(), 4);

    let (code, from_samples, _) =
        run(&["sweep", "--samples", &samples, "--judgments", &darr, "--sweep", "1.0,1.2,1.4"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(from_reports, from_samples);

    let (code, _, _) = run(&["sweep", "--reports", reports.to_str().unwrap(), "--judgments", &darr, "--sweep", "1,x"]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn help_documents_every_flag() {
    let flags = [
        "--backend",
        "--endpoint",
        "--variant",
        "--prompts",
        "--k",
        "--iterations",
        "--weights",
        "--overlap-threshold",
        "--lowprob-threshold",
        "--samples",
        "--judgments",
        "--out",
        "--trace",
        "--bootstrap",
        "--seed",
        "--topk",
        "--sweep",
        "--jobs",
    ];
    let mut all = String::new();
    for sub in ["score", "refine", "meta-eval", "sweep", "serve-check"] {
        let (code, out, _) = run(&[sub, "--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("Usage"), "{sub}");
        all.push_str(&out);
    }
    for f in flags {
        assert!(all.contains(f), "{f} undocumented");
    }
    assert!(all.contains("ERRLENS_ENDPOINT"));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(run(&["score", "--samples", "x.jsonl", "--k", "0"]).0, EXIT_USAGE);
    assert_eq!(run(&["refine", "--ref", "a", "--hyp", "a", "--variant", "faithfulness"]).0, EXIT_USAGE);

    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.jsonl", "{\"id\": 1}\n");
    let (code, _, err) = run(&["score", "--samples", &bad]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("bad.jsonl") && err.contains('1'), "{err}");

    let samples = identity_corpus(dir.path());
    let (code, _, err) =
        run(&["score", "--samples", &samples, "--backend", "remote", "--endpoint", "http://127.0.0.1:9"]);
    assert_eq!(code, EXIT_BACKEND, "{err}");
    assert_eq!(run(&["score", "--samples", &samples, "--backend", "remote"]).0, EXIT_USAGE);
}

#[test]
fn serve_check_reports_each_check() {
    let good = common::oracle_server(4);
    let (code, out, err) = run(&["serve-check", "--endpoint", &good.url]);
    assert_eq!(code, EXIT_OK, "{out}{err}");
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{out}");

    let broken = common::MockServer::start(|req| match req.path.as_str() {
        "/v1/info" => (200, r#"{"model_id":"m","max_batch":4,"supports_topk":true}"#.into()),
        _ => (200, r#"{"tokens":[],"logprobs":[],"model_id":"m"}"#.into()),
    });
    let (code, out, _) = run(&["serve-check", "--endpoint", &broken.url]);
    assert_eq!(code, EXIT_BACKEND);
    assert!(out.contains("PASS info"));
    assert!(out.contains("FAIL score"));
}

#[test]
fn binary_reads_endpoint_from_environment() {
    let server = common::oracle_server(4);
    let out = Command::new(env!("CARGO_BIN_EXE_errlens"))
        .args(["refine", "--backend", "remote", "--ref", "the cat sat", "--hyp", "the cat sat"])
        .env("ERRLENS_ENDPOINT", &server.url)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["final_score"], 0.0);

    let out = Command::new(env!("CARGO_BIN_EXE_errlens")).arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}
