//! Remote encoder and scorer clients against an in-process HTTP stub.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use mdr_core::corpus::{Corpus, Passage, PassageHandle};
use mdr_core::encoder::{hashed_embed, EncodeRequest, Encoder, EncoderError, HashedEncoder, RemoteEncoder, RemoteOptions};
use mdr_core::retriever::{rerank, Chain, ChainScorer, RemoteScorer, ScoreRequest};
use serde_json::{json, Value};

type Handler = dyn Fn(&str, &str, &str) -> (u16, String) + Send + Sync;

/// Serves `handler(method, path, body)` on a loopback port until the process exits.
fn serve(handler: Arc<Handler>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let handler = handler.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let mut parts = line.split_whitespace();
                let method = parts.next().unwrap_or("").to_string();
                let path = parts.next().unwrap_or("").to_string();
                let mut length = 0usize;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h.trim().is_empty() {
                        break;
                    }
                    if let Some((k, v)) = h.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            length = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0u8; length];
                reader.read_exact(&mut body).unwrap();
                let (status, reply) = handler(&method, &path, &String::from_utf8(body).unwrap());
                let head = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                    reply.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    (url, hits)
}

/// An encoder service that answers with hashed embeddings, so results can be checked locally.
fn hashed_service(dim: usize, reported_dim: usize) -> (String, Arc<AtomicUsize>) {
    serve(Arc::new(move |method, path, body| match (method, path) {
        ("GET", "/health") => (200, json!({"status": "ok", "dimension": reported_dim, "model": "stub"}).to_string()),
        ("POST", "/encode") => {
            let req: EncodeRequest = serde_json::from_str(body).unwrap();
            let vectors: Vec<Vec<f32>> = req
                .texts
                .iter()
                .map(|t| hashed_embed(t, dim, 0).unwrap().into_values())
                .collect();
            (200, json!({"vectors": vectors, "dimension": reported_dim}).to_string())
        }
        _ => (404, "{}".into()),
    }))
}

fn passages(n: usize) -> Vec<Passage> {
    (0..n)
        .map(|i| Passage::new(format!("p{i}"), format!("title {i}"), format!("text number {i} about river {}", i % 3)))
        .collect()
}

fn options(max_batch: usize) -> RemoteOptions {
    RemoteOptions {
        timeout: Duration::from_secs(5),
        max_batch,
        ..RemoteOptions::default()
    }
}

#[test]
fn discover_reads_health_dimension() {
    let (url, _) = hashed_service(24, 24);
    let enc = RemoteEncoder::discover(&format!("{url}/"), options(64)).unwrap();
    assert_eq!(enc.dimension(), 24);
    assert_eq!(enc.base_url(), url);
}

#[test]
fn remote_matches_local_and_batches() {
    let (url, hits) = hashed_service(16, 16);
    let enc = RemoteEncoder::new(&url, 16, options(3)).unwrap();
    let ps = passages(10);
    let remote = enc.encode_passages(&ps).unwrap();
    let local = HashedEncoder::new(16, 0).unwrap().encode_passages(&ps).unwrap();
    assert_eq!(remote, local);
    assert_eq!(hits.load(Ordering::SeqCst), 4);
    let one = enc.encode_passage(&ps[7]).unwrap();
    assert_eq!(one, local[7]);
}

#[test]
fn dimension_mismatch_is_reported() {
    let (url, _) = hashed_service(16, 16);
    let enc = RemoteEncoder::new(&url, 32, options(64)).unwrap();
    let err = enc.encode_passages(&passages(2)).unwrap_err();
    assert!(matches!(err, EncoderError::DimensionMismatch { expected: 32, got: 16 }), "{err:?}");
}

#[test]
fn http_errors_and_short_replies() {
    let (url, _) = serve(Arc::new(|_, path, _| match path {
        "/encode" => (503, "overloaded".into()),
        _ => (404, "{}".into()),
    }));
    let enc = RemoteEncoder::new(&url, 4, options(64)).unwrap();
    match enc.encode_passages(&passages(1)).unwrap_err() {
        EncoderError::Protocol(m) => assert!(m.contains("503") && m.contains("overloaded"), "{m}"),
        e => panic!("{e:?}"),
    }
    assert!(RemoteEncoder::discover(&url, options(64)).is_err());

    let (url, _) = serve(Arc::new(|_, _, _| (200, json!({"vectors": [[0.0, 1.0]], "dimension": 2}).to_string())));
    let enc = RemoteEncoder::new(&url, 2, options(64)).unwrap();
    assert!(matches!(enc.encode_passages(&passages(3)), Err(EncoderError::Protocol(_))));
}

#[test]
fn unreachable_service() {
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let enc = RemoteEncoder::new(&format!("http://{addr}"), 4, options(64)).unwrap();
    assert!(matches!(enc.encode_passages(&passages(1)), Err(EncoderError::Unreachable { .. })));
}

fn chains() -> (Corpus, Vec<Chain>) {
    let corpus = Corpus::from_passages(passages(4)).unwrap();
    let chains = (0..3)
        .map(|i| Chain {
            passages: vec![PassageHandle(i), PassageHandle(i + 1)],
            hop_scores: vec![1.0, 1.0 - i as f32],
            total_score: 2.0 - i as f32,
            rerank_score: None,
            rerank_error: None,
        })
        .collect();
    (corpus, chains)
}

#[test]
fn remote_scorer_reorders_chains() {
    // Scores favour chains whose first passage has the larger number.
    let (url, _) = serve(Arc::new(|_, path, body| {
        assert_eq!(path, "/score");
        let req: ScoreRequest = serde_json::from_str(body).unwrap();
        assert_eq!(req.question, "which river");
        let scores: Vec<f64> = req
            .chains
            .iter()
            .map(|c| {
                assert!(c[0].starts_with("title ") && c[0].contains("[SEP]"));
                c[0].split_whitespace().nth(1).unwrap().parse::<f64>().unwrap()
            })
            .collect();
        (200, json!({ "scores": scores }).to_string())
    }));
    let (corpus, input) = chains();
    let scorer = RemoteScorer::new(&url, Duration::from_secs(5));
    let out = rerank(input, &scorer, "which river", &corpus).unwrap();
    let firsts: Vec<usize> = out.iter().map(|c| c.passages[0].0).collect();
    assert_eq!(firsts, [2, 1, 0]);
    assert_eq!(out[0].rerank_score, Some(2.0));
}

#[test]
fn remote_scorer_failures_mark_every_chain() {
    let (url, _) = serve(Arc::new(|_, _, _| (200, json!({"scores": [1.0]}).to_string())));
    let (corpus, input) = chains();
    let results = RemoteScorer::new(&url, Duration::from_secs(5)).score_chains("q", &input, &corpus);
    assert_eq!(results.len(), 3);
    assert!(results.iter().all(|r| r.as_ref().unwrap_err().contains("1 scores for 3 chains")));

    let (url, _) = serve(Arc::new(|_, _, _| (500, "{}".into())));
    let out = rerank(input, &RemoteScorer::new(&url, Duration::from_secs(5)), "q", &corpus).unwrap();
    assert!(out.iter().all(|c| c.rerank_error.is_some()));
}

#[test]
fn cli_uses_remote_encoder() {
    let (url, _) = hashed_service(16, 16);
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    let lines: Vec<String> = passages(6).iter().map(|p| serde_json::to_string(p).unwrap()).collect();
    std::fs::write(&corpus_path, lines.join("\n") + "\n").unwrap();
    let run = |args: &[&str]| std::process::Command::new(env!("CARGO_BIN_EXE_mdr")).args(args).output().unwrap();
    let idx = dir.path().join("r.idx");
    let enc_flag = format!("remote:{url}");
    let out = run(&["build-index", "--corpus", corpus_path.to_str().unwrap(), "--out", idx.to_str().unwrap(), "--encoder", &enc_flag]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        "search",
        "--index",
        idx.to_str().unwrap(),
        "--corpus",
        corpus_path.to_str().unwrap(),
        "--encoder",
        &enc_flag,
        "--query",
        "river 2",
        "--json",
        "--k",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first: Value = serde_json::from_str(String::from_utf8(out.stdout).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["rank"], 1);
}
