use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mdr_core::corpus::load_corpus;
use mdr_core::encoder::{Encoder, HashedEncoder, QueryInput};
use mdr_core::index::{FlatIndex, MipsIndex};
use serde_json::Value;

fn mdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mdr(args);
    assert!(
        out.status.success(),
        "mdr {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    mdr(args).status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Small synthetic corpus plus a hashed flat index over it.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(dim: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["--seed", "3", "gen-synthetic", "--entities", "60", "--relations", "3", "--out-dir", &s(&root.join("data"))]);
        let f = Fixture { _dir: dir, root };
        ok(&[
            "build-index",
            "--corpus",
            &f.path("data/corpus.jsonl"),
            "--out",
            &f.path("flat.idx"),
            "--dim",
            &dim.to_string(),
        ]);
        f
    }

    fn path(&self, rel: &str) -> String {
        s(&self.root.join(rel))
    }
}

#[test]
fn round_trip_train_index_search_eval() {
    let f = Fixture::new(64);
    let summary: Value = serde_json::from_str(&ok(&[
        "--seed",
        "1",
        "train",
        "--data",
        &f.path("data/train.jsonl"),
        "--corpus",
        &f.path("data/corpus.jsonl"),
        "--out",
        &f.path("model.bin"),
        "--dim",
        "64",
        "--epochs",
        "4",
        "--bank-epochs",
        "1",
    ]))
    .unwrap();
    assert!(summary["selected_epoch"].as_u64().unwrap() >= 1);
    assert!(Path::new(&f.path("model.bin.log.json")).is_file());
    ok(&[
        "--seed",
        "1",
        "build-index",
        "--corpus",
        &f.path("data/corpus.jsonl"),
        "--model",
        &f.path("model.bin"),
        "--out",
        &f.path("model.idx"),
        "--hnsw",
    ]);
    let hits = ok(&[
        "search",
        "--index",
        &f.path("model.idx"),
        "--corpus",
        &f.path("data/corpus.jsonl"),
        "--model",
        &f.path("model.bin"),
        "--query",
        "what is r1 of the r0 of e000",
        "--json",
        "--k",
        "3",
    ]);
    let lines: Vec<Value> = hits.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        assert_eq!(l["passages"].as_array().unwrap().len(), 2);
    }
    let report: Value = serde_json::from_str(&ok(&[
        "eval",
        "--index",
        &f.path("model.idx"),
        "--corpus",
        &f.path("data/corpus.jsonl"),
        "--model",
        &f.path("model.bin"),
        "--data",
        &f.path("data/dev.jsonl"),
    ]))
    .unwrap();
    let r2 = report["recall_at"]["2"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&r2));
    assert_eq!(report["sp_em"].as_f64().unwrap(), r2);
}

#[test]
fn one_hop_search_matches_flat_search() {
    let f = Fixture::new(32);
    let query = "what is r2 of the r1 of e004";
    let out = ok(&[
        "search",
        "--index",
        &f.path("flat.idx"),
        "--corpus",
        &f.path("data/corpus.jsonl"),
        "--dim",
        "32",
        "--query",
        query,
        "--hops",
        "1",
        "--k",
        "5",
        "--beam",
        "5",
        "--json",
    ]);
    let got: Vec<String> = out
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            v["passages"][0]["id"].as_str().unwrap().to_string()
        })
        .collect();

    let corpus = load_corpus(f.path("data/corpus.jsonl")).unwrap();
    let enc = HashedEncoder::new(32, 0).unwrap();
    let vecs = enc.encode_passages(corpus.passages()).unwrap();
    let ids = corpus.passages().iter().map(|p| p.id.clone()).collect();
    let flat = FlatIndex::from_vectors(&vecs, ids).unwrap();
    let q = enc.encode_query(&QueryInput::new(query, &[])).unwrap();
    let want: Vec<String> = flat
        .search(q.values(), 5)
        .unwrap()
        .iter()
        .map(|h| corpus.passages()[h.handle.0].id.clone())
        .collect();
    assert_eq!(got, want);
}

#[test]
fn table_and_json_agree() {
    let f = Fixture::new(32);
    let base = [
        "search",
        "--index",
        &f.path("flat.idx"),
        "--corpus",
        &f.path("data/corpus.jsonl"),
        "--dim",
        "32",
        "--query",
        "what is r0 of the r2 of e011",
        "--k",
        "4",
    ];
    let table = ok(&base);
    let mut with_json = base.to_vec();
    with_json.push("--json");
    let json = ok(&with_json);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    let objs: Vec<Value> = json.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(table.lines().next().unwrap().starts_with("rank"));
    assert_eq!(rows.len(), objs.len());
    for (row, obj) in rows.iter().zip(&objs) {
        for p in obj["passages"].as_array().unwrap() {
            assert!(row.contains(p["id"].as_str().unwrap()), "{row} lacks {p}");
        }
        let score = format!("{:.4}", obj["total_score"].as_f64().unwrap() as f32);
        assert!(row.contains(&score), "{row} lacks {score}");
    }
}

#[test]
fn search_is_repeatable() {
    let f = Fixture::new(32);
    let args = [
        "search",
        "--index",
        &f.path("flat.idx"),
        "--corpus",
        &f.path("data/corpus.jsonl"),
        "--dim",
        "32",
        "--query",
        "what is r1 of the r0 of e003",
        "--json",
    ];
    assert_eq!(ok(&args), ok(&args));
}

#[test]
fn exit_codes() {
    let f = Fixture::new(16);
    let missing = f.path("nope.jsonl");
    assert_eq!(code(&["build-index", "--corpus", &missing, "--out", &f.path("x.idx")]), 2);
    assert_eq!(
        code(&[
            "build-index",
            "--corpus",
            &f.path("data/corpus.jsonl"),
            "--out",
            &f.path("x.idx"),
            "--hnsw",
            "--ef-construction",
            "0",
        ]),
        2
    );
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["bench", "--no-such-flag"]), 2);
    assert_eq!(
        code(&[
            "train",
            "--data",
            &f.path("data/train.jsonl"),
            "--out",
            &f.path("m.bin"),
            "--epochs",
            "0",
        ]),
        2
    );
    // Index built at d=16, queried at d=32.
    assert_eq!(
        code(&[
            "search",
            "--index",
            &f.path("flat.idx"),
            "--corpus",
            &f.path("data/corpus.jsonl"),
            "--dim",
            "32",
            "--query",
            "x",
        ]),
        1
    );
    assert_eq!(code(&["--seed", "1", "gen-synthetic", "--entities", "2", "--relations", "1", "--out-dir", &f.path("tiny")]), 2);
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let f = Fixture::new(16);
    let cfg = f.root.join("mdr.toml");
    std::fs::write(&cfg, "[build-index]\ndim = 24\n").unwrap();
    let build = |extra: &[&str]| {
        let mut args = vec![
            "--config".to_string(),
            s(&cfg),
            "build-index".into(),
            "--corpus".into(),
            f.path("data/corpus.jsonl"),
            "--out".into(),
            f.path("c.idx"),
        ];
        args.extend(extra.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = mdr(&refs);
        assert!(out.status.success());
        String::from_utf8(out.stderr).unwrap()
    };
    assert!(build(&[]).contains("d=24"));
    assert!(build(&["--dim", "40"]).contains("d=40"));

    std::fs::write(&cfg, "dim = \"lots\"\n").unwrap();
    assert_eq!(code(&["--config", &s(&cfg), "build-index", "--corpus", &f.path("data/corpus.jsonl"), "--out", &f.path("c.idx")]), 2);
}

fn gen(dir: &Path, entities: &str, relations: &str, seed: &str) {
    ok(&["--seed", seed, "gen-synthetic", "--entities", entities, "--relations", relations, "--out-dir", &s(dir)]);
}

#[test]
fn gen_synthetic_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    gen(&dir.path().join("a"), "40", "3", "9");
    gen(&dir.path().join("b"), "40", "3", "9");
    gen(&dir.path().join("c"), "40", "3", "10");
    for f in ["corpus.jsonl", "train.jsonl", "dev.jsonl"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        if f != "corpus.jsonl" {
            assert_ne!(a, std::fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn gen_synthetic_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "12", "2", "3");
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/synthetic_12x2_seed3");
    for f in ["corpus.jsonl", "train.jsonl", "dev.jsonl"] {
        let got = std::fs::read_to_string(dir.path().join(f)).unwrap();
        let want = std::fs::read_to_string(golden.join(f)).unwrap();
        assert_eq!(got, want, "{f} drifted from the golden copy");
    }
}

#[test]
fn gen_synthetic_minimum_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gen-synthetic", "--entities", "3", "--relations", "1", "--out-dir", &s(dir.path())]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["passages"], 3);
}

#[test]
fn eval_k_list_rows() {
    let f = Fixture::new(32);
    let csv = f.path("r.csv");
    let out = ok(&[
        "eval",
        "--index",
        &f.path("flat.idx"),
        "--corpus",
        &f.path("data/corpus.jsonl"),
        "--dim",
        "32",
        "--data",
        &f.path("data/dev.jsonl"),
        "--k-list",
        "2,10,20",
        "--csv",
        &csv,
    ]);
    let report: Value = serde_json::from_str(&out).unwrap();
    let keys: Vec<&String> = report["recall_at"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["10", "2", "20"]);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);
}

#[test]
fn bench_writes_header_and_dedups_k() {
    let f = Fixture::new(32);
    let out = mdr(&[
        "bench",
        "--index",
        &f.path("flat.idx"),
        "--corpus",
        &f.path("data/corpus.jsonl"),
        "--dim",
        "32",
        "--queries",
        &f.path("data/dev.jsonl"),
        "--k-list",
        "1,5,5",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], mdr_core::eval::BENCH_CSV_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("5,"));
    let secs: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!(secs > 0.0);
    assert!(String::from_utf8(out.stderr).unwrap().contains("duplicate"));
}

#[test]
fn unordered_flag_is_logged() {
    let f = Fixture::new(16);
    let out = ok(&[
        "train",
        "--data",
        &f.path("data/train.jsonl"),
        "--out",
        &f.path("u.bin"),
        "--dim",
        "16",
        "--epochs",
        "2",
        "--bank-epochs",
        "1",
        "--unordered",
    ]);
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["ordered"], false);
    let log: Value = serde_json::from_str(&std::fs::read_to_string(f.path("u.bin.log.json")).unwrap()).unwrap();
    assert_eq!(log["config"]["ordered"], false);
}
