use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use serde::Serialize;

use mdr_core::corpus::{load_corpus, Corpus};
use mdr_core::encoder::{Encoder, EncoderSpec, HashedEncoder, RemoteEncoder, RemoteOptions};
use mdr_core::eval::{bench_latency, bench_to_csv, evaluate, load_eval_records, EvalConfig, EvalRecord};
use mdr_core::index::{
    load_index, save_index, write_atomic, FlatIndex, HnswIndex, HnswParams, MipsIndex, VectorIndex,
};
use mdr_core::jsonl::{read_jsonl, to_jsonl};
use mdr_core::retriever::{rerank, retrieve, BeamConfig, ChainScorer, LexicalScorer, RemoteScorer};
use mdr_core::trainer::{generate_synthetic_task, load_examples, load_model, save_model, train, TrainConfig};

use crate::args::*;
use crate::CliError;

const DEFAULT_DIM: usize = 512;

struct Ctx {
    seed: u64,
    verbose: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require_file(flag: &str, path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{flag}: {} does not exist or is not a file", path.display())))
    }
}

fn build_encoder(args: &EncoderArgs) -> Result<EncoderSpec, CliError> {
    if let Some(model) = &args.model {
        require_file("--model", model)?;
        let m = load_model(model).with_context(|| format!("loading model {}", model.display()))?;
        return Ok(EncoderSpec::Linear(Arc::new(m)));
    }
    match args.encoder.as_deref().unwrap_or("hashed") {
        "hashed" => {
            let dim = args.dim.unwrap_or(DEFAULT_DIM);
            let enc = HashedEncoder::new(dim, args.hash_seed).map_err(|e| usage(format!("--dim: {e}")))?;
            Ok(EncoderSpec::Hashed(enc))
        }
        other => {
            let Some(url) = other.strip_prefix("remote:") else {
                return Err(usage(format!("--encoder: expected `hashed` or `remote:URL`, got {other:?}")));
            };
            let options = RemoteOptions {
                timeout: Duration::from_secs(args.timeout_secs),
                ..RemoteOptions::default()
            };
            let enc = match args.dim {
                Some(d) => RemoteEncoder::new(url, d, options).map_err(|e| usage(format!("--dim: {e}")))?,
                None => RemoteEncoder::discover(url, options).context("contacting the encoder service")?,
            };
            Ok(EncoderSpec::Remote(Arc::new(enc)))
        }
    }
}

fn build_scorer(spec: &str, timeout_secs: u64) -> Result<Option<Box<dyn ChainScorer>>, CliError> {
    match spec {
        "none" => Ok(None),
        "lexical" => Ok(Some(Box::new(LexicalScorer))),
        other => match other.strip_prefix("remote:") {
            Some(url) => Ok(Some(Box::new(RemoteScorer::new(url, Duration::from_secs(timeout_secs))))),
            None => Err(usage(format!("--rerank: expected none, lexical or remote:URL, got {other:?}"))),
        },
    }
}

/// Loads an index with the corpus it was built from and checks that they line up.
fn load_index_and_corpus(index: &Path, corpus: &Path) -> Result<(VectorIndex, Corpus), CliError> {
    require_file("--index", index)?;
    require_file("--corpus", corpus)?;
    let idx = load_index(index).with_context(|| format!("loading index {}", index.display()))?;
    let corpus = load_corpus(corpus).with_context(|| format!("loading corpus {}", corpus.display()))?;
    let same = idx.flat().ids().len() == corpus.len()
        && idx.flat().ids().iter().zip(corpus.passages()).all(|(a, p)| *a == p.id);
    if !same {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "index ids do not match the corpus (was the index built from another corpus?)"
        )));
    }
    Ok((idx, corpus))
}

fn check_dimensions(index: &dyn MipsIndex, encoder: &dyn Encoder) -> Result<(), CliError> {
    if index.dimension() != encoder.dimension() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "encoder dimension {} does not match index dimension {}",
            encoder.dimension(),
            index.dimension()
        )));
    }
    Ok(())
}

fn apply_ef_search(index: &mut VectorIndex, ef: Option<usize>) -> Result<(), CliError> {
    if let (VectorIndex::Hnsw(h), Some(ef)) = (index, ef) {
        if ef == 0 {
            return Err(usage("--ef-search must be at least 1"));
        }
        h.set_ef_search(ef);
    }
    Ok(())
}

fn beam_config(args: &BeamArgs, k_out: usize) -> Result<BeamConfig, CliError> {
    let beam = BeamConfig {
        hops: args.hops,
        beam_width: args.beam,
        k_out,
        candidates_per_hop: args.candidates,
        ..BeamConfig::default()
    };
    beam.validate().map_err(|e| usage(e.to_string()))?;
    Ok(beam)
}

/// Sorted, deduplicated k values; duplicates are reported, not rejected.
fn clean_k_list(ks: &[usize]) -> Result<Vec<usize>, CliError> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(usage("--k-list values must be positive"));
    }
    let set: BTreeSet<usize> = ks.iter().copied().collect();
    if set.len() != ks.len() {
        eprintln!("warning: duplicate values in --k-list removed");
    }
    Ok(set.into_iter().collect())
}

fn write_file(flag: &str, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes)
        .with_context(|| format!("{flag}: writing {}", path.display()))
        .map_err(CliError::Runtime)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        seed: cli.seed,
        verbose: cli.verbose,
    };
    match cli.command {
        Command::BuildIndex(a) => build_index(&ctx, a),
        Command::Search(a) => search(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::GenSynthetic(a) => gen_synthetic(&ctx, a),
    }
}

fn build_index(ctx: &Ctx, a: BuildIndexArgs) -> Result<(), CliError> {
    require_file("--corpus", &a.corpus)?;
    let params = HnswParams {
        m_links: a.m_links,
        ef_construction: a.ef_construction,
        seed: ctx.seed,
        ..HnswParams::default()
    };
    if a.hnsw {
        params.validate().map_err(|e| usage(e.to_string()))?;
    }
    let encoder = build_encoder(&a.encoder)?;
    let corpus = load_corpus(&a.corpus).with_context(|| format!("loading corpus {}", a.corpus.display()))?;
    ctx.note(format!("encoding {} passages with the {} encoder", corpus.len(), encoder.kind()));
    let vectors = encoder.encode_passages(corpus.passages()).context("encoding passages")?;
    let ids = corpus.passages().iter().map(|p| p.id.clone()).collect();
    let flat = FlatIndex::from_vectors(&vectors, ids).context("building flat index")?;
    let index = if a.hnsw {
        ctx.note("building HNSW graph");
        VectorIndex::Hnsw(HnswIndex::build(flat, params).context("building HNSW graph")?)
    } else {
        VectorIndex::Flat(flat)
    };
    save_index(&index, &a.out).with_context(|| format!("--out: writing {}", a.out.display()))?;
    eprintln!(
        "wrote {} index of {} passages (d={}) to {}",
        index.kind(),
        index.len(),
        index.dimension(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PassageRef<'a> {
    id: &'a str,
    title: &'a str,
}

#[derive(Serialize)]
struct ChainLine<'a> {
    rank: usize,
    total_score: f32,
    hop_scores: &'a [f32],
    passages: Vec<PassageRef<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rerank_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rerank_error: Option<&'a str>,
}

fn search(_ctx: &Ctx, a: SearchArgs) -> Result<(), CliError> {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    if a.query.trim().is_empty() {
        return Err(usage("--query must not be empty"));
    }
    let beam = beam_config(&a.beam, a.k)?;
    let scorer = build_scorer(&a.rerank, a.encoder.timeout_secs)?;
    let (mut index, corpus) = load_index_and_corpus(&a.index, &a.corpus)?;
    apply_ef_search(&mut index, a.beam.ef_search)?;
    let encoder = build_encoder(&a.encoder)?;
    check_dimensions(&index, &encoder)?;
    let mut chains = retrieve(&a.query, &corpus, &index, &encoder, &beam, None).context("retrieval failed")?;
    if let Some(s) = &scorer {
        chains = rerank(chains, s.as_ref(), &a.query, &corpus).context("reranking failed")?;
    }
    let mut out = String::new();
    if !a.json {
        out.push_str(&format!("{:<5} {:>12}  {:<24}  passages\n", "rank", "score", "hop scores"));
    }
    for (i, chain) in chains.iter().take(a.k).enumerate() {
        let passages = chain.resolve(&corpus).context("resolving chain")?;
        if a.json {
            let line = ChainLine {
                rank: i + 1,
                total_score: chain.total_score,
                hop_scores: &chain.hop_scores,
                passages: passages
                    .iter()
                    .map(|p| PassageRef {
                        id: &p.id,
                        title: &p.title,
                    })
                    .collect(),
                rerank_score: chain.rerank_score,
                rerank_error: chain.rerank_error.as_deref(),
            };
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        } else {
            let hops: Vec<String> = chain.hop_scores.iter().map(|s| format!("{s:.4}")).collect();
            let names: Vec<String> = passages.iter().map(|p| format!("{} ({})", p.id, p.title)).collect();
            let score = match chain.rerank_score {
                Some(r) => format!("{r:.4}"),
                None => format!("{:.4}", chain.total_score),
            };
            out.push_str(&format!(
                "{:<5} {:>12}  {:<24}  {}\n",
                i + 1,
                score,
                hops.join(", "),
                names.join(" -> ")
            ));
        }
    }
    print!("{out}");
    Ok(())
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> Result<(), CliError> {
    require_file("--data", &a.data)?;
    if let Some(c) = &a.corpus {
        require_file("--corpus", c)?;
    }
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        dimension: a.dim.unwrap_or(defaults.dimension),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        bank_epochs: a.bank_epochs.unwrap_or(defaults.bank_epochs),
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        patience: a.patience.unwrap_or(defaults.patience),
        seed: ctx.seed,
        shared_encoder: !a.no_shared,
        use_memory_bank: !a.no_bank,
        use_hard_negatives: !a.no_hard_negs,
        use_linked_negatives: !a.no_linked_negs,
        ordered: !a.unordered,
        ..defaults
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let examples = load_examples(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let corpus = match &a.corpus {
        Some(c) => Some(load_corpus(c).with_context(|| format!("loading corpus {}", c.display()))?),
        None => None,
    };
    ctx.note(format!("training on {} examples", examples.len()));
    let trained = train(&examples, corpus.as_ref(), &config).context("training failed")?;
    if ctx.verbose {
        for e in &trained.log.epochs {
            eprintln!(
                "epoch {:>3} phase {} train {:.4} held-out {:.4} R@2 {}",
                e.epoch,
                e.phase,
                e.train_loss,
                e.heldout_loss,
                e.heldout_r2.map_or("-".to_string(), |r| format!("{r:.4}"))
            );
        }
    }
    save_model(&trained.encoder, &a.out).with_context(|| format!("--out: writing {}", a.out.display()))?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.json");
        PathBuf::from(p)
    });
    let log_json = serde_json::to_string_pretty(&trained.log).expect("serializable") + "\n";
    write_file("--log", &log_path, log_json.as_bytes())?;
    let summary = serde_json::json!({
        "model": a.out.display().to_string(),
        "log": log_path.display().to_string(),
        "selected_epoch": trained.log.selected_epoch,
        "final_phase": trained.log.final_phase,
        "heldout_r2": trained.log.heldout_r2,
        "ordered": config.ordered,
    });
    println!("{summary}");
    Ok(())
}

fn eval_cmd(ctx: &Ctx, a: EvalArgs) -> Result<(), CliError> {
    require_file("--data", &a.data)?;
    let k_list = clean_k_list(&a.k_list)?;
    if let Some(&k) = k_list.iter().find(|&&k| k < a.beam.hops) {
        return Err(usage(format!("--k-list: k={k} is smaller than --hops {}", a.beam.hops)));
    }
    let beam = beam_config(&a.beam, BeamConfig::default().k_out)?;
    let scorer = build_scorer(&a.rerank, a.encoder.timeout_secs)?;
    let (mut index, corpus) = load_index_and_corpus(&a.index, &a.corpus)?;
    apply_ef_search(&mut index, a.beam.ef_search)?;
    let encoder = build_encoder(&a.encoder)?;
    check_dimensions(&index, &encoder)?;
    let records = load_eval_records(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    ctx.note(format!("evaluating {} questions", records.len()));
    let config = EvalConfig {
        k_list,
        beam,
        timing: a.timing,
        ..EvalConfig::default()
    };
    let report = evaluate(&records, &corpus, &index, &encoder, &config, scorer.as_deref(), None)
        .context("evaluation failed")?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(csv) = &a.csv {
        write_file("--csv", csv, report.to_csv().as_bytes())?;
    }
    println!("{}", report.to_json());
    Ok(())
}

fn bench(ctx: &Ctx, a: BenchArgs) -> Result<(), CliError> {
    require_file("--queries", &a.queries)?;
    let k_list = clean_k_list(&a.k_list)?;
    let base = BeamConfig {
        hops: a.hops,
        ..BeamConfig::default()
    };
    base.validate().map_err(|e| usage(e.to_string()))?;
    let (mut index, corpus) = load_index_and_corpus(&a.index, &a.corpus)?;
    apply_ef_search(&mut index, a.ef_search)?;
    let encoder = build_encoder(&a.encoder)?;
    check_dimensions(&index, &encoder)?;
    let queries: Vec<EvalRecord> = read_jsonl(&a.queries)
        .with_context(|| format!("loading {}", a.queries.display()))?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    ctx.note(format!("timing {} queries at k = {k_list:?}", queries.len()));
    let rows = bench_latency(&corpus, &index, &encoder, &queries, &k_list, &base).context("benchmark failed")?;
    print!("{}", bench_to_csv(&rows));
    Ok(())
}

fn gen_synthetic(ctx: &Ctx, a: GenSyntheticArgs) -> Result<(), CliError> {
    let task = generate_synthetic_task(a.entities, a.relations, ctx.seed).map_err(|e| usage(e.to_string()))?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("--out-dir: creating {}", a.out_dir.display()))?;
    let corpus_path = a.out_dir.join("corpus.jsonl");
    let train_path = a.out_dir.join("train.jsonl");
    let dev_path = a.out_dir.join("dev.jsonl");
    write_file("--out-dir", &corpus_path, to_jsonl(task.corpus.passages()).as_bytes())?;
    write_file("--out-dir", &train_path, to_jsonl(&task.train).as_bytes())?;
    write_file("--out-dir", &dev_path, to_jsonl(&task.dev).as_bytes())?;
    let summary = serde_json::json!({
        "corpus": corpus_path.display().to_string(),
        "train": train_path.display().to_string(),
        "dev": dev_path.display().to_string(),
        "passages": task.corpus.len(),
        "train_examples": task.train.len(),
        "dev_questions": task.dev.len(),
    });
    println!("{summary}");
    Ok(())
}
