use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mdr", version, about = "Multi-hop dense retrieval toolkit")]
pub struct Cli {
    /// Seed for every stochastic step (HNSW levels, training, synthetic data).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// TOML or JSON file whose keys are long flag names; flags on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a corpus and write a flat or HNSW index file.
    BuildIndex(BuildIndexArgs),
    /// Retrieve passage chains for one question.
    Search(SearchArgs),
    /// Train a linear encoder on JSONL training examples.
    Train(TrainArgs),
    /// Evaluate retrieval on JSONL records and print a metrics report.
    Eval(EvalArgs),
    /// Measure per-query latency for several k.
    Bench(BenchArgs),
    /// Write a generated 2-hop corpus with train and dev splits.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EncoderArgs {
    /// Trained model file; overrides --encoder.
    #[arg(long, value_name = "PATH", conflicts_with = "encoder")]
    pub model: Option<PathBuf>,
    /// `hashed` or `remote:URL`.
    #[arg(long)]
    pub encoder: Option<String>,
    /// Dimension of the hashed encoder, or the expected remote dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
    /// Timeout for remote encoder and scorer requests.
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BeamArgs {
    #[arg(long, default_value_t = 2)]
    pub hops: usize,
    /// Partial chains kept between hops.
    #[arg(long, default_value_t = 10)]
    pub beam: usize,
    /// MIPS hits requested per beam and hop (defaults to the beam width).
    #[arg(long)]
    pub candidates: Option<usize>,
    /// HNSW search breadth (ignored for flat indexes).
    #[arg(long)]
    pub ef_search: Option<usize>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct BuildIndexArgs {
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Build an HNSW graph instead of a flat index.
    #[arg(long)]
    pub hnsw: bool,
    #[arg(long, default_value_t = 16)]
    pub m_links: usize,
    #[arg(long, default_value_t = 200)]
    pub ef_construction: usize,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SearchArgs {
    #[arg(long, value_name = "PATH")]
    pub index: PathBuf,
    /// Corpus the index was built from (for titles and texts).
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[arg(long)]
    pub query: String,
    #[command(flatten)]
    pub beam: BeamArgs,
    /// Chains to print.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// `none`, `lexical` or `remote:URL`.
    #[arg(long, default_value = "none")]
    pub rerank: String,
    /// One JSON object per chain instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Training examples (JSONL).
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Retrieval corpus for hard-negative mining and held-out R@2.
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Training log path (defaults to `<out>.log.json`).
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub bank_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Separate query and passage weights from the start.
    #[arg(long)]
    pub no_shared: bool,
    /// Skip the frozen-passage memory-bank phase.
    #[arg(long)]
    pub no_bank: bool,
    #[arg(long)]
    pub no_hard_negs: bool,
    /// Do not follow passage links when mining hard negatives.
    #[arg(long)]
    pub no_linked_negs: bool,
    /// Shuffle the positives of each example instead of ordering them.
    #[arg(long)]
    pub unordered: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub index: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Evaluation records (JSONL).
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,10,20")]
    pub k_list: Vec<usize>,
    #[command(flatten)]
    pub beam: BeamArgs,
    #[arg(long, default_value = "none")]
    pub rerank: String,
    /// Also write the report as CSV.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Record per-question latency (questions run one at a time).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    #[arg(long, value_name = "PATH")]
    pub index: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Query records (JSONL, same shape as eval data; gold ids optional).
    #[arg(long, value_name = "PATH")]
    pub queries: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
    pub k_list: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub hops: usize,
    #[arg(long)]
    pub ef_search: Option<usize>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenSyntheticArgs {
    #[arg(long, default_value_t = 200)]
    pub entities: usize,
    #[arg(long, default_value_t = 5)]
    pub relations: usize,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}
