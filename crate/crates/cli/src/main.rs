use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod report;

use config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "noir", version, about = "Score summaries by meaning kept per unit of compression")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Plain-text `key = value` file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for tables, plots and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `file:<vectors.tsv>` or an HTTP base URL (falls back to NOIR_EMBED_URL).
    #[arg(long, global = true)]
    embedder: Option<String>,
    /// Token counting strategy: whitespace, chars4 or bpe.
    #[arg(long, global = true)]
    tokens: Option<String>,
    /// BPE merges file for `--tokens bpe`.
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    /// Similarity floor.
    #[arg(long = "epsilon-d", global = true)]
    epsilon_d: Option<f64>,
    /// Saturation cap on |score|.
    #[arg(long = "m-cap", global = true)]
    m_cap: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score one summary against one text; prints a single-row table.
    Score {
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        summary: PathBuf,
    },
    /// Score every document-summary pair in a corpus.
    Batch {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Anchor::Immediate)]
        anchor: Anchor,
    },
    /// Score randomly mismatched text-summary pairs.
    Nullbase {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 1368)]
        trials: usize,
    },
    /// Distribution fits, separation and length trend for scored tables.
    Analyze {
        #[arg(long = "true")]
        true_table: PathBuf,
        #[arg(long = "null")]
        null_table: Option<PathBuf>,
        #[arg(long, default_value_t = noir_core::stats::DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
    },
    /// Separation of true from null scores as the exponent on ln(ratio) varies.
    SweepP {
        #[arg(long = "true")]
        true_table: PathBuf,
        #[arg(long = "null")]
        null_table: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        #[arg(long, default_value_t = 2.0)]
        stop: f64,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
    },
    /// Per-dimension correlation of embeddings with text length.
    CorrLength {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = LengthMeasure::Raw)]
        length: LengthMeasure,
    },
    /// Fit exp(-beta x) to cos(sqrt x) down to a similarity floor.
    ExpcosFit {
        #[arg(long, default_value_t = 0.2)]
        floor: f64,
        #[arg(long, default_value_t = noir_core::stats::MIN_EXPCOS_GRID)]
        grid: usize,
    },
    /// Mean similarity per compression bin (use root-anchored tables).
    Curve {
        #[arg(long)]
        scored: PathBuf,
        #[arg(long, value_enum, default_value_t = BinSet::Halving)]
        bins: BinSet,
    },
    /// Pick pairs near score percentiles in each compression bin for human review.
    Bundle {
        #[arg(long)]
        scored: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [10.0, 50.0, 90.0])]
        percentiles: Vec<f64>,
        #[arg(long, value_enum, default_value_t = BinSet::Human)]
        bins: BinSet,
        /// Two-column `item,rank` file (rank 1 = best) to correlate with the bundle.
        #[arg(long = "human-ranks")]
        human_ranks: Option<PathBuf>,
    },
    /// Check that unrelated texts embed to near-orthogonal vectors.
    AuditEmbedder {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = noir_core::embedding::DEFAULT_SUITABILITY_THRESHOLD)]
        threshold: f64,
        /// Tab-separated pairs of texts that should embed close together.
        #[arg(long)]
        paraphrases: Option<PathBuf>,
    },
    /// Run the HTTP scoring service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Default minimum score for /v1/filter.
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Anchor {
    Immediate,
    Root,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum LengthMeasure {
    Raw,
    Normalized,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum BinSet {
    Halving,
    Human,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Score { .. } => "score",
            Command::Batch { .. } => "batch",
            Command::Nullbase { .. } => "nullbase",
            Command::Analyze { .. } => "analyze",
            Command::SweepP { .. } => "sweep-p",
            Command::CorrLength { .. } => "corr-length",
            Command::ExpcosFit { .. } => "expcos-fit",
            Command::Curve { .. } => "curve",
            Command::Bundle { .. } => "bundle",
            Command::AuditEmbedder { .. } => "audit-embedder",
            Command::Serve { .. } => "serve",
        }
    }

    fn corpus(&self) -> Option<PathBuf> {
        match self {
            Command::Batch { corpus, .. }
            | Command::Nullbase { corpus, .. }
            | Command::CorrLength { corpus, .. }
            | Command::AuditEmbedder { corpus, .. } => corpus.clone(),
            _ => None,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = cli.global;
    let overrides = Overrides {
        config: g.config,
        corpus: cli.command.corpus(),
        embedder: g.embedder,
        tokens: g.tokens,
        vocab: g.vocab,
        epsilon_d: g.epsilon_d,
        m_cap: g.m_cap,
        seed: g.seed,
        out: g.out,
        sequential: g.sequential,
    };
    let cfg = match RunConfig::resolve(&overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match commands::run(&cfg, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
