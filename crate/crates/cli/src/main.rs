//! `worldmem`: operate a store, run the memory server, and drive the
//! benchmarks and fuzz harness. Every report is JSON on stdout.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "worldmem", version, about = "Content-addressed world graph for agent memory")]
pub struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "WORLDMEM_STORE")]
    pub store: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Create an empty store.
    Init {
        /// Embedding dimension, fixed for the life of the store.
        #[arg(long, default_value_t = 64)]
        dim: usize,
    },
    /// Ingest extractions from a JSON file (one object or an array).
    Ingest { file: PathBuf },
    /// Run a pipeline query, e.g. `seed ab12 | traverse contains out *`.
    Query {
        pipeline: String,
        /// Evaluate as of this instant (microseconds) instead of now.
        #[arg(long)]
        at: Option<i64>,
    },
    /// Fused retrieval over the lexical, vector, and entity lanes.
    Recall(RecallArgs),
    /// Resolve a name against stored entities.
    Resolve {
        name: String,
        #[arg(long = "type", default_value = "Entity")]
        node_type: String,
        #[arg(long)]
        alias: Vec<String>,
    },
    /// Inspect and decide merge proposals.
    #[command(subcommand)]
    Merges(MergesCommand),
    /// Run the consolidator or its summary-first benchmark.
    #[command(subcommand)]
    Consolidate(ConsolidateCommand),
    /// Vector index maintenance.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Serve the memory tools.
    Serve {
        #[arg(long, value_enum, default_value_t = Transport::Stdio)]
        transport: Transport,
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: SocketAddr,
    },
    /// Benchmark drivers. These use their own scratch stores.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Randomized reconciler workload with invariant checks.
    Fuzz {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        ops: usize,
        #[arg(long, default_value_t = 100)]
        check_every: usize,
    },
    /// Reproducible scenarios with hand-derived answers.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Composition experiments.
    #[command(subcommand)]
    Compose(ComposeCommand),
}

#[derive(Args, Debug)]
pub struct RecallArgs {
    pub question: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Node types searched by the lexical and vector lanes.
    #[arg(long, value_delimiter = ',', default_values_t = ["Turn".to_string(), "Summary".to_string()])]
    pub types: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = ["bm25".to_string(), "vector".to_string(), "entity".to_string()])]
    pub lanes: Vec<String>,
    #[arg(long)]
    pub include_retired: bool,
}

#[derive(Subcommand, Debug)]
pub enum MergesCommand {
    List {
        #[arg(long)]
        status: Option<String>,
    },
    Accept { id: String },
    Reject { id: String },
}

#[derive(Subcommand, Debug)]
pub enum ConsolidateCommand {
    Run {
        #[arg(long, default_value_t = 3600)]
        min_age_secs: u64,
    },
    Bench {
        #[arg(long, default_value_t = 1000)]
        facts: usize,
        #[arg(long, default_value_t = 100)]
        topics: usize,
        #[arg(long, default_value_t = 9)]
        runs: usize,
    },
}

#[derive(Subcommand, Debug)]
pub enum IndexCommand {
    Rebuild {
        /// Insert sequentially instead of in parallel.
        #[arg(long)]
        serial: bool,
    },
    Stats,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Transport {
    Stdio,
    Http,
}

#[derive(Args, Debug, Clone)]
pub struct Scale {
    #[arg(long, default_value_t = 100_000)]
    pub nodes: usize,
    #[arg(long, default_value_t = 250_000)]
    pub edges: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// One million nodes and 2.5 million edges.
    #[arg(long)]
    pub full_scale: bool,
}

#[derive(Subcommand, Debug)]
pub enum BenchCommand {
    /// Bulk load a synthetic graph in one transaction.
    Load {
        #[command(flatten)]
        scale: Scale,
        /// Build the ANN index incrementally during the load.
        #[arg(long)]
        no_defer: bool,
        /// Scratch directory for an on-disk load; in memory otherwise.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Load, then time the read shapes against the P95 gate.
    Read {
        #[command(flatten)]
        scale: Scale,
        #[arg(long, default_value_t = 100)]
        probes: usize,
    },
    /// ANN against an exact scan.
    Ann {
        #[arg(long, default_value_t = 10_000)]
        records: usize,
        #[arg(long, default_value_t = 200)]
        probes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Subcommand, Debug)]
pub enum ScenarioCommand {
    Multihop,
    /// Ten stub sessions and twenty set-membership questions.
    E2e,
}

#[derive(Subcommand, Debug)]
pub enum ComposeCommand {
    Study {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
