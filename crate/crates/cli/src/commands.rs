use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use worldmem_bench::load::{ann_vs_brute, bench_load, bench_read, LoadConfig, P95_GATE_MS};
use worldmem_bench::{e2e, fuzz, scenario, summary};
use worldmem_core::composer::{run_compose_study, StudyParams};
use worldmem_core::consolidator::ConsolidatorConfig;
use worldmem_core::embed::{Embedder, HashingEmbedder};
use worldmem_core::fusion::{Lane, LaneFilter, RetrieveOptions};
use worldmem_core::query::parse_pipeline;
use worldmem_core::store::journal::read_meta;
use worldmem_core::{
    Candidate, Engine, EngineConfig, Extraction, MemoryService, NodeType, ProposalStatus, ReclusterMode, Timestamp,
};
use worldmem_mcp::{http, stdio, McpServer};

use crate::{BenchCommand, Cli, Command, ComposeCommand, ConsolidateCommand, IndexCommand, MergesCommand, Scale, ScenarioCommand, Transport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Engine(#[from] worldmem_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no store given; pass --store or set WORLDMEM_STORE")]
    NoStore,
    #[error("{0} is not a store; run `worldmem init` first")]
    NotInitialized(PathBuf),
    #[error("{0} already holds a store")]
    AlreadyInitialized(PathBuf),
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn emit(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn store_dir(cli_store: &Option<PathBuf>) -> Result<&Path> {
    cli_store.as_deref().ok_or(CliError::NoStore)
}

fn config(dim: usize) -> EngineConfig {
    EngineConfig::new(dim).recluster(ReclusterMode::Inline)
}

fn open(dir: &Path) -> Result<Engine> {
    let meta = read_meta(dir)?.ok_or_else(|| CliError::NotInitialized(dir.to_path_buf()))?;
    Ok(Engine::open(dir, config(meta.dim))?)
}

fn scale(s: &Scale) -> (usize, usize) {
    if s.full_scale {
        (1_000_000, 2_500_000)
    } else {
        (s.nodes, s.edges)
    }
}

fn proposal_status(s: &str) -> Result<ProposalStatus> {
    match s {
        "pending" => Ok(ProposalStatus::Pending),
        "accepted" => Ok(ProposalStatus::Accepted),
        "rejected" => Ok(ProposalStatus::Rejected),
        other => Err(CliError::Usage(format!("unknown proposal status {other:?}"))),
    }
}

/// Ok(false) means the command ran but its check failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Init { dim } => {
            let dir = store_dir(&cli.store)?;
            if read_meta(dir)?.is_some() {
                return Err(CliError::AlreadyInitialized(dir.to_path_buf()));
            }
            if dim == 0 {
                return Err(CliError::Usage("dimension must be positive".into()));
            }
            Engine::open(dir, config(dim))?;
            emit(&json!({"store": dir, "dim": dim}))?;
        }
        Command::Ingest { file } => {
            let engine = open(store_dir(&cli.store)?)?;
            let raw: Value = serde_json::from_slice(&std::fs::read(file)?)?;
            let batch: Vec<Extraction> = match raw {
                Value::Array(_) => serde_json::from_value(raw)?,
                other => vec![serde_json::from_value(other)?],
            };
            let reports = batch.into_iter().map(|ex| engine.ingest(ex)).collect::<worldmem_core::Result<Vec<_>>>()?;
            emit(&reports)?;
        }
        Command::Query { pipeline, at } => {
            let engine = open(store_dir(&cli.store)?)?;
            let q = parse_pipeline(&pipeline, &|s| engine.resolve_prefix(s))?;
            let g = match at {
                Some(us) => engine.execute_at(&q, Timestamp::from_micros(us))?,
                None => engine.execute(&q)?,
            };
            emit(&g)?;
        }
        Command::Recall(args) => {
            let engine = open(store_dir(&cli.store)?)?;
            let lanes = args.lanes.iter().map(|l| l.parse::<Lane>()).collect::<worldmem_core::Result<Vec<_>>>()?;
            let qvec = lanes
                .contains(&Lane::Vector)
                .then(|| HashingEmbedder::new(engine.config().dim).embed(&args.question))
                .flatten();
            let opts = RetrieveOptions { k_per_lane: args.k, top: args.k, lanes, ..RetrieveOptions::default() };
            let filter = LaneFilter::new(engine.now())
                .types(args.types.iter().map(|t| NodeType::new(t.clone())))
                .include_retired(args.include_retired);
            let fused = engine.retrieve(&args.question, qvec.as_deref(), &opts, &filter)?;
            let hits: Vec<Value> = fused
                .entries
                .iter()
                .map(|e| {
                    let node = engine.get_node(&e.id, false).ok();
                    json!({
                        "id": e.id,
                        "score": e.score,
                        "lanes": e.lanes,
                        "type": node.as_ref().map(|n| n.node_type.clone()),
                        "name": node.as_ref().map(|n| n.name.clone()),
                        "content": node.as_ref().map(|n| n.content.clone()),
                    })
                })
                .collect();
            emit(&hits)?;
        }
        Command::Resolve { name, node_type, alias } => {
            let engine = open(store_dir(&cli.store)?)?;
            let mut cand = Candidate::new(NodeType::new(node_type), name);
            cand.aliases = alias;
            emit(&engine.resolve(&cand)?)?;
        }
        Command::Merges(cmd) => {
            let engine = open(store_dir(&cli.store)?)?;
            match cmd {
                MergesCommand::List { status } => {
                    let status = status.as_deref().map(proposal_status).transpose()?;
                    emit(&engine.proposals(status))?;
                }
                MergesCommand::Accept { id } => emit(&engine.accept_merge(engine.resolve_prefix(&id)?)?)?,
                MergesCommand::Reject { id } => emit(&engine.reject_merge(engine.resolve_prefix(&id)?)?)?,
            }
        }
        Command::Consolidate(ConsolidateCommand::Run { min_age_secs }) => {
            let engine = open(store_dir(&cli.store)?)?;
            emit(&engine.consolidate(&ConsolidatorConfig { min_age_secs, ..ConsolidatorConfig::default() })?)?;
        }
        Command::Consolidate(ConsolidateCommand::Bench { facts, topics, runs }) => {
            emit(&summary::summary_speed_bench(facts, topics, runs)?)?;
        }
        Command::Index(cmd) => {
            let engine = open(store_dir(&cli.store)?)?;
            match cmd {
                IndexCommand::Rebuild { serial } => emit(&engine.rebuild_index(!serial)?)?,
                IndexCommand::Stats => emit(&engine.index_stats())?,
            }
        }
        Command::Serve { transport, addr } => {
            let engine = open(store_dir(&cli.store)?)?;
            let server = McpServer::new(MemoryService::new(engine));
            match transport {
                Transport::Stdio => stdio::serve_process(&server)?,
                Transport::Http => {
                    log::info!("serving on http://{addr}{}", http::ENDPOINT);
                    tokio::runtime::Runtime::new()?.block_on(http::serve(server, addr))?;
                }
            }
        }
        Command::Bench(BenchCommand::Load { scale: s, no_defer, dir }) => {
            let (n_nodes, n_edges) = scale(&s);
            let cfg = LoadConfig { n_nodes, n_edges, seed: s.seed, defer_ann: !no_defer, dir };
            let (_, report) = bench_load(&cfg)?;
            emit(&report)?;
        }
        Command::Bench(BenchCommand::Read { scale: s, probes }) => {
            let (n_nodes, n_edges) = scale(&s);
            let cfg = LoadConfig { n_nodes, n_edges, seed: s.seed, ..LoadConfig::default() };
            let (engine, load) = bench_load(&cfg)?;
            let read = bench_read(&engine, probes, s.seed)?;
            let pass = read.all_under(P95_GATE_MS);
            emit(&json!({"load": load, "read": read, "p95_gate_ms": P95_GATE_MS, "pass": pass}))?;
            return Ok(pass);
        }
        Command::Bench(BenchCommand::Ann { records, probes, seed }) => {
            emit(&ann_vs_brute(records, probes, seed)?)?;
        }
        Command::Fuzz { seed, ops, check_every } => {
            let report = fuzz::run_fuzz(fuzz::FuzzConfig { check_every, ..fuzz::FuzzConfig::new(seed, ops) });
            let clean = report.violations.is_empty();
            emit(&report)?;
            return Ok(clean);
        }
        Command::Scenario(ScenarioCommand::Multihop) => {
            let report = scenario::scenario_multihop()?;
            let queries: Vec<Value> = report
                .queries
                .iter()
                .map(|q| {
                    let missing: Vec<&String> = q.expected.difference(&q.got).collect();
                    let unexpected: Vec<&String> = q.got.difference(&q.expected).collect();
                    json!({"name": q.name, "pass": q.pass, "expected": q.expected, "got": q.got, "missing": missing, "unexpected": unexpected})
                })
                .collect();
            emit(&json!({"queries": queries, "pass": report.all_pass()}))?;
            return Ok(report.all_pass());
        }
        Command::Scenario(ScenarioCommand::E2e) => {
            let report = e2e::run_e2e()?;
            let pass = report.correct() == report.answers.len();
            emit(&report)?;
            return Ok(pass);
        }
        Command::Compose(ComposeCommand::Study { seed }) => {
            emit(&run_compose_study(seed, StudyParams::default()))?;
        }
    }
    Ok(true)
}
