//! Runs every acceptance criterion in sequence and prints one line per
//! criterion. Exits non-zero when any criterion fails.

mod compose;
mod graph;
mod resolve;
mod retrieval;
mod service;
mod workloads;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// `Ok` carries a short summary of the measured values.
pub type Outcome = Result<String, String>;

#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

const fn criterion(name: &'static str, budget_secs: u64, run: fn() -> Outcome) -> Criterion {
    Criterion { name, budget: Duration::from_secs(budget_secs), run }
}

const CRITERIA: &[Criterion] = &[
    criterion("edit propagation", 10, graph::edit_propagation),
    criterion("reconciler fuzz", 120, workloads::reconciler_fuzz),
    criterion("handler semantics", 5, graph::handler_semantics),
    criterion("resolver thresholds", 5, resolve::thresholds),
    criterion("ann quality and speed", 120, retrieval::ann),
    criterion("composer study", 60, compose::study),
    criterion("incremental compose", 30, compose::incremental),
    criterion("summary-first speedup", 120, workloads::summary_first),
    criterion("rrf arithmetic", 10, retrieval::rrf),
    criterion("multi-hop scenario", 10, workloads::multihop),
    criterion("desk-scale benchmark", 900, workloads::desk_scale),
    criterion("service conformance", 60, service::conformance),
    criterion("stub end-to-end", 10, workloads::stub_e2e),
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > c.budget => {
                Err(format!("{detail}; took {:.1}s, budget {}s", took.as_secs_f64(), c.budget.as_secs()))
            }
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS {:<24} {:>7.2}s  {detail}", c.name, took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {:<24} {:>7.2}s  {why}", c.name, took.as_secs_f64());
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
