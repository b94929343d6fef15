use std::collections::BTreeSet;

use worldmem_bench::e2e::run_e2e;
use worldmem_bench::fuzz::{run_fuzz, FuzzConfig};
use worldmem_bench::load::{bench_load, bench_read, LoadConfig, P95_GATE_MS};
use worldmem_bench::scenario::scenario_multihop;
use worldmem_bench::summary::summary_speed_bench;

use crate::{ensure, Outcome};

fn set(labels: &[&str]) -> BTreeSet<String> {
    labels.iter().map(|s| s.to_string()).collect()
}

pub fn reconciler_fuzz() -> Outcome {
    let mut summary = Vec::new();
    for seed in [1, 2] {
        let r = run_fuzz(FuzzConfig::new(seed, 2000));
        ensure!(r.ops == 2000 && r.checks == 20, "seed {seed}: {} ops, {} checks", r.ops, r.checks);
        ensure!(r.violations.is_empty(), "seed {seed}: {} violations, first {:?}", r.violations.len(), r.violations[0]);
        summary.push(format!("seed {seed}: {} nodes {} edges", r.nodes, r.edges));
    }
    Ok(format!("0 violations; {}", summary.join(", ")))
}

pub fn summary_first() -> Outcome {
    let r = summary_speed_bench(1000, 100, 9).map_err(|e| e.to_string())?;
    let detail = format!(
        "summary-first {:.2}ms vs full {:.2}ms, {:.1}x ({} vs {} nodes)",
        r.summary_first_ms, r.full_detail_ms, r.ratio, r.summary_nodes_returned, r.full_nodes_returned
    );
    ensure!(r.facts == 1000 && r.topics == 100 && r.runs == 9, "{detail}: wrong fixture shape");
    ensure!(r.same_topics, "{detail}: topic coverage differs");
    ensure!(r.details_reachable, "{detail}: a detail is unreachable from its summary");
    ensure!(r.ratio >= 3.0, "{detail}: below 3x");
    Ok(detail)
}

pub fn multihop() -> Outcome {
    let expected = [
        ("current metric value", set(&["m3"])),
        ("metric history", set(&["m1", "m2", "m3"])),
        ("state as of mid first quarter", set(&["m1", "d1"])),
        ("decisions that reversed the first-quarter price cut", set(&["d2", "d3"])),
        ("decisions behind the current metric", set(&["d4"])),
        ("second-quarter interior during the quarter", set(&["era_q2", "m2", "d2"])),
    ];
    let r = scenario_multihop().map_err(|e| e.to_string())?;
    ensure!(r.queries.len() == expected.len(), "{} queries ran", r.queries.len());
    for (q, (name, want)) in r.queries.iter().zip(&expected) {
        ensure!(q.name == *name, "query order changed at {name}");
        ensure!(q.got == *want, "{name}: got {:?}, expected {:?}", q.got, want);
    }
    Ok("6 of 6 exact sets".into())
}

pub fn desk_scale() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = LoadConfig { dir: Some(dir.path().to_path_buf()), ..LoadConfig::default() };
    let (engine, load) = bench_load(&cfg).map_err(|e| e.to_string())?;
    ensure!(load.nodes == 100_000, "loaded {} nodes", load.nodes);
    ensure!(load.edges > 249_000, "loaded {} distinct edges", load.edges);
    let reads = bench_read(&engine, 300, 11).map_err(|e| e.to_string())?;
    let shapes: Vec<String> = reads
        .shapes
        .iter()
        .map(|s| {
            format!(
                "{} p50 {:.2}ms p95 {:.2}ms (reference p95 {}ms)",
                s.shape, s.latency.p50_ms, s.latency.p95_ms, s.reference_p95_ms
            )
        })
        .collect();
    let detail = format!(
        "load {:.1}s ({:.0} writes/s, index {:.1}s); {}",
        load.load_secs,
        load.writes_per_sec,
        load.rebuild_secs,
        shapes.join("; ")
    );
    ensure!(reads.shapes.len() == 3, "{detail}: missing shapes");
    ensure!(reads.all_under(P95_GATE_MS), "{detail}: a P95 reached {P95_GATE_MS}ms");
    Ok(detail)
}

pub fn stub_e2e() -> Outcome {
    let expected: [&[&str]; 20] = [
        &["T1"],
        &["T2", "T4"],
        &["T2", "T4"],
        &["T4"],
        &["T3"],
        &["T5"],
        &["T6"],
        &["T7"],
        &["T6", "T8", "T10"],
        &["T8", "T10"],
        &["T9"],
        &["T7", "T10"],
        &["T5", "T9"],
        &["T1", "T3", "T5", "T6"],
        &["F3", "F5", "F6"],
        &["F1", "F3", "F5", "F6"],
        &["F4"],
        &["F6", "F8", "F10"],
        &["F5", "F9"],
        &["F7"],
    ];
    let r = run_e2e().map_err(|e| e.to_string())?;
    ensure!(r.sessions == 10 && r.answers.len() == 20, "{} sessions, {} answers", r.sessions, r.answers.len());
    for (a, want) in r.answers.iter().zip(expected) {
        ensure!(a.got == set(want), "{:?}: got {:?}, expected {:?}", a.question, a.got, want);
    }
    Ok("10 sessions, 20 of 20 exact sets".into())
}
