use worldmem_bench::fuzz::{run_fuzz, FuzzConfig, Fuzzer, OpKind};
use worldmem_core::{EdgeDraft, EdgeType, NodeType};

#[test]
fn both_seeds_run_two_thousand_ops_without_violations() {
    for seed in [1, 2] {
        let r = run_fuzz(FuzzConfig::new(seed, 2000));
        assert_eq!(r.ops, 2000);
        assert_eq!(r.checks, 20);
        assert!(r.violations.is_empty(), "seed {seed}: {:#?}", r.violations);
        for kind in OpKind::ALL {
            let (ok, _) = r.outcomes.get(&kind).copied().unwrap_or_default();
            assert!(ok > 0, "seed {seed}: {kind:?} never succeeded");
        }
    }
}

#[test]
fn equal_seeds_replay_identically() {
    let a = run_fuzz(FuzzConfig::new(9, 300));
    let b = run_fuzz(FuzzConfig::new(9, 300));
    let c = run_fuzz(FuzzConfig::new(10, 300));
    assert_eq!(a, b);
    assert_ne!(a.trace_digest, c.trace_digest);
}

#[test]
fn a_supersession_that_bypasses_its_handler_is_caught() {
    let mut f = Fuzzer::new(FuzzConfig::new(4, 200));
    for _ in 0..200 {
        f.step();
    }
    assert!(f.check().is_empty());
    let (a, b) = f.engine().read(|st| {
        let facts = st.of_type(&NodeType::FACT);
        let live: Vec<_> = facts.iter().filter(|h| st.row(h).unwrap().t_valid.to.is_none()).copied().collect();
        (live[0], live[1])
    });
    f.engine().transact(|tx| tx.raw_append_edge(EdgeDraft::new(EdgeType::SUPERSEDES, a, b))).unwrap();
    let found: Vec<String> = f.check().into_iter().map(|v| v.invariant).collect();
    assert!(found.contains(&"never_appends".to_string()), "{found:?}");
    assert!(found.contains(&"supersession_closes_target".to_string()), "{found:?}");
}
