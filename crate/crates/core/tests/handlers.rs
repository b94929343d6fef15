mod common;

use std::sync::Arc;

use common::{engine, secs};
use worldmem_core::handlers::{ClosePriorEdges, EdgeHandler};
use worldmem_core::query::{Direction, Op, Query};
use worldmem_core::store::Txn;
use worldmem_core::{
    Edge, EdgeDraft, EdgeType, Engine, Error, Hash, NodeDraft, NodeType, ProposalStatus, Timestamp, ValidityInterval,
};

fn fact(engine: &Engine, name: &str, from: i64) -> Hash {
    engine
        .put_node(NodeDraft::new(NodeType::FACT, name, name).created_at(secs(from)).valid(ValidityInterval::open(secs(from))))
        .unwrap()
        .id
}

fn entity(engine: &Engine, name: &str) -> Hash {
    engine.put_node(NodeDraft::new(NodeType::ENTITY, name, "").created_at(secs(0))).unwrap().id
}

fn valid_to(engine: &Engine, h: Hash) -> Option<Timestamp> {
    engine.get_node(&h, false).unwrap().t_valid.to
}

#[test]
fn supersedes_closes_target_at_edge_from() {
    let (e, _) = engine(4);
    let old = fact(&e, "rev 10M", 10);
    let new = fact(&e, "rev 12M", 20);
    let out = e.write_edge(EdgeDraft::new(EdgeType::SUPERSEDES, new, old).valid_from(secs(20))).unwrap();
    assert_eq!(valid_to(&e, old), Some(secs(20)));
    assert_eq!(out.validity_closures, vec![(old, secs(20))]);
    assert_eq!(valid_to(&e, new), None);
}

#[test]
fn supersedes_only_tightens() {
    let (e, _) = engine(4);
    let old = fact(&e, "a", 10);
    let b = fact(&e, "b", 20);
    let c = fact(&e, "c", 30);
    let d = fact(&e, "d", 15);
    e.write_edge(EdgeDraft::new(EdgeType::SUPERSEDES, b, old).valid_from(secs(20))).unwrap();
    // Later supersession leaves the earlier close in place.
    let later = e.write_edge(EdgeDraft::new(EdgeType::SUPERSEDES, c, old).valid_from(secs(30))).unwrap();
    assert_eq!(valid_to(&e, old), Some(secs(20)));
    assert!(later.validity_closures.is_empty());
    // Earlier supersession tightens further.
    e.write_edge(EdgeDraft::new(EdgeType::SUPERSEDES, d, old).valid_from(secs(15))).unwrap();
    assert_eq!(valid_to(&e, old), Some(secs(15)));
    // Explicit close after the current bound is a no-op.
    assert_eq!(e.close_validity(old, secs(40)).unwrap().to, Some(secs(15)));
}

#[test]
fn supersedes_before_target_validity_is_refused_and_nothing_lands() {
    let (e, _) = engine(4);
    let old = fact(&e, "a", 10);
    let new = fact(&e, "b", 20);
    let edges = e.edge_count();
    let dispatches = e.handler_dispatches();
    let err = e.write_edge(EdgeDraft::new(EdgeType::SUPERSEDES, new, old).valid_from(secs(5))).unwrap_err();
    assert!(matches!(err, Error::HandlerRefused { .. }));
    assert_eq!(e.edge_count(), edges);
    assert_eq!(e.handler_dispatches(), dispatches);
    assert_eq!(valid_to(&e, old), None);
}

#[test]
fn self_supersession_is_refused() {
    let (e, _) = engine(4);
    let a = fact(&e, "a", 10);
    assert!(matches!(
        e.write_edge(EdgeDraft::new(EdgeType::SUPERSEDES, a, a).valid_from(secs(11))),
        Err(Error::HandlerRefused { .. })
    ));
}

#[test]
fn close_before_from_errors() {
    let (e, _) = engine(4);
    let a = fact(&e, "a", 10);
    assert!(matches!(e.close_validity(a, secs(9)), Err(Error::BeforeValidFrom { .. })));
}

#[test]
fn superseded_node_hidden_by_default_and_visible_on_request() {
    let (e, clock) = engine(4);
    let old = fact(&e, "a", 10);
    let new = fact(&e, "b", 20);
    let world = e.put_node(NodeDraft::new(NodeType::TOPIC, "w", "").children([old, new]).created_at(secs(0))).unwrap().id;
    e.write_edge(EdgeDraft::new(EdgeType::SUPERSEDES, new, old).valid_from(secs(20))).unwrap();
    clock.set(secs(100));
    let q = Query::seeds([world]).op(Op::traverse(EdgeType::CONTAINS, Direction::Outgoing, 1));
    let ids = e.execute(&q).unwrap().ids();
    assert!(ids.contains(&new) && !ids.contains(&old));
    let ids = e.execute(&q.clone().op(Op::IncludeSuperseded)).unwrap().ids();
    assert!(ids.contains(&new) && ids.contains(&old));
    // The closed interval is intact on the historical node.
    let n = e.get_node(&old, true).unwrap();
    assert_eq!(n.t_valid, ValidityInterval::closed(secs(10), secs(20)).unwrap());
}

#[test]
fn contradicts_preserves_both_sides_and_flags_them() {
    let (e, _) = engine(4);
    let x = fact(&e, "revenue up", 10);
    let y = fact(&e, "revenue down", 10);
    let edge = e.write_edge(EdgeDraft::new(EdgeType::CONTRADICTS, x, y).valid_from(secs(10))).unwrap();
    assert!(edge.validity_closures.is_empty());
    let sub = e.execute(&Query::seeds([x]).op(Op::traverse(EdgeType::CONTRADICTS, Direction::Outgoing, 1))).unwrap();
    assert!(sub.contains(&x) && sub.contains(&y));
    assert!(sub.conflict_flags.contains(&x) && sub.conflict_flags.contains(&y));
    assert_eq!(valid_to(&e, x), None);
    assert_eq!(valid_to(&e, y), None);
    e.read(|st| {
        assert_eq!(st.row(&x).unwrap().conflicts, 1);
        assert_eq!(st.row(&y).unwrap().conflicts, 1);
    });
    e.delete_edge(edge.id).unwrap();
    e.read(|st| assert_eq!(st.row(&x).unwrap().conflicts, 0));
    let sub = e.execute(&Query::seeds([x, y])).unwrap();
    assert!(sub.conflict_flags.is_empty());
}

#[test]
fn same_as_stages_and_never_merges_without_acceptance() {
    let (e, _) = engine(4);
    let a = entity(&e, "Sarah Chen");
    let b = entity(&e, "S. Chen");
    let out = e.write_edge(EdgeDraft::new(EdgeType::SAME_AS, a, b)).unwrap();
    let pid = out.proposal.expect("proposal staged");
    assert_eq!(e.proposal(&pid).unwrap().status, ProposalStatus::Pending);
    assert_eq!(e.equivalence_class(a).unwrap().len(), 1);
    assert_eq!(e.equivalence_class(b).unwrap().len(), 1);
    // A second claim for the same pair is refused while one is pending.
    assert!(matches!(e.write_edge(EdgeDraft::new(EdgeType::SAME_AS, b, a)), Err(Error::HandlerRefused { .. })));

    e.accept_merge(pid).unwrap();
    assert_eq!(e.equivalence_class(a).unwrap(), [a, b].into_iter().collect());
    assert_eq!(e.equivalence_class(b).unwrap(), [a, b].into_iter().collect());
    assert!(matches!(e.accept_merge(pid), Err(Error::NotPending(_))));
    // Both nodes keep their own identity.
    assert!(e.contains_node(&a) && e.contains_node(&b));
}

#[test]
fn rejected_pairs_are_remembered() {
    let (e, _) = engine(4);
    let a = entity(&e, "Jordan Lee");
    let b = entity(&e, "Jordan Li");
    let pid = e.write_edge(EdgeDraft::new(EdgeType::SAME_AS, a, b)).unwrap().proposal.unwrap();
    e.reject_merge(pid).unwrap();
    assert_eq!(e.proposal(&pid).unwrap().status, ProposalStatus::Rejected);
    assert_eq!(e.equivalence_class(a).unwrap().len(), 1);
    let again = e.write_edge(EdgeDraft::new(EdgeType::SAME_AS, a, b).valid_from(secs(50)));
    assert!(matches!(again, Err(Error::HandlerRefused { .. })));
}

#[test]
fn identity_is_transitive_over_accepted_edges() {
    let (e, _) = engine(4);
    let a = entity(&e, "A");
    let b = entity(&e, "B");
    let c = entity(&e, "C");
    for (x, y) in [(a, b), (b, c)] {
        let p = e.write_edge(EdgeDraft::new(EdgeType::SAME_AS, x, y)).unwrap().proposal.unwrap();
        e.accept_merge(p).unwrap();
    }
    assert_eq!(e.equivalence_class(c).unwrap(), [a, b, c].into_iter().collect());
}

#[test]
fn unregistered_types_and_dangling_endpoints_fail() {
    let (e, _) = engine(4);
    let a = fact(&e, "a", 1);
    let ghost = Hash::digest(b"ghost");
    assert!(matches!(e.write_edge(EdgeDraft::new("employs", a, a)), Err(Error::UnregisteredEdgeType(_))));
    assert!(matches!(e.write_edge(EdgeDraft::new(EdgeType::REFERS_TO, a, ghost)), Err(Error::DanglingEndpoint(_))));
    assert_eq!(e.edge_count(), 0);
}

#[test]
fn every_stored_edge_went_through_a_handler() {
    let (e, _) = engine(4);
    let a = fact(&e, "a", 1);
    let b = fact(&e, "b", 2);
    let c = fact(&e, "c", 3);
    e.put_node(NodeDraft::new(NodeType::TOPIC, "w", "").children([a, b])).unwrap();
    e.write_edge(EdgeDraft::new(EdgeType::REFERS_TO, a, c)).unwrap();
    e.write_edge(EdgeDraft::new(EdgeType::CONTRADICTS, b, c)).unwrap();
    // Rewriting an identical edge is a no-op and dispatches nothing new.
    let again = e.write_edge(EdgeDraft::new(EdgeType::REFERS_TO, a, c)).unwrap();
    assert!(again.validity_closures.is_empty());
    assert_eq!(e.handler_dispatches(), e.edge_count() as u64);
}

#[test]
fn refused_edge_rolls_back_the_whole_transaction() {
    let (e, _) = engine(4);
    let old = fact(&e, "a", 10);
    let nodes = e.node_count();
    let res = e.transact(|tx| {
        let n = tx.put_node(NodeDraft::new(NodeType::FACT, "b", "b").created_at(secs(20)))?.id;
        tx.write_edge(EdgeDraft::new(EdgeType::REFERS_TO, n, old))?;
        tx.write_edge(EdgeDraft::new(EdgeType::SUPERSEDES, n, old).valid_from(secs(1)))
    });
    assert!(res.is_err());
    assert_eq!(e.node_count(), nodes);
    assert_eq!(e.edge_count(), 0);
    assert_eq!(e.handler_dispatches(), 0);
}

#[test]
fn functional_relation_closes_prior_edges() {
    let (e, _) = engine(4);
    e.register_edge_type("works_at", Arc::new(ClosePriorEdges), true).unwrap();
    assert!(matches!(
        e.register_edge_type("works_at", Arc::new(ClosePriorEdges), true),
        Err(Error::DuplicateEdgeType(_))
    ));
    assert!(e.functional_types().contains(&EdgeType::new("works_at")));
    let p = entity(&e, "Dana");
    let acme = entity(&e, "Acme");
    let globex = entity(&e, "Globex");
    let first = e.write_edge(EdgeDraft::new("works_at", p, acme).valid_from(secs(10))).unwrap().id;
    e.write_edge(EdgeDraft::new("works_at", p, globex).valid_from(secs(50))).unwrap();
    assert_eq!(e.get_edge(&first).unwrap().t_valid.to, Some(secs(50)));
}

#[derive(Debug)]
struct Audit;

impl EdgeHandler for Audit {
    fn on_insert(&self, tx: &mut Txn<'_>, edge: &Edge) -> worldmem_core::Result<()> {
        // Handlers write through the same dispatch path.
        tx.write_edge(EdgeDraft::new(EdgeType::REFERS_TO, edge.src, edge.dst).valid_from(edge.t_valid.from))?;
        Ok(())
    }
}

#[test]
fn custom_handlers_may_chain_writes() {
    let (e, _) = engine(4);
    e.register_edge_type("mentions", Arc::new(Audit), false).unwrap();
    let a = fact(&e, "a", 1);
    let b = fact(&e, "b", 1);
    e.write_edge(EdgeDraft::new("mentions", a, b).valid_from(secs(5))).unwrap();
    assert_eq!(e.edge_count(), 2);
    assert_eq!(e.handler_dispatches(), 2);
}
