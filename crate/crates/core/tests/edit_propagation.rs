mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldmem_core::store::NodeEdit;
use worldmem_core::{Engine, Hash, NodeDraft, NodeType};

struct Tree {
    root: Hash,
    /// (leaf, depth below the root)
    leaves: Vec<(Hash, usize)>,
}

fn build(engine: &Engine, rng: &mut ChaCha8Rng, max_depth: usize, max_fanout: usize, counter: &mut usize) -> Tree {
    fn node(
        engine: &Engine,
        rng: &mut ChaCha8Rng,
        level: usize,
        max_depth: usize,
        max_fanout: usize,
        counter: &mut usize,
        leaves: &mut Vec<(Hash, usize)>,
    ) -> Hash {
        *counter += 1;
        let name = format!("n{counter}");
        // Force the first branch down to max_depth so every tree reaches it.
        let fanout = if level == max_depth {
            0
        } else if level == 0 || rng.random_bool(0.6) {
            rng.random_range(1..=max_fanout)
        } else {
            0
        };
        let mut kids = Vec::new();
        for _ in 0..fanout {
            kids.push(node(engine, rng, level + 1, max_depth, max_fanout, counter, leaves));
        }
        let id = engine.put_node(NodeDraft::new(NodeType::TOPIC, name, "body").children(kids.clone())).unwrap().id;
        if kids.is_empty() {
            leaves.push((id, level));
        }
        id
    }
    let mut leaves = Vec::new();
    let root = node(engine, rng, 0, max_depth, max_fanout, counter, &mut leaves);
    Tree { root, leaves }
}

fn all_ids(engine: &Engine) -> BTreeSet<Hash> {
    engine.read(|st| st.node_ids().copied().collect())
}

fn check_tree(seed: u64) {
    let (engine, _) = common::engine(4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_depth = rng.random_range(1..=6);
    let max_fanout = rng.random_range(1..=5);
    let mut counter = 0;
    let tree = build(&engine, &mut rng, max_depth, max_fanout, &mut counter);
    let (leaf, depth) = tree.leaves[rng.random_range(0..tree.leaves.len())];

    let before = all_ids(&engine);
    let map = engine
        .rewrite_with_edit(leaf, NodeEdit { content: Some(format!("edited {seed}")), ..Default::default() })
        .unwrap();
    let after = all_ids(&engine);

    assert_eq!(map.len(), depth + 1, "seed {seed}: path length");
    assert_eq!(map[0].0, leaf);
    assert_eq!(map.last().unwrap().0, tree.root);
    let new: BTreeSet<Hash> = after.difference(&before).copied().collect();
    assert_eq!(new.len(), depth + 1, "seed {seed}: exactly depth+1 new hashes");
    assert_eq!(new, map.iter().map(|(_, n)| *n).collect());
    assert!(before.is_subset(&after), "seed {seed}: old versions stay addressable");
    for h in &before {
        engine.get_node(h, true).unwrap();
    }
    // Every new ancestor keeps its siblings' hashes and swaps in one child.
    for w in map.windows(2) {
        let (old_child, new_child) = w[0];
        let (old_parent, new_parent) = w[1];
        let op = engine.get_node(&old_parent, true).unwrap();
        let np = engine.get_node(&new_parent, true).unwrap();
        let expect: Vec<Hash> = {
            let mut v: Vec<Hash> = op.children.iter().map(|c| if *c == old_child { new_child } else { *c }).collect();
            v.sort();
            v
        };
        assert_eq!(np.children, expect);
    }
}

#[test]
fn editing_a_leaf_rehashes_exactly_its_root_path_on_200_trees() {
    let start = std::time::Instant::now();
    for seed in 0..200 {
        check_tree(seed);
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn identical_edit_is_rejected() {
    let (engine, _) = common::engine(4);
    let leaf = engine.put_node(NodeDraft::new(NodeType::TOPIC, "a", "x")).unwrap().id;
    let err = engine.rewrite_with_edit(leaf, NodeEdit { content: Some("x".into()), ..Default::default() });
    assert!(matches!(err, Err(worldmem_core::Error::NoOpEdit)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn propagation_holds_for_arbitrary_seeds(seed in any::<u64>()) {
        check_tree(seed);
    }
}
