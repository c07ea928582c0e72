#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;

use hspr_core::scene::{NodeRecord, SceneGraph};
use hspr_core::seed;

pub fn vocab(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Random connected scene with `n` nodes spread over `regions` region ids.
/// Region membership is arbitrary, so a region may end up disconnected.
pub fn random_scene(seed_value: u64, n: usize, regions: usize) -> SceneGraph {
    let mut rng = seed::rng(seed_value);
    let nodes: Vec<NodeRecord> = (0..n)
        .map(|i| {
            let r = rng.random_range(0..regions);
            NodeRecord {
                node_id: format!("n{i:02}"),
                position: [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), 0.0],
                region_id: format!("r{r}"),
                node_type: r % 4,
                objects: Vec::new(),
            }
        })
        .collect();
    let mut pairs = BTreeSet::new();
    for k in 1..n {
        let p = rng.random_range(0..k);
        pairs.insert((p, k));
    }
    for _ in 0..n / 2 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(a, b)| (format!("n{a:02}"), format!("n{b:02}"), rng.random_range(0.5..3.0)))
        .collect();
    SceneGraph::new(format!("rand{seed_value}"), vocab("t", 4), vocab("o", 3), nodes, edges).unwrap()
}
