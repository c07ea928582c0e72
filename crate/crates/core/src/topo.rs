//! The agent's semantic topological map.
//!
//! Nodes enter the map as navigable when first seen from a neighbouring
//! viewpoint, become current when the agent arrives, and visited once it
//! leaves. Edges are only ever added from the node being observed, so every
//! navigable node hangs off at least one visited node.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HsprError, Result};
use crate::perception::{ConfusionModel, TypeBelief};
use crate::scene::SceneGraph;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Current,
    Visited,
    Navigable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnownNode {
    pub status: NodeStatus,
    pub position: [f64; 3],
    pub belief: TypeBelief,
}

/// Supplies a type belief each time a node is (re-)observed.
pub trait BeliefSource {
    fn belief(&mut self, node: usize, true_type: usize, step: usize) -> TypeBelief;
}

impl<F: FnMut(usize, usize, usize) -> TypeBelief> BeliefSource for F {
    fn belief(&mut self, node: usize, true_type: usize, step: usize) -> TypeBelief {
        self(node, true_type, step)
    }
}

/// Confusion-model perception with draws keyed by `(seed, node, step)`.
pub struct ConfusionPerceiver<'a> {
    pub model: &'a ConfusionModel,
    pub seed: u64,
}

impl BeliefSource for ConfusionPerceiver<'_> {
    fn belief(&mut self, node: usize, true_type: usize, step: usize) -> TypeBelief {
        let draw = seed::mix(seed::mix(self.seed, node as u64), step as u64);
        self.model.belief(node, true_type, draw)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemanticTopoMap {
    nodes: BTreeMap<usize, KnownNode>,
    edges: BTreeMap<(usize, usize), f64>,
    current: Option<usize>,
    step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub node: String,
    pub status: NodeStatus,
    pub belief_argmax: usize,
}

impl SemanticTopoMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn current(&self) -> Option<usize> {
        self.current
    }

    pub fn nodes(&self) -> &BTreeMap<usize, KnownNode> {
        &self.nodes
    }

    pub fn node(&self, ix: usize) -> Option<&KnownNode> {
        self.nodes.get(&ix)
    }

    /// Known edges as `(a, b, length)` with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(a, b), &l)| (a, b, l))
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains_key(&(a.min(b), a.max(b)))
    }

    pub fn edge_length(&self, a: usize, b: usize) -> Option<f64> {
        self.edges.get(&(a.min(b), a.max(b))).copied()
    }

    /// Visited nodes, counting the current node.
    pub fn visited(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.status != NodeStatus::Navigable)
            .map(|(&i, _)| i)
            .collect()
    }

    /// Marks `arrived` current and adds its true neighbourhood to the map.
    pub fn observe(&mut self, scene: &SceneGraph, arrived: usize, source: &mut dyn BeliefSource) -> Result<()> {
        if arrived >= scene.len() {
            return Err(HsprError::UnknownNode(format!("#{arrived}")));
        }
        if !self.nodes.is_empty() && !self.nodes.contains_key(&arrived) {
            return Err(HsprError::NotNavigable(scene.node(arrived).node_id.clone()));
        }
        let step = self.step;
        if let Some(prev) = self.current {
            if let Some(n) = self.nodes.get_mut(&prev) {
                n.status = NodeStatus::Visited;
            }
        }
        let belief = source.belief(arrived, scene.node(arrived).node_type, step);
        self.nodes.insert(
            arrived,
            KnownNode {
                status: NodeStatus::Current,
                position: scene.node(arrived).position,
                belief,
            },
        );
        self.current = Some(arrived);
        for &(nb, len) in scene.neighbors(arrived) {
            self.edges.insert((arrived.min(nb), arrived.max(nb)), len);
            let belief = source.belief(nb, scene.node(nb).node_type, step);
            match self.nodes.get_mut(&nb) {
                Some(known) => known.belief = belief,
                None => {
                    self.nodes.insert(
                        nb,
                        KnownNode {
                            status: NodeStatus::Navigable,
                            position: scene.node(nb).position,
                            belief,
                        },
                    );
                }
            }
        }
        self.step += 1;
        Ok(())
    }

    /// `(F, C)`: navigable nodes adjacent to the current node, and all
    /// navigable nodes. Both sorted.
    pub fn navigable_sets(&self) -> (Vec<usize>, Vec<usize>) {
        let global: Vec<usize> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.status == NodeStatus::Navigable)
            .map(|(&i, _)| i)
            .collect();
        let local = match self.current {
            Some(cur) => global.iter().copied().filter(|&i| self.has_edge(cur, i)).collect(),
            None => Vec::new(),
        };
        (local, global)
    }

    pub fn snapshot(&self, scene: &SceneGraph) -> Vec<MapEntry> {
        self.nodes
            .iter()
            .map(|(&i, n)| MapEntry {
                node: scene.node(i).node_id.clone(),
                status: n.status,
                belief_argmax: n.belief.argmax(),
            })
            .collect()
    }

    /// Builds a map directly, bypassing observation. Intended for fixtures.
    pub fn from_parts(
        nodes: BTreeMap<usize, KnownNode>,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        current: usize,
    ) -> Result<Self> {
        let currents = nodes.values().filter(|n| n.status == NodeStatus::Current).count();
        if currents != 1 || nodes.get(&current).map(|n| n.status) != Some(NodeStatus::Current) {
            return Err(HsprError::Invariant("map needs exactly one current node".into()));
        }
        let mut map = SemanticTopoMap {
            nodes,
            edges: BTreeMap::new(),
            current: Some(current),
            step: 1,
        };
        for (a, b, l) in edges {
            if !map.nodes.contains_key(&a) || !map.nodes.contains_key(&b) {
                return Err(HsprError::UnknownNode(format!(
                    "#{}",
                    if map.nodes.contains_key(&a) { b } else { a }
                )));
            }
            map.edges.insert((a.min(b), a.max(b)), l);
        }
        Ok(map)
    }
}

const NO_HOP: usize = usize::MAX;

/// All-pairs distances and first hops over the known nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTable {
    order: Vec<usize>,
    position: BTreeMap<usize, usize>,
    dist: Vec<f64>,
    next: Vec<usize>,
}

impl RoutingTable {
    /// Floyd–Warshall over `nodes` (scene indices) and undirected `edges`.
    pub fn floyd_warshall(nodes: &[usize], edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let order: Vec<usize> = nodes.to_vec();
        let position: BTreeMap<usize, usize> = order.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let n = order.len();
        let mut dist = vec![f64::INFINITY; n * n];
        let mut next = vec![NO_HOP; n * n];
        for k in 0..n {
            dist[k * n + k] = 0.0;
            next[k * n + k] = k;
        }
        for (a, b, l) in edges {
            let (Some(&i), Some(&j)) = (position.get(&a), position.get(&b)) else {
                continue;
            };
            if i != j && l < dist[i * n + j] {
                dist[i * n + j] = l;
                dist[j * n + i] = l;
                next[i * n + j] = j;
                next[j * n + i] = i;
            }
        }
        for k in 0..n {
            for i in 0..n {
                let dik = dist[i * n + k];
                if dik == f64::INFINITY {
                    continue;
                }
                for j in i + 1..n {
                    let through = dik + dist[k * n + j];
                    if through < dist[i * n + j] {
                        // Mirrored so the table stays exactly symmetric.
                        dist[i * n + j] = through;
                        dist[j * n + i] = through;
                        next[i * n + j] = next[i * n + k];
                        next[j * n + i] = next[j * n + k];
                    }
                }
            }
        }
        RoutingTable {
            order,
            position,
            dist,
            next,
        }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.order
    }

    pub fn contains(&self, node: usize) -> bool {
        self.position.contains_key(&node)
    }

    /// Shortest known distance; infinite if either node is unknown or they
    /// are disconnected.
    pub fn dist(&self, a: usize, b: usize) -> f64 {
        match (self.position.get(&a), self.position.get(&b)) {
            (Some(&i), Some(&j)) => self.dist[i * self.order.len() + j],
            _ => f64::INFINITY,
        }
    }

    /// First node after `a` on a shortest path to `b`.
    pub fn next_hop(&self, a: usize, b: usize) -> Option<usize> {
        let (&i, &j) = (self.position.get(&a)?, self.position.get(&b)?);
        match self.next[i * self.order.len() + j] {
            NO_HOP => None,
            k => Some(self.order[k]),
        }
    }

    /// Node sequence `from -> ... -> to` following next hops.
    pub fn path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        if self.dist(from, to) == f64::INFINITY {
            return None;
        }
        let mut out = vec![from];
        let mut at = from;
        while at != to {
            at = self.next_hop(at, to)?;
            out.push(at);
            if out.len() > self.order.len() {
                return None;
            }
        }
        Some(out)
    }
}

pub fn all_pairs_shortest_paths(map: &SemanticTopoMap) -> RoutingTable {
    let nodes: Vec<usize> = map.nodes.keys().copied().collect();
    RoutingTable::floyd_warshall(&nodes, map.edges())
}

/// Route from the map's current node to `goal`.
pub fn route_to(map: &SemanticTopoMap, table: &RoutingTable, goal: usize, scene: &SceneGraph) -> Result<Vec<usize>> {
    let name = || {
        if goal < scene.len() {
            scene.node(goal).node_id.clone()
        } else {
            format!("#{goal}")
        }
    };
    let current = map
        .current()
        .ok_or_else(|| HsprError::Invariant("route requested on an empty map".into()))?;
    if !map.nodes.contains_key(&goal) {
        return Err(HsprError::UnknownNode(name()));
    }
    table.path(current, goal).ok_or_else(|| HsprError::Unreachable(name()))
}
