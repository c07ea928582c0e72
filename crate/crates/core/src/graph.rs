//! Shortest-path helpers over adjacency lists of the ground-truth scene.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest distances; unreachable nodes get `f64::INFINITY`.
pub fn dijkstra(adjacency: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adjacency.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier {
        dist: 0.0,
        node: source,
    });
    while let Some(Frontier { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in &adjacency[node] {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(Frontier { dist: nd, node: next });
            }
        }
    }
    dist
}

/// Hop counts from `source`; unreachable nodes get `usize::MAX`.
pub fn hop_distances(adjacency: &[Vec<(usize, f64)>], source: usize) -> Vec<usize> {
    let mut hops = vec![usize::MAX; adjacency.len()];
    let mut queue = VecDeque::new();
    hops[source] = 0;
    queue.push_back(source);
    while let Some(n) = queue.pop_front() {
        for &(m, _) in &adjacency[n] {
            if hops[m] == usize::MAX {
                hops[m] = hops[n] + 1;
                queue.push_back(m);
            }
        }
    }
    hops
}

/// Connected components of the subgraph induced by `members`, each sorted,
/// listed in order of their smallest member (by position in `members`).
pub fn induced_components(adjacency: &[Vec<(usize, f64)>], members: &[usize]) -> Vec<Vec<usize>> {
    let mut in_set = vec![false; adjacency.len()];
    for &m in members {
        in_set[m] = true;
    }
    let mut seen = vec![false; adjacency.len()];
    let mut comps = Vec::new();
    for &m in members {
        if seen[m] {
            continue;
        }
        let mut comp = vec![m];
        seen[m] = true;
        let mut i = 0;
        while i < comp.len() {
            let n = comp[i];
            i += 1;
            for &(k, _) in &adjacency[n] {
                if in_set[k] && !seen[k] {
                    seen[k] = true;
                    comp.push(k);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Vec<Vec<(usize, f64)>> {
        vec![vec![(1, 1.0)], vec![(0, 1.0), (2, 2.0)], vec![(1, 2.0)]]
    }

    #[test]
    fn dijkstra_on_path() {
        assert_eq!(dijkstra(&path3(), 0), vec![0.0, 1.0, 3.0]);
        assert_eq!(hop_distances(&path3(), 2), vec![2, 1, 0]);
    }

    #[test]
    fn components_split_on_gap() {
        let comps = induced_components(&path3(), &[0, 2]);
        assert_eq!(comps, vec![vec![0], vec![2]]);
    }
}
