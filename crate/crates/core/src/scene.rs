//! Ground-truth scene graphs: the on-disk schema, validation, and the region
//! primitives that feed the knowledge-base builder.
//!
//! A scene is an undirected, connected, weighted graph of viewpoints. Each
//! viewpoint lies in a region (room) whose type is the node type, and carries
//! object instances observed in one of 36 panoramic views.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HsprError, Result};
use crate::graph;

pub const SCENE_SCHEMA_VERSION: u64 = 1;
pub const VIEWS_PER_NODE: usize = 36;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub object_id: String,
    pub object_type: usize,
    pub view_index: usize,
    pub heading: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub node_id: String,
    pub position: [f64; 3],
    pub region_id: String,
    pub node_type: usize,
    pub objects: Vec<ObjectInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// A validated scene. Construction goes through [`SceneGraph::new`] so every
/// instance satisfies the scene invariants.
#[derive(Debug, Clone)]
pub struct SceneGraph {
    scene_id: String,
    type_vocabulary: Vec<String>,
    object_vocabulary: Vec<String>,
    nodes: Vec<NodeRecord>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl PartialEq for SceneGraph {
    fn eq(&self, other: &Self) -> bool {
        self.scene_id == other.scene_id
            && self.type_vocabulary == other.type_vocabulary
            && self.object_vocabulary == other.object_vocabulary
            && self.nodes == other.nodes
            && self.edges == other.edges
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Region {
    pub region_id: String,
    pub region_type: usize,
    pub member_nodes: BTreeSet<String>,
}

fn invariant(msg: impl Into<String>) -> HsprError {
    HsprError::Invariant(msg.into())
}

impl SceneGraph {
    /// Validates and indexes a scene. Edges are given by node id.
    pub fn new(
        scene_id: impl Into<String>,
        type_vocabulary: Vec<String>,
        object_vocabulary: Vec<String>,
        nodes: Vec<NodeRecord>,
        edges: Vec<(String, String, f64)>,
    ) -> Result<Self> {
        let scene_id = scene_id.into();
        if nodes.is_empty() {
            return Err(invariant("scene has no nodes"));
        }
        let n_r = type_vocabulary.len();
        let n_o = object_vocabulary.len();
        let mut index = HashMap::with_capacity(nodes.len());
        let mut region_types: HashMap<&str, usize> = HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.node_id.clone(), i).is_some() {
                return Err(invariant(format!("duplicate node id `{}`", node.node_id)));
            }
            if !node.position.iter().all(|c| c.is_finite()) {
                return Err(invariant(format!("node `{}` has a non-finite position", node.node_id)));
            }
            if node.region_id.is_empty() {
                return Err(invariant(format!("node `{}` has an empty region id", node.node_id)));
            }
            if node.node_type >= n_r {
                return Err(invariant(format!(
                    "node `{}` type index {} out of range (N_r = {n_r})",
                    node.node_id, node.node_type
                )));
            }
            match region_types.get(node.region_id.as_str()) {
                Some(&t) if t != node.node_type => {
                    return Err(invariant(format!(
                        "region `{}` mixes node types {t} and {}",
                        node.region_id, node.node_type
                    )))
                }
                _ => {
                    region_types.insert(&node.region_id, node.node_type);
                }
            }
            for obj in &node.objects {
                if obj.object_type >= n_o {
                    return Err(invariant(format!(
                        "object `{}` type index {} out of range (N_o = {n_o})",
                        obj.object_id, obj.object_type
                    )));
                }
                if obj.view_index >= VIEWS_PER_NODE {
                    return Err(invariant(format!(
                        "object `{}` view index {} outside [0, 35]",
                        obj.object_id, obj.view_index
                    )));
                }
                if !obj.heading.is_finite() || !obj.elevation.is_finite() {
                    return Err(invariant(format!("object `{}` has a non-finite angle", obj.object_id)));
                }
            }
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut seen = BTreeSet::new();
        let mut resolved = Vec::with_capacity(edges.len());
        for (a, b, length) in edges {
            let ia = *index
                .get(&a)
                .ok_or_else(|| invariant(format!("edge endpoint `{a}` is not a node")))?;
            let ib = *index
                .get(&b)
                .ok_or_else(|| invariant(format!("edge endpoint `{b}` is not a node")))?;
            if ia == ib {
                return Err(invariant(format!("self-loop on `{a}`")));
            }
            if !(length.is_finite() && length > 0.0) {
                return Err(invariant(format!("edge `{a}`-`{b}` has non-positive length {length}")));
            }
            if !seen.insert((ia.min(ib), ia.max(ib))) {
                return Err(invariant(format!("edge `{a}`-`{b}` is listed more than once")));
            }
            adjacency[ia].push((ib, length));
            adjacency[ib].push((ia, length));
            resolved.push(Edge { a: ia, b: ib, length });
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(n, _)| n);
        }
        if graph::hop_distances(&adjacency, 0).contains(&usize::MAX) {
            return Err(invariant(format!("scene `{scene_id}` is not connected")));
        }

        Ok(SceneGraph {
            scene_id,
            type_vocabulary,
            object_vocabulary,
            nodes,
            edges: resolved,
            index,
            adjacency,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn type_vocabulary(&self) -> &[String] {
        &self.type_vocabulary
    }

    pub fn object_vocabulary(&self) -> &[String] {
        &self.object_vocabulary
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, ix: usize) -> &NodeRecord {
        &self.nodes[ix]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, node_id: &str) -> Option<usize> {
        self.index.get(node_id).copied()
    }

    pub fn require_node(&self, node_id: &str) -> Result<usize> {
        self.node_index(node_id)
            .ok_or_else(|| HsprError::UnknownNode(node_id.to_string()))
    }

    /// Neighbours of `ix` with edge lengths, sorted by node index.
    pub fn neighbors(&self, ix: usize) -> &[(usize, f64)] {
        &self.adjacency[ix]
    }

    pub fn adjacency(&self) -> &[Vec<(usize, f64)>] {
        &self.adjacency
    }

    pub fn edge_length(&self, a: usize, b: usize) -> Option<f64> {
        self.adjacency[a]
            .binary_search_by_key(&b, |&(n, _)| n)
            .ok()
            .map(|k| self.adjacency[a][k].1)
    }

    /// Geodesic (graph) distances from `source` to every node.
    pub fn geodesic_from(&self, source: usize) -> Vec<f64> {
        graph::dijkstra(&self.adjacency, source)
    }

    pub fn euclidean(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.nodes[a].position, self.nodes[b].position);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    }

    pub fn object_count(&self) -> usize {
        self.nodes.iter().map(|n| n.objects.len()).sum()
    }

    /// Serialises to the canonical text form: sorted keys, arrays in input
    /// order, floats rounded to 9 significant digits, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let file = SceneFile::from(self);
        let value = serde_json::to_value(&file).expect("scene file serialises");
        let mut out = serde_json::to_string_pretty(&value).expect("json value serialises");
        out.push('\n');
        out
    }

    pub fn from_json_str(text: &str, context: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| HsprError::parse(context, e))?;
        file.into_scene(context)
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HsprError::io(path, e))?;
    SceneGraph::from_json_str(&text, &path.display().to_string())
}

pub fn save_scene(scene: &SceneGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scene.to_canonical_json()).map_err(|e| HsprError::io(path, e))
}

/// Loads every `*.json` scene in a directory, sorted by file name.
pub fn load_scene_dir(dir: impl AsRef<Path>) -> Result<Vec<SceneGraph>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| HsprError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(HsprError::Empty(format!("no scene files in {}", dir.display())));
    }
    paths.iter().map(load_scene).collect()
}

/// Round to 9 significant digits, the precision of the canonical file form.
pub(crate) fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

#[derive(Serialize, Deserialize)]
struct ObjectFile {
    id: String,
    #[serde(rename = "type")]
    object_type: usize,
    view: usize,
    heading: f64,
    elevation: f64,
}

#[derive(Serialize, Deserialize)]
struct NodeFile {
    id: String,
    pos: [f64; 3],
    region: String,
    #[serde(rename = "type")]
    node_type: usize,
    #[serde(default)]
    objects: Vec<ObjectFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    schema_version: u64,
    scene_id: String,
    type_vocabulary: Vec<String>,
    object_vocabulary: Vec<String>,
    nodes: Vec<NodeFile>,
    edges: Vec<(String, String, f64)>,
}

impl From<&SceneGraph> for SceneFile {
    fn from(scene: &SceneGraph) -> Self {
        let nodes = scene
            .nodes
            .iter()
            .map(|n| NodeFile {
                id: n.node_id.clone(),
                pos: n.position.map(round_sig9),
                region: n.region_id.clone(),
                node_type: n.node_type,
                objects: n
                    .objects
                    .iter()
                    .map(|o| ObjectFile {
                        id: o.object_id.clone(),
                        object_type: o.object_type,
                        view: o.view_index,
                        heading: round_sig9(o.heading),
                        elevation: round_sig9(o.elevation),
                    })
                    .collect(),
            })
            .collect();
        let edges = scene
            .edges
            .iter()
            .map(|e| {
                (
                    scene.nodes[e.a].node_id.clone(),
                    scene.nodes[e.b].node_id.clone(),
                    round_sig9(e.length),
                )
            })
            .collect();
        SceneFile {
            schema_version: SCENE_SCHEMA_VERSION,
            scene_id: scene.scene_id.clone(),
            type_vocabulary: scene.type_vocabulary.clone(),
            object_vocabulary: scene.object_vocabulary.clone(),
            nodes,
            edges,
        }
    }
}

impl SceneFile {
    fn into_scene(self, context: &str) -> Result<SceneGraph> {
        if self.schema_version != SCENE_SCHEMA_VERSION {
            return Err(HsprError::SchemaVersion {
                context: context.to_string(),
                found: self.schema_version,
                expected: SCENE_SCHEMA_VERSION,
            });
        }
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| NodeRecord {
                node_id: n.id,
                position: n.pos,
                region_id: n.region,
                node_type: n.node_type,
                objects: n
                    .objects
                    .into_iter()
                    .map(|o| ObjectInstance {
                        object_id: o.id,
                        object_type: o.object_type,
                        view_index: o.view,
                        heading: o.heading,
                        elevation: o.elevation,
                    })
                    .collect(),
            })
            .collect();
        SceneGraph::new(
            self.scene_id,
            self.type_vocabulary,
            self.object_vocabulary,
            nodes,
            self.edges,
        )
    }
}

/// Groups nodes by region id, splitting any region whose members are
/// disconnected into one region per component (`#0`, `#1`, ... ordered by
/// smallest member node id). Output is sorted by region id.
pub fn segment_regions(scene: &SceneGraph) -> Vec<Region> {
    let mut by_region: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, node) in scene.nodes.iter().enumerate() {
        by_region.entry(node.region_id.as_str()).or_default().push(i);
    }
    let mut regions = Vec::new();
    for (region_id, members) in by_region {
        let region_type = scene.nodes[members[0]].node_type;
        let mut comps: Vec<BTreeSet<String>> = graph::induced_components(&scene.adjacency, &members)
            .into_iter()
            .map(|c| c.into_iter().map(|i| scene.nodes[i].node_id.clone()).collect())
            .collect();
        if comps.len() == 1 {
            regions.push(Region {
                region_id: region_id.to_string(),
                region_type,
                member_nodes: comps.pop().unwrap(),
            });
            continue;
        }
        comps.sort_by(|a, b| a.first().cmp(&b.first()));
        for (k, member_nodes) in comps.into_iter().enumerate() {
            regions.push(Region {
                region_id: format!("{region_id}#{k}"),
                region_type,
                member_nodes,
            });
        }
    }
    regions.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    regions
}

/// Unordered pairs `(a, b)` with `a < b` of regions joined by at least one
/// scene edge. Parallel edges between the same pair count once.
pub fn region_adjacency(scene: &SceneGraph, regions: &[Region]) -> BTreeSet<(String, String)> {
    let mut owner = vec![usize::MAX; scene.len()];
    for (r, region) in regions.iter().enumerate() {
        for id in &region.member_nodes {
            if let Some(ix) = scene.node_index(id) {
                owner[ix] = r;
            }
        }
    }
    let mut pairs = BTreeSet::new();
    for e in &scene.edges {
        let (ra, rb) = (owner[e.a], owner[e.b]);
        if ra == rb || ra == usize::MAX || rb == usize::MAX {
            continue;
        }
        let (x, y) = (&regions[ra].region_id, &regions[rb].region_id);
        if x < y {
            pairs.insert((x.clone(), y.clone()));
        } else {
            pairs.insert((y.clone(), x.clone()));
        }
    }
    pairs
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    const MINIMAL: &str = r#"{
  "schema_version": 1,
  "scene_id": "tiny",
  "type_vocabulary": ["hall", "kitchen"],
  "object_vocabulary": ["cup"],
  "nodes": [
    {"id": "a", "pos": [0, 0, 0], "region": "r1", "type": 0, "objects": []},
    {"id": "b", "pos": [1.5, 0, 0], "region": "r2", "type": 1,
     "objects": [{"id": "o1", "type": 0, "view": 12, "heading": 0.5, "elevation": -0.1}]}
  ],
  "edges": [["a", "b", 1.5]]
}"#;

    #[test]
    fn minimal_scene_loads() {
        let s = SceneGraph::from_json_str(MINIMAL, "inline").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.edges().len(), 1);
        assert_eq!(s.edge_length(0, 1), Some(1.5));
        assert_eq!(s.edge_length(1, 0), Some(1.5));
        assert_eq!(s.object_count(), 1);
    }

    #[test]
    fn unknown_edge_endpoint_is_rejected() {
        let text = MINIMAL.replace(r#"["a", "b", 1.5]"#, r#"["a", "zz", 1.5]"#);
        let err = SceneGraph::from_json_str(&text, "inline").unwrap_err();
        assert!(matches!(err, HsprError::Invariant(ref m) if m.contains("zz")), "{err}");
    }

    #[test]
    fn invariant_violations_are_named() {
        let cases = [
            (r#""view": 12"#, r#""view": 36"#, "view index"),
            (r#""type": 1,"#, r#""type": 2,"#, "type index"),
            (r#"["a", "b", 1.5]"#, r#"["a", "a", 1.5]"#, "self-loop"),
            (r#"["a", "b", 1.5]"#, r#"["a", "b", 0.0]"#, "non-positive"),
            (r#""region": "r1""#, r#""region": """#, "empty region"),
        ];
        for (from, to, needle) in cases {
            let text = MINIMAL.replace(from, to);
            let err = SceneGraph::from_json_str(&text, "inline").unwrap_err();
            assert!(err.to_string().contains(needle), "{needle}: {err}");
        }
        let text = MINIMAL.replace(r#""edges": [["a", "b", 1.5]]"#, r#""edges": []"#);
        let err = SceneGraph::from_json_str(&text, "inline").unwrap_err();
        assert!(err.to_string().contains("not connected"));
        let text = MINIMAL.replace(r#""schema_version": 1"#, r#""schema_version": 2"#);
        assert!(matches!(
            SceneGraph::from_json_str(&text, "inline"),
            Err(HsprError::SchemaVersion { found: 2, .. })
        ));
        assert!(matches!(
            SceneGraph::from_json_str("{", "inline"),
            Err(HsprError::Parse { .. })
        ));
    }

    #[test]
    fn canonical_form_is_a_fixpoint() {
        let s = SceneGraph::from_json_str(MINIMAL, "inline").unwrap();
        let once = s.to_canonical_json();
        let twice = SceneGraph::from_json_str(&once, "canon").unwrap().to_canonical_json();
        assert_eq!(once, twice);
        // keys sorted
        assert!(once.find("\"edges\"").unwrap() < once.find("\"nodes\"").unwrap());
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(round_sig9(1.0 / 3.0), 0.333333333);
        assert_eq!(round_sig9(123456.78901), 123456.789);
        assert_eq!(round_sig9(0.0), 0.0);
    }

    #[test]
    fn single_connected_region() {
        let nodes = vec![node("a", "r", 0, 0.0), node("b", "r", 0, 1.0), node("c", "r", 0, 2.0)];
        let s = SceneGraph::new(
            "s",
            vocab("t", 1),
            vocab("o", 1),
            nodes,
            vec![edge("a", "b", 1.0), edge("b", "c", 1.0)],
        )
        .unwrap();
        let regions = segment_regions(&s);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].region_id, "r");
        assert!(region_adjacency(&s, &regions).is_empty());
    }

    #[test]
    fn disconnected_region_is_split() {
        // r = {a, b} and {d, e, f}, separated by hall node c.
        let nodes = vec![
            node("a", "r", 0, 0.0),
            node("b", "r", 0, 1.0),
            node("c", "hall", 1, 2.0),
            node("d", "r", 0, 3.0),
            node("e", "r", 0, 4.0),
            node("f", "r", 0, 5.0),
        ];
        let edges = vec![
            edge("a", "b", 1.0),
            edge("b", "c", 1.0),
            edge("c", "d", 1.0),
            edge("d", "e", 1.0),
            edge("e", "f", 1.0),
        ];
        let s = SceneGraph::new("s", vocab("t", 2), vocab("o", 1), nodes, edges).unwrap();
        let regions = segment_regions(&s);
        let sizes: Vec<_> = regions
            .iter()
            .map(|r| (r.region_id.as_str(), r.member_nodes.len()))
            .collect();
        assert_eq!(sizes, vec![("hall", 1), ("r#0", 2), ("r#1", 3)]);
        let adj = region_adjacency(&s, &regions);
        assert_eq!(adj.len(), 2);
        assert!(adj.contains(&("hall".to_string(), "r#0".to_string())));
        assert!(adj.contains(&("hall".to_string(), "r#1".to_string())));
    }

    #[test]
    fn parallel_edges_count_once() {
        let nodes = vec![
            node("a1", "A", 0, 0.0),
            node("a2", "A", 0, 0.0),
            node("a3", "A", 0, 0.0),
            node("b1", "B", 1, 1.0),
            node("b2", "B", 1, 1.0),
            node("b3", "B", 1, 1.0),
        ];
        let edges = vec![
            edge("a1", "a2", 1.0),
            edge("a2", "a3", 1.0),
            edge("b1", "b2", 1.0),
            edge("b2", "b3", 1.0),
            edge("a1", "b1", 1.0),
            edge("a2", "b2", 1.0),
            edge("a3", "b3", 1.0),
        ];
        let s = SceneGraph::new("s", vocab("t", 2), vocab("o", 1), nodes, edges).unwrap();
        let regions = segment_regions(&s);
        let adj = region_adjacency(&s, &regions);
        assert_eq!(adj.into_iter().collect::<Vec<_>>(), vec![("A".into(), "B".into())]);
    }

    #[test]
    fn mixed_types_within_region_rejected() {
        let nodes = vec![node("a", "r", 0, 0.0), node("b", "r", 1, 1.0)];
        let err = SceneGraph::new("s", vocab("t", 2), vocab("o", 1), nodes, vec![edge("a", "b", 1.0)]).unwrap_err();
        assert!(err.to_string().contains("mixes node types"));
    }
}
