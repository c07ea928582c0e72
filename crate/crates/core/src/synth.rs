//! Procedural houses and navigation episodes.
//!
//! Scenes are grown region by region on a planar grid. The first region gets
//! a random type; every further region attaches to an existing one in a free
//! neighbouring cell, with its type drawn in proportion to the parent's row of
//! the generator's `P_r`. Extra links between grid-adjacent regions are then
//! drawn in proportion to `P_r` as well, so a type pair with zero proximity
//! never becomes adjacent.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HsprError, Result};
use crate::kb::{Provenance, ProximityKB, P_MAX};
use crate::scene::{NodeRecord, ObjectInstance, SceneGraph, VIEWS_PER_NODE};
use crate::seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub region_count: usize,
    pub nodes_per_region: (usize, usize),
    pub extra_region_links: usize,
    pub objects_per_node: (usize, usize),
    /// Side of the square grid cell each region occupies, in metres.
    pub region_extent: f64,
    /// Every region gets a distinct type.
    pub unique_region_types: bool,
    /// Every object type appears at most once per scene, so a target object
    /// type identifies a single instance.
    pub unique_objects: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            region_count: 9,
            nodes_per_region: (1, 3),
            extra_region_links: 2,
            objects_per_node: (1, 2),
            region_extent: 4.0,
            unique_region_types: false,
            unique_objects: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self, kb: &ProximityKB) -> Result<()> {
        let bad = |m: &str| Err(HsprError::Config(m.to_string()));
        if self.region_count < 2 {
            return bad("region_count must be at least 2");
        }
        if self.nodes_per_region.0 == 0 || self.nodes_per_region.0 > self.nodes_per_region.1 {
            return bad("nodes_per_region must satisfy 1 <= min <= max");
        }
        if self.objects_per_node.0 > self.objects_per_node.1 {
            return bad("objects_per_node must satisfy min <= max");
        }
        if !(self.region_extent.is_finite() && self.region_extent > 0.0) {
            return bad("region_extent must be positive");
        }
        if self.unique_region_types && self.region_count > kb.n_types() {
            return Err(HsprError::Config(format!(
                "{} unique regions requested but only {} node types exist",
                self.region_count,
                kb.n_types()
            )));
        }
        if kb.p_r.iter().all(|&p| p == 0.0) {
            return bad("generator P_r has no nonzero entry");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub scene_id: String,
    pub start_node: String,
    pub target_node: String,
    pub target_object: String,
    pub shortest_length: f64,
    pub target_type: usize,
}

impl Episode {
    pub fn check(&self, scene: &SceneGraph) -> Result<()> {
        let mismatch = |reason: String| HsprError::EpisodeMismatch {
            episode: self.episode_id.clone(),
            scene: scene.scene_id().to_string(),
            reason,
        };
        if self.scene_id != scene.scene_id() {
            return Err(mismatch(format!("episode names scene `{}`", self.scene_id)));
        }
        let start = scene
            .node_index(&self.start_node)
            .ok_or_else(|| mismatch(format!("unknown start `{}`", self.start_node)))?;
        let target = scene
            .node_index(&self.target_node)
            .ok_or_else(|| mismatch(format!("unknown target `{}`", self.target_node)))?;
        if start == target {
            return Err(mismatch("start equals target".into()));
        }
        if !scene
            .node(target)
            .objects
            .iter()
            .any(|o| o.object_id == self.target_object)
        {
            return Err(mismatch(format!(
                "object `{}` is not at the target",
                self.target_object
            )));
        }
        if scene.node(target).node_type != self.target_type {
            return Err(mismatch("target_type differs from the target node's type".into()));
        }
        Ok(())
    }
}

struct RegionPlan {
    cell: (i32, i32),
    region_type: usize,
}

const DIRS: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> Option<usize> {
    WeightedIndex::new(weights).ok().map(|d| d.sample(rng))
}

fn free_cells(occupied: &HashSet<(i32, i32)>, cell: (i32, i32)) -> Vec<(i32, i32)> {
    DIRS.iter()
        .map(|(dx, dy)| (cell.0 + dx, cell.1 + dy))
        .filter(|c| !occupied.contains(c))
        .collect()
}

/// Planned regions and the region pairs to connect.
type RegionLayout = (Vec<RegionPlan>, BTreeSet<(usize, usize)>);

/// Grows the region layout: a spanning tree over regions, then extra links.
fn plan_regions(config: &GeneratorConfig, kb: &ProximityKB, rng: &mut ChaCha8Rng) -> Result<RegionLayout> {
    let n_r = kb.n_types();
    let row_weights = |t: usize, used: &HashSet<usize>| -> Vec<f64> {
        (0..n_r)
            .map(|u| {
                if config.unique_region_types && used.contains(&u) {
                    0.0
                } else {
                    kb.p_r[[t, u]]
                }
            })
            .collect()
    };
    let starts: Vec<f64> = (0..n_r)
        .map(|t| {
            if kb.p_r.row(t).iter().any(|&p| p > 0.0) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let first = weighted_pick(rng, &starts).expect("validated: some row is nonzero");

    let mut regions = vec![RegionPlan {
        cell: (0, 0),
        region_type: first,
    }];
    let mut occupied: HashSet<(i32, i32)> = HashSet::from([(0, 0)]);
    let mut used: HashSet<usize> = HashSet::from([first]);
    let mut links = BTreeSet::new();
    while regions.len() < config.region_count {
        let parents: Vec<usize> = (0..regions.len())
            .filter(|&r| {
                !free_cells(&occupied, regions[r].cell).is_empty()
                    && row_weights(regions[r].region_type, &used).iter().any(|&w| w > 0.0)
            })
            .collect();
        if parents.is_empty() {
            return Err(HsprError::Config(format!(
                "cannot place region {} of {}: no region can take a neighbour",
                regions.len() + 1,
                config.region_count
            )));
        }
        let parent = parents[rng.random_range(0..parents.len())];
        let weights = row_weights(regions[parent].region_type, &used);
        let child_type = weighted_pick(rng, &weights).expect("parent filtered on nonzero row");
        let cells = free_cells(&occupied, regions[parent].cell);
        let cell = cells[rng.random_range(0..cells.len())];
        occupied.insert(cell);
        used.insert(child_type);
        links.insert((parent, regions.len()));
        regions.push(RegionPlan {
            cell,
            region_type: child_type,
        });
    }

    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for a in 0..regions.len() {
        for b in a + 1..regions.len() {
            let (ca, cb) = (regions[a].cell, regions[b].cell);
            let grid_adjacent = (ca.0 - cb.0).abs() + (ca.1 - cb.1).abs() == 1;
            if grid_adjacent
                && !links.contains(&(a, b))
                && kb.p_r[[regions[a].region_type, regions[b].region_type]] > 0.0
            {
                candidates.push((a, b));
            }
        }
    }
    for _ in 0..config.extra_region_links {
        let weights: Vec<f64> = candidates
            .iter()
            .map(|&(a, b)| kb.p_r[[regions[a].region_type, regions[b].region_type]])
            .collect();
        let Some(k) = weighted_pick(rng, &weights) else { break };
        links.insert(candidates.swap_remove(k));
    }
    Ok((regions, links))
}

/// Generates one scene deterministically from `config.seed`.
pub fn generate_scene(config: &GeneratorConfig, kb: &ProximityKB) -> Result<SceneGraph> {
    config.validate(kb)?;
    let mut rng = seed::rng(seed::mix_str(config.seed, "scene"));
    let scene_id = format!("scene_{:016x}", config.seed);
    let (regions, links) = plan_regions(config, kb, &mut rng)?;
    let extent = config.region_extent;

    let mut nodes: Vec<NodeRecord> = Vec::new();
    let mut edges: Vec<(String, String, f64)> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::with_capacity(regions.len());
    let dist = |a: &[f64; 3], b: &[f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt().max(0.05);

    for (r, plan) in regions.iter().enumerate() {
        let count = rng.random_range(config.nodes_per_region.0..=config.nodes_per_region.1);
        let origin = (f64::from(plan.cell.0) * extent, f64::from(plan.cell.1) * extent);
        let first = nodes.len();
        for _ in 0..count {
            let x = origin.0 + extent * rng.random_range(0.15..0.85);
            let y = origin.1 + extent * rng.random_range(0.15..0.85);
            nodes.push(NodeRecord {
                node_id: format!("n{:03}", nodes.len()),
                position: [x, y, 0.0],
                region_id: format!("r{r:02}"),
                node_type: plan.region_type,
                objects: Vec::new(),
            });
        }
        let local: Vec<usize> = (first..nodes.len()).collect();
        let mut linked = BTreeSet::new();
        for i in 1..local.len() {
            let j = rng.random_range(0..i);
            linked.insert((local[j], local[i]));
        }
        for _ in 0..local.len() / 2 {
            let a = local[rng.random_range(0..local.len())];
            let b = local[rng.random_range(0..local.len())];
            if a != b {
                linked.insert((a.min(b), a.max(b)));
            }
        }
        for (a, b) in linked {
            let d = dist(&nodes[a].position, &nodes[b].position);
            edges.push((nodes[a].node_id.clone(), nodes[b].node_id.clone(), d));
        }
        members.push(local);
    }

    for &(ra, rb) in &links {
        let mut best = (f64::INFINITY, 0, 0);
        for &a in &members[ra] {
            for &b in &members[rb] {
                let d = dist(&nodes[a].position, &nodes[b].position);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        edges.push((nodes[best.1].node_id.clone(), nodes[best.2].node_id.clone(), best.0));
    }

    place_objects(config, kb, &mut nodes, &mut rng);

    SceneGraph::new(
        scene_id,
        kb.type_vocabulary.clone(),
        kb.object_vocabulary.clone(),
        nodes,
        edges,
    )
}

fn place_objects(config: &GeneratorConfig, kb: &ProximityKB, nodes: &mut [NodeRecord], rng: &mut ChaCha8Rng) {
    let n_o = kb.n_objects();
    if n_o == 0 {
        return;
    }
    let mut taken = vec![false; n_o];
    let mut next_id = 0;
    for node in nodes.iter_mut() {
        let count = rng.random_range(config.objects_per_node.0..=config.objects_per_node.1);
        // A few shared views per node so objects co-occur within a view.
        let views: Vec<usize> = (0..3).map(|_| rng.random_range(0..VIEWS_PER_NODE)).collect();
        let mut here = vec![false; n_o];
        for _ in 0..count {
            let weights: Vec<f64> = (0..n_o)
                .map(|o| {
                    if here[o] || (config.unique_objects && taken[o]) {
                        return 0.0;
                    }
                    match &kb.object_weights {
                        Some(w) if w.row(node.node_type).sum() > 0.0 => w[[node.node_type, o]],
                        _ => 1.0,
                    }
                })
                .collect();
            let Some(o) = weighted_pick(rng, &weights) else { break };
            here[o] = true;
            taken[o] = true;
            let view = views[rng.random_range(0..views.len())];
            node.objects.push(ObjectInstance {
                object_id: format!("o{next_id:03}"),
                object_type: o,
                view_index: view,
                heading: (view % 12) as f64 * std::f64::consts::PI / 6.0,
                elevation: ((view / 12) as f64 - 1.0) * std::f64::consts::PI / 6.0,
            });
            next_id += 1;
        }
    }
}

/// Bound on start re-draws before the two-hop requirement is relaxed.
const START_REDRAWS: usize = 32;

/// Samples a start, a target node carrying objects, and a target object.
pub fn sample_episode(scene: &SceneGraph, seed: u64) -> Result<Episode> {
    let with_objects: Vec<usize> = (0..scene.len())
        .filter(|&i| !scene.node(i).objects.is_empty())
        .collect();
    if with_objects.is_empty() {
        return Err(HsprError::Config(format!(
            "scene `{}` has no objects to target",
            scene.scene_id()
        )));
    }
    if scene.len() < 2 {
        return Err(HsprError::Config(format!(
            "scene `{}` has a single node",
            scene.scene_id()
        )));
    }
    let mut rng = seed::rng(seed::mix_str(seed, scene.scene_id()));
    let mut pick = None;
    for min_hops in [2, 1] {
        for _ in 0..START_REDRAWS {
            let start = rng.random_range(0..scene.len());
            let hops = crate::graph::hop_distances(scene.adjacency(), start);
            let targets: Vec<usize> = with_objects.iter().copied().filter(|&t| hops[t] >= min_hops).collect();
            if !targets.is_empty() {
                pick = Some((start, targets[rng.random_range(0..targets.len())]));
                break;
            }
        }
        if pick.is_some() {
            break;
        }
    }
    let (start, target) = match pick {
        Some(p) => p,
        None => {
            // Only reachable if every draw landed on the lone object node.
            let target = with_objects[0];
            let start = (0..scene.len()).find(|&s| s != target).expect("two nodes exist");
            (start, target)
        }
    };
    let objects = &scene.node(target).objects;
    let object = &objects[rng.random_range(0..objects.len())];
    let shortest_length = scene.geodesic_from(start)[target];
    Ok(Episode {
        episode_id: format!("{}/{seed:016x}", scene.scene_id()),
        scene_id: scene.scene_id().to_string(),
        start_node: scene.node(start).node_id.clone(),
        target_node: scene.node(target).node_id.clone(),
        target_object: object.object_id.clone(),
        shortest_length,
        target_type: scene.node(target).node_type,
    })
}

/// `per_scene` episodes for each scene, ids `<scene>-ep<k>`.
pub fn sample_episodes(scenes: &[SceneGraph], per_scene: usize, seed: u64) -> Result<Vec<Episode>> {
    let mut out = Vec::with_capacity(scenes.len() * per_scene);
    for scene in scenes {
        for k in 0..per_scene {
            let mut ep = sample_episode(scene, seed::mix(seed::mix_str(seed, scene.scene_id()), k as u64))?;
            ep.episode_id = format!("{}-ep{k:03}", scene.scene_id());
            out.push(ep);
        }
    }
    Ok(out)
}

pub fn save_episodes(episodes: &[Episode], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(episodes).expect("episodes serialise");
    text.push('\n');
    fs::write(path, text).map_err(|e| HsprError::io(path, e))
}

pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HsprError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HsprError::parse(path.display().to_string(), e))
}

const HOUSE_TYPES: [&str; 12] = [
    "hallway",
    "living room",
    "kitchen",
    "dining room",
    "bedroom",
    "bathroom",
    "closet",
    "office",
    "stairs",
    "laundry room",
    "garage",
    "entryway",
];

const HOUSE_OBJECTS: [[&str; 8]; 12] = [
    [
        "runner rug",
        "wall painting",
        "console table",
        "ceiling light",
        "coat hook",
        "mirror",
        "plant stand",
        "wall clock",
    ],
    [
        "sofa",
        "coffee table",
        "television",
        "armchair",
        "fireplace",
        "floor lamp",
        "bookshelf",
        "throw pillow",
    ],
    [
        "refrigerator",
        "stove",
        "microwave",
        "kitchen sink",
        "kettle",
        "cutting board",
        "dishwasher",
        "toaster",
    ],
    [
        "dining table",
        "dining chair",
        "chandelier",
        "sideboard",
        "vase",
        "placemat",
        "wine rack",
        "candle holder",
    ],
    [
        "bed",
        "nightstand",
        "wardrobe",
        "dresser",
        "bedside lamp",
        "pillow",
        "blanket",
        "alarm clock",
    ],
    [
        "toilet",
        "bathtub",
        "shower",
        "bathroom sink",
        "towel",
        "toilet paper",
        "bath mat",
        "soap dish",
    ],
    [
        "clothes rack",
        "shoe rack",
        "hanger",
        "storage box",
        "laundry basket",
        "suitcase",
        "shelf",
        "folded sweater",
    ],
    [
        "desk",
        "office chair",
        "computer",
        "printer",
        "filing cabinet",
        "desk lamp",
        "whiteboard",
        "keyboard",
    ],
    [
        "staircase",
        "handrail",
        "banister",
        "stair runner",
        "landing window",
        "baby gate",
        "newel post",
        "step light",
    ],
    [
        "washing machine",
        "dryer",
        "ironing board",
        "detergent",
        "utility sink",
        "drying rack",
        "iron",
        "lint brush",
    ],
    [
        "car",
        "bicycle",
        "toolbox",
        "workbench",
        "garage door",
        "lawn mower",
        "ladder",
        "paint can",
    ],
    [
        "front door",
        "umbrella stand",
        "doormat",
        "bench",
        "key bowl",
        "shoe cabinet",
        "welcome sign",
        "coat closet",
    ],
];

/// Symmetric type-adjacency strengths of a typical house.
const HOUSE_LINKS: [(usize, usize, f64); 20] = [
    (0, 0, 0.4),
    (0, 1, 0.5),
    (0, 4, 0.95),
    (0, 5, 0.95),
    (0, 6, 0.3),
    (0, 7, 0.95),
    (0, 8, 0.95),
    (1, 2, 0.3),
    (1, 3, 0.9),
    (1, 8, 0.4),
    (1, 11, 0.95),
    (2, 3, 0.95),
    (2, 9, 0.6),
    (4, 5, 0.6),
    (4, 6, 0.95),
    (6, 7, 0.2),
    (8, 11, 0.3),
    (9, 10, 0.95),
    (10, 11, 0.3),
    (0, 11, 0.3),
];

/// A hand-specified generator knowledge base: 12 house region types and 96
/// object types (8 characteristic objects per region type).
pub fn house_generator_kb() -> ProximityKB {
    let n_r = HOUSE_TYPES.len();
    let n_o = n_r * HOUSE_OBJECTS[0].len();
    let mut p_r = Array2::zeros((n_r, n_r));
    for &(a, b, p) in &HOUSE_LINKS {
        p_r[[a, b]] = p;
        p_r[[b, a]] = p;
    }
    let home = |o: usize| o / HOUSE_OBJECTS[0].len();
    let mut p_o = Array2::zeros((n_o, n_o));
    let mut weights = Array2::zeros((n_r, n_o));
    for a in 0..n_o {
        for b in 0..n_o {
            p_o[[a, b]] = if a == b {
                P_MAX
            } else if home(a) == home(b) {
                0.1
            } else {
                0.0
            };
        }
        for t in 0..n_r {
            weights[[t, a]] = if home(a) == t { 1.0 } else { 0.01 };
        }
    }
    let top_objects = (0..n_r).map(|t| (t * 8..t * 8 + 8).collect()).collect();
    ProximityKB {
        type_vocabulary: HOUSE_TYPES.iter().map(|s| s.to_string()).collect(),
        object_vocabulary: HOUSE_OBJECTS.iter().flatten().map(|s| s.to_string()).collect(),
        p_r,
        p_o,
        top_objects,
        object_weights: Some(weights),
        provenance: Provenance {
            scene_count: 0,
            built_at_unix: 0,
            config_hash: "house-v1".into(),
        },
    }
}

/// A random generator KB: sparse symmetric `P_r` whose rows each hold a 0 and
/// a 0.95, diagonal-dominant `P_o`, and random object weights.
pub fn random_generator_kb(seed_value: u64, n_r: usize, n_o: usize, density: f64) -> ProximityKB {
    let mut rng = seed::rng(seed::mix_str(seed_value, "generator-kb"));
    let mut p_r: Array2<f64> = Array2::zeros((n_r, n_r));
    for a in 0..n_r {
        for b in a + 1..n_r {
            if rng.random::<f64>() < density {
                let p = rng.random_range(0.05..P_MAX);
                p_r[[a, b]] = p;
                p_r[[b, a]] = p;
            }
        }
    }
    // Chain every type to the next so the type graph is connected, then give
    // each row a 0.95 maximum.
    for a in 0..n_r.saturating_sub(1) {
        if p_r[[a, a + 1]] == 0.0 {
            let p = rng.random_range(0.05..P_MAX);
            p_r[[a, a + 1]] = p;
            p_r[[a + 1, a]] = p;
        }
    }
    for a in 0..n_r {
        let (best, _) = p_r
            .row(a)
            .iter()
            .enumerate()
            .fold((a, -1.0), |acc, (b, &p)| if p > acc.1 { (b, p) } else { acc });
        p_r[[a, best]] = P_MAX;
        p_r[[best, a]] = P_MAX;
    }
    let mut p_o = Array2::zeros((n_o, n_o));
    for a in 0..n_o {
        p_o[[a, a]] = P_MAX;
    }
    let weights = Array2::from_shape_fn((n_r, n_o), |_| rng.random_range(0.0..1.0));
    ProximityKB {
        type_vocabulary: (0..n_r).map(|t| format!("type{t}")).collect(),
        object_vocabulary: (0..n_o).map(|o| format!("object{o}")).collect(),
        p_r,
        p_o,
        top_objects: vec![Vec::new(); n_r],
        object_weights: Some(weights),
        provenance: Provenance {
            scene_count: 0,
            built_at_unix: 0,
            config_hash: format!("random-{seed_value:x}"),
        },
    }
}
