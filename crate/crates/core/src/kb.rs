//! The hierarchical spatial proximity knowledge base.
//!
//! Scenes are reduced to three count matrices: region-type adjacency `C_r`,
//! object-type co-occurrence within a view `C_o`, and node-type/object-type
//! incidence `C_ro`. `C_r` and `C_o` are then turned into proximity matrices
//! with entries in `[0, 0.95]` by per-row outlier clamping at the 95th
//! percentile followed by min-max scaling.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HsprError, Result};
use crate::par;
use crate::scene::{region_adjacency, segment_regions, SceneGraph};

pub const KB_SCHEMA_VERSION: u64 = 1;
/// Upper end of every proximity probability.
pub const P_MAX: f64 = 0.95;
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrices {
    pub type_vocabulary: Vec<String>,
    pub object_vocabulary: Vec<String>,
    pub c_r: Array2<u64>,
    pub c_o: Array2<u64>,
    pub c_ro: Array2<u64>,
    pub scene_count: u64,
}

impl CountMatrices {
    pub fn new(type_vocabulary: Vec<String>, object_vocabulary: Vec<String>) -> Self {
        let (n_r, n_o) = (type_vocabulary.len(), object_vocabulary.len());
        CountMatrices {
            type_vocabulary,
            object_vocabulary,
            c_r: Array2::zeros((n_r, n_r)),
            c_o: Array2::zeros((n_o, n_o)),
            c_ro: Array2::zeros((n_r, n_o)),
            scene_count: 0,
        }
    }

    /// Empty counts sized for `scene`'s vocabularies.
    pub fn for_scene(scene: &SceneGraph) -> Self {
        Self::new(scene.type_vocabulary().to_vec(), scene.object_vocabulary().to_vec())
    }

    fn check_vocab(&self, scene: &SceneGraph) -> Result<()> {
        if self.type_vocabulary != scene.type_vocabulary() {
            return Err(HsprError::VocabularyMismatch(format!(
                "scene `{}` node-type vocabulary differs from the knowledge base",
                scene.scene_id()
            )));
        }
        if self.object_vocabulary != scene.object_vocabulary() {
            return Err(HsprError::VocabularyMismatch(format!(
                "scene `{}` object vocabulary differs from the knowledge base",
                scene.scene_id()
            )));
        }
        Ok(())
    }

    /// Adds one scene's adjacency and co-occurrence tallies.
    pub fn accumulate(&mut self, scene: &SceneGraph) -> Result<()> {
        self.check_vocab(scene)?;
        self.add_scene_unchecked(scene);
        Ok(())
    }

    fn add_scene_unchecked(&mut self, scene: &SceneGraph) {
        let regions = segment_regions(scene);
        let type_of = |id: &str| {
            regions
                .binary_search_by(|r| r.region_id.as_str().cmp(id))
                .map(|k| regions[k].region_type)
                .expect("adjacency pairs name segmented regions")
        };
        for (a, b) in region_adjacency(scene, &regions) {
            let (ta, tb) = (type_of(&a), type_of(&b));
            self.c_r[[ta, tb]] += 1;
            if ta != tb {
                self.c_r[[tb, ta]] += 1;
            }
        }

        for node in scene.nodes() {
            let mut per_view: Vec<BTreeSet<usize>> = Vec::new();
            for obj in &node.objects {
                if per_view.len() <= obj.view_index {
                    per_view.resize_with(obj.view_index + 1, BTreeSet::new);
                }
                per_view[obj.view_index].insert(obj.object_type);
                self.c_ro[[node.node_type, obj.object_type]] += 1;
            }
            for view in &per_view {
                let types: Vec<usize> = view.iter().copied().collect();
                for (i, &x) in types.iter().enumerate() {
                    for &y in &types[i + 1..] {
                        self.c_o[[x, y]] += 1;
                        self.c_o[[y, x]] += 1;
                    }
                }
            }
        }
        self.scene_count += 1;
    }

    /// Elementwise sum; associative and commutative.
    pub fn merge(mut self, other: &CountMatrices) -> Result<CountMatrices> {
        if self.type_vocabulary != other.type_vocabulary || self.object_vocabulary != other.object_vocabulary {
            return Err(HsprError::VocabularyMismatch(
                "cannot merge count matrices over different vocabularies".into(),
            ));
        }
        self.c_r += &other.c_r;
        self.c_o += &other.c_o;
        self.c_ro += &other.c_ro;
        self.scene_count += other.scene_count;
        Ok(self)
    }
}

/// Functional form of [`CountMatrices::accumulate`].
pub fn accumulate_scene(mut counts: CountMatrices, scene: &SceneGraph) -> Result<CountMatrices> {
    counts.accumulate(scene)?;
    Ok(counts)
}

/// Accumulates many scenes, splitting the work over `threads` workers.
pub fn accumulate_scenes(
    type_vocabulary: &[String],
    object_vocabulary: &[String],
    scenes: &[SceneGraph],
    threads: usize,
) -> Result<CountMatrices> {
    let empty = CountMatrices::new(type_vocabulary.to_vec(), object_vocabulary.to_vec());
    for scene in scenes {
        empty.check_vocab(scene)?;
    }
    Ok(par::fold_merge(
        scenes,
        threads,
        || empty.clone(),
        |mut acc, scene| {
            acc.add_scene_unchecked(scene);
            acc
        },
        |a, b| a.merge(&b).expect("vocabularies checked up front"),
    ))
}

/// 95th percentile by linear interpolation at rank `0.95 * (n - 1)` of the
/// sorted values.
pub fn percentile95(sorted: &[f64]) -> f64 {
    let rank = 0.95 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Clamp at the row's 95th percentile, then min-max scale into `[0, 0.95]`.
/// A constant row (after clamping) maps to all zeros.
pub fn normalize_row(row: ArrayView1<'_, f64>) -> Vec<f64> {
    if row.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = row.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cap = percentile95(&sorted);
    let clamped: Vec<f64> = row.iter().map(|&c| c.min(cap)).collect();
    let min = clamped.iter().copied().fold(f64::INFINITY, f64::min);
    let max = clamped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.0; clamped.len()];
    }
    // dividing first keeps the row maximum at exactly P_MAX
    clamped.iter().map(|&c| (c - min) / (max - min) * P_MAX).collect()
}

/// Row-wise proximity normalisation of a real-valued count matrix.
pub fn normalize_matrix(counts: &Array2<f64>) -> Result<Array2<f64>> {
    if let Some(bad) = counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(HsprError::Invariant(format!(
            "count matrix has negative or non-finite entry {bad}"
        )));
    }
    let mut out = Array2::zeros(counts.raw_dim());
    for (i, row) in counts.rows().into_iter().enumerate() {
        for (j, v) in normalize_row(row).into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

pub fn normalize_counts(counts: &Array2<u64>) -> Array2<f64> {
    normalize_matrix(&counts.mapv(|c| c as f64)).expect("integer counts are non-negative")
}

/// The `k` object types most often seen with each node type, by descending
/// count, ties by ascending index, zero counts omitted.
pub fn top_k_objects(c_ro: &Array2<u64>, k: usize) -> Vec<Vec<usize>> {
    c_ro.rows()
        .into_iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..row.len()).filter(|&o| row[o] > 0).collect();
            idx.sort_by(|&a, &b| row[b].cmp(&row[a]).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene_count: u64,
    pub built_at_unix: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityKB {
    pub type_vocabulary: Vec<String>,
    pub object_vocabulary: Vec<String>,
    pub p_r: Array2<f64>,
    pub p_o: Array2<f64>,
    pub top_objects: Vec<Vec<usize>>,
    /// Row-normalised `C_ro`: how often each object type shows up at a node
    /// of each type. Used as sampling weights by the scene generator.
    pub object_weights: Option<Array2<f64>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct KbBuildConfig {
    pub top_k: usize,
    pub built_at_unix: u64,
}

impl Default for KbBuildConfig {
    fn default() -> Self {
        KbBuildConfig {
            top_k: DEFAULT_TOP_K,
            built_at_unix: 0,
        }
    }
}

/// Row-normalises counts to sum to one; all-zero rows stay zero.
pub fn row_frequencies(counts: &Array2<u64>) -> Array2<f64> {
    let mut out = counts.mapv(|c| c as f64);
    for mut row in out.rows_mut() {
        let total: f64 = row.sum();
        if total > 0.0 {
            row.mapv_inplace(|c| c / total);
        }
    }
    out
}

impl ProximityKB {
    pub fn from_counts(counts: &CountMatrices, config: &KbBuildConfig) -> Result<Self> {
        if config.top_k == 0 {
            return Err(HsprError::Config("top-k must be at least 1".into()));
        }
        let mut hasher = Sha256::new();
        hasher.update(format!("top_k={};scenes={};", config.top_k, counts.scene_count));
        for v in counts.type_vocabulary.iter().chain(&counts.object_vocabulary) {
            hasher.update(v.as_bytes());
            hasher.update([0u8]);
        }
        let config_hash = hex::encode(&hasher.finalize()[..8]);
        Ok(ProximityKB {
            type_vocabulary: counts.type_vocabulary.clone(),
            object_vocabulary: counts.object_vocabulary.clone(),
            p_r: normalize_counts(&counts.c_r),
            p_o: normalize_counts(&counts.c_o),
            top_objects: top_k_objects(&counts.c_ro, config.top_k),
            object_weights: Some(row_frequencies(&counts.c_ro)),
            provenance: Provenance {
                scene_count: counts.scene_count,
                built_at_unix: config.built_at_unix,
                config_hash,
            },
        })
    }

    pub fn n_types(&self) -> usize {
        self.type_vocabulary.len()
    }

    pub fn n_objects(&self) -> usize {
        self.object_vocabulary.len()
    }

    pub fn check_scene(&self, scene: &SceneGraph) -> Result<()> {
        if self.type_vocabulary != scene.type_vocabulary() || self.object_vocabulary != scene.object_vocabulary() {
            return Err(HsprError::VocabularyMismatch(format!(
                "knowledge base vocabularies do not match scene `{}`",
                scene.scene_id()
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let (n_r, n_o) = (self.n_types(), self.n_objects());
        if self.p_r.dim() != (n_r, n_r) {
            return Err(HsprError::Dimension(format!(
                "P_r is {:?}, expected ({n_r}, {n_r})",
                self.p_r.dim()
            )));
        }
        if self.p_o.dim() != (n_o, n_o) {
            return Err(HsprError::Dimension(format!(
                "P_o is {:?}, expected ({n_o}, {n_o})",
                self.p_o.dim()
            )));
        }
        for (name, m) in [("P_r", &self.p_r), ("P_o", &self.p_o)] {
            if let Some(v) = m.iter().find(|v| !(0.0..=P_MAX).contains(*v)) {
                return Err(HsprError::Invariant(format!("{name} entry {v} outside [0, 0.95]")));
            }
        }
        if self.top_objects.len() != n_r || self.top_objects.iter().flatten().any(|&o| o >= n_o) {
            return Err(HsprError::Invariant("top_objects does not fit the vocabularies".into()));
        }
        if let Some(w) = &self.object_weights {
            if w.dim() != (n_r, n_o) || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(HsprError::Invariant("object_weights malformed".into()));
            }
        }
        Ok(())
    }

    /// JSON form. `P_o` is written sparse when its nonzero density is below
    /// `sparse_below`; floats use the shortest round-trip representation.
    pub fn to_json(&self, sparse_below: f64) -> String {
        let nonzero = self.p_o.iter().filter(|v| **v != 0.0).count();
        let density = if self.p_o.is_empty() {
            1.0
        } else {
            nonzero as f64 / self.p_o.len() as f64
        };
        let p_o = if density < sparse_below {
            MatrixFile::Sparse {
                format: SparseTag::Sparse,
                size: self.n_objects(),
                entries: self
                    .p_o
                    .indexed_iter()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|((r, c), v)| (r, c, *v))
                    .collect(),
            }
        } else {
            MatrixFile::Dense(rows(&self.p_o))
        };
        let file = KbFile {
            schema_version: KB_SCHEMA_VERSION,
            type_vocabulary: self.type_vocabulary.clone(),
            object_vocabulary: self.object_vocabulary.clone(),
            p_r: rows(&self.p_r),
            p_o,
            top_objects: self.top_objects.clone(),
            object_weights: self.object_weights.as_ref().map(rows),
            provenance: self.provenance.clone(),
        };
        let mut s = serde_json::to_string(&file).expect("kb serialises");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str, context: &str) -> Result<Self> {
        let file: KbFile = serde_json::from_str(text).map_err(|e| HsprError::parse(context, e))?;
        if file.schema_version != KB_SCHEMA_VERSION {
            return Err(HsprError::SchemaVersion {
                context: context.to_string(),
                found: file.schema_version,
                expected: KB_SCHEMA_VERSION,
            });
        }
        let n_o = file.object_vocabulary.len();
        let p_o = match file.p_o {
            MatrixFile::Dense(r) => from_rows(r, "P_o")?,
            MatrixFile::Sparse { size, entries, .. } => {
                if size != n_o {
                    return Err(HsprError::Dimension(format!("sparse P_o size {size} != N_o {n_o}")));
                }
                let mut m = Array2::zeros((size, size));
                for (r, c, v) in entries {
                    if r >= size || c >= size {
                        return Err(HsprError::Dimension(format!(
                            "sparse P_o entry ({r}, {c}) out of range"
                        )));
                    }
                    m[[r, c]] = v;
                }
                m
            }
        };
        let kb = ProximityKB {
            p_r: from_rows(file.p_r, "P_r")?,
            p_o,
            type_vocabulary: file.type_vocabulary,
            object_vocabulary: file.object_vocabulary,
            top_objects: file.top_objects,
            object_weights: file
                .object_weights
                .map(|w| from_rows(w, "object_weights"))
                .transpose()?,
            provenance: file.provenance,
        };
        kb.validate()?;
        Ok(kb)
    }
}

pub fn save_kb(kb: &ProximityKB, path: impl AsRef<Path>, sparse_below: f64) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, kb.to_json(sparse_below)).map_err(|e| HsprError::io(path, e))
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<ProximityKB> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HsprError::io(path, e))?;
    ProximityKB::from_json_str(&text, &path.display().to_string())
}

/// Writes and re-reads a KB.
pub fn kb_round_trip(kb: &ProximityKB, path: impl AsRef<Path>, sparse_below: f64) -> Result<ProximityKB> {
    save_kb(kb, path.as_ref(), sparse_below)?;
    load_kb(path)
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>, name: &str) -> Result<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(HsprError::Dimension(format!("{name} rows have unequal lengths")));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect())
        .map_err(|e| HsprError::Dimension(format!("{name}: {e}")))
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SparseTag {
    Sparse,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixFile {
    Dense(Vec<Vec<f64>>),
    Sparse {
        format: SparseTag,
        size: usize,
        entries: Vec<(usize, usize, f64)>,
    },
}

#[derive(Serialize, Deserialize)]
struct KbFile {
    schema_version: u64,
    type_vocabulary: Vec<String>,
    object_vocabulary: Vec<String>,
    #[serde(rename = "P_r")]
    p_r: Vec<Vec<f64>>,
    #[serde(rename = "P_o")]
    p_o: MatrixFile,
    top_objects: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    object_weights: Option<Vec<Vec<f64>>>,
    provenance: Provenance,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::fixtures::*;
    use crate::scene::{NodeRecord, ObjectInstance};
    use ndarray::{arr1, arr2};

    fn obj(id: &str, t: usize, view: usize) -> ObjectInstance {
        ObjectInstance {
            object_id: id.into(),
            object_type: t,
            view_index: view,
            heading: 0.0,
            elevation: 0.0,
        }
    }

    #[test]
    fn constant_row_is_zero() {
        assert_eq!(normalize_row(arr1(&[4.0, 4.0, 4.0, 4.0]).view()), vec![0.0; 4]);
    }

    #[test]
    fn outlier_is_clamped_at_p95() {
        // p95 = 8 + 0.85 * 92 = 86.2
        let out = normalize_row(arr1(&[0.0, 2.0, 8.0, 100.0]).view());
        let expected = [0.0, 0.95 * 2.0 / 86.2, 0.95 * 8.0 / 86.2, 0.95];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{out:?}");
        }
        assert!((out[1] - 0.02204).abs() < 1e-5 && (out[2] - 0.08817).abs() < 1e-5);
    }

    #[test]
    fn row_inside_percentile() {
        // p95 of [1,2,3] is 2.9, so 3 clamps to 2.9 and still maps to 0.95.
        let out = normalize_row(arr1(&[1.0, 2.0, 3.0]).view());
        assert_eq!(out[0], 0.0);
        assert_eq!(out[2], 0.95);
        assert!((out[1] - 0.95 * 1.0 / 1.9).abs() < 1e-12);
    }

    #[test]
    fn negative_counts_rejected() {
        assert!(normalize_matrix(&arr2(&[[1.0, -1.0]])).is_err());
    }

    #[test]
    fn top_k_tie_break_and_zeros() {
        let c = arr2(&[[5u64, 9, 9, 1], [0, 0, 0, 0], [0, 3, 0, 0]]);
        assert_eq!(top_k_objects(&c, 2), vec![vec![1, 2], vec![], vec![1]]);
    }

    fn three_region_scene() -> SceneGraph {
        // kitchen(0) - hall(1) - bed(2)
        let mut k = node("k", "kitchen", 0, 0.0);
        k.objects = vec![obj("o1", 0, 3), obj("o2", 1, 3), obj("o3", 2, 3), obj("o4", 0, 4)];
        let nodes = vec![k, node("h", "hall", 1, 1.0), node("b", "bed", 2, 2.0)];
        SceneGraph::new(
            "s",
            vocab("t", 3),
            vocab("o", 3),
            nodes,
            vec![edge("k", "h", 1.0), edge("h", "b", 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn accumulate_counts_by_hand() {
        let s = three_region_scene();
        let c = accumulate_scene(CountMatrices::for_scene(&s), &s).unwrap();
        assert_eq!(c.c_r, arr2(&[[0, 1, 0], [1, 0, 1], [0, 1, 0]]));
        // view 3 holds types {0,1,2}; view 4 only type 0.
        assert_eq!(c.c_o, arr2(&[[0, 1, 1], [1, 0, 1], [1, 1, 0]]));
        assert_eq!(c.c_ro, arr2(&[[2, 1, 1], [0, 0, 0], [0, 0, 0]]));
        assert_eq!(c.scene_count, 1);
    }

    #[test]
    fn empty_contribution_only_bumps_scene_count() {
        let s = SceneGraph::new("s", vocab("t", 2), vocab("o", 2), vec![node("a", "r", 0, 0.0)], vec![]).unwrap();
        let c = accumulate_scene(CountMatrices::for_scene(&s), &s).unwrap();
        let mut expected = CountMatrices::for_scene(&s);
        expected.scene_count = 1;
        assert_eq!(c, expected);
    }

    #[test]
    fn same_type_adjacency_hits_diagonal_once() {
        let nodes = vec![node("a", "r1", 0, 0.0), node("b", "r2", 0, 1.0)];
        let s = SceneGraph::new("s", vocab("t", 1), vocab("o", 1), nodes, vec![edge("a", "b", 1.0)]).unwrap();
        let c = accumulate_scene(CountMatrices::for_scene(&s), &s).unwrap();
        assert_eq!(c.c_r[[0, 0]], 1);
    }

    #[test]
    fn vocabulary_mismatch_is_an_error() {
        let s = three_region_scene();
        let counts = CountMatrices::new(vocab("t", 3), vocab("x", 3));
        assert!(matches!(
            accumulate_scene(counts, &s),
            Err(HsprError::VocabularyMismatch(_))
        ));
    }

    #[test]
    fn kb_round_trip_dense_and_sparse() {
        let s = three_region_scene();
        let c = accumulate_scene(CountMatrices::for_scene(&s), &s).unwrap();
        let kb = ProximityKB::from_counts(&c, &KbBuildConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for threshold in [0.0, 1.1] {
            let back = kb_round_trip(&kb, dir.path().join("kb.json"), threshold).unwrap();
            assert_eq!(back, kb);
        }
        assert!(kb.to_json(1.1).contains("\"format\":\"sparse\""));
    }

    #[test]
    fn kb_schema_version_checked() {
        let s = three_region_scene();
        let c = accumulate_scene(CountMatrices::for_scene(&s), &s).unwrap();
        let kb = ProximityKB::from_counts(&c, &KbBuildConfig::default()).unwrap();
        let text = kb.to_json(0.0).replace("\"schema_version\":1", "\"schema_version\":9");
        assert!(matches!(
            ProximityKB::from_json_str(&text, "x"),
            Err(HsprError::SchemaVersion { found: 9, .. })
        ));
    }

    #[test]
    fn out_of_range_probability_rejected() {
        let mut node_b = NodeRecord {
            ..node("b", "r2", 1, 1.0)
        };
        node_b.objects.push(obj("o", 0, 0));
        let s = SceneGraph::new(
            "s",
            vocab("t", 2),
            vocab("o", 1),
            vec![node("a", "r1", 0, 0.0), node_b],
            vec![edge("a", "b", 1.0)],
        )
        .unwrap();
        let c = accumulate_scene(CountMatrices::for_scene(&s), &s).unwrap();
        let mut kb = ProximityKB::from_counts(&c, &KbBuildConfig::default()).unwrap();
        kb.p_r[[0, 1]] = 0.99;
        assert!(ProximityKB::from_json_str(&kb.to_json(0.0), "x").is_err());
    }
}
