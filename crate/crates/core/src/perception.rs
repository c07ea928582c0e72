//! Perception stand-ins with controllable fidelity.
//!
//! Node-type beliefs come from a confusion model applied to the true type,
//! target specs from the target's type row and a mixture over object types,
//! and visual scores from a distance-decay plus type-alignment heuristic.
//! With the identity model and zero noise every output is ground truth.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HsprError, Result};
use crate::scene::SceneGraph;
use crate::seed;
use crate::synth::Episode;

pub const PERCEPTION_SCHEMA_VERSION: u64 = 1;
const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub y_r: Vec<f64>,
    pub y_o: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeBelief {
    pub node: usize,
    pub probs: Vec<f64>,
}

impl TypeBelief {
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectBelief {
    pub node: usize,
    /// One distribution over object types per object instance at the node,
    /// in the node's object order.
    pub per_object: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionMode {
    /// The belief is the whole confusion row.
    #[default]
    Distribution,
    /// The belief is one-hot on a label drawn from the row.
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionModel {
    pub matrix: Array2<f64>,
    pub mode: ConfusionMode,
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

fn is_distribution(v: ArrayView1<'_, f64>) -> bool {
    v.iter().all(|&x| x.is_finite() && x >= 0.0) && (v.sum() - 1.0).abs() <= NORM_TOL
}

impl ConfusionModel {
    pub fn new(matrix: Array2<f64>, mode: ConfusionMode) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.is_empty() {
            return Err(HsprError::Dimension(format!(
                "confusion matrix must be square and nonempty, got {:?}",
                matrix.dim()
            )));
        }
        if let Some(r) = matrix.rows().into_iter().position(|row| !is_distribution(row)) {
            return Err(HsprError::Invariant(format!(
                "confusion row {r} is not a probability distribution"
            )));
        }
        Ok(ConfusionModel { matrix, mode })
    }

    pub fn identity(n: usize) -> Self {
        ConfusionModel {
            matrix: Array2::eye(n),
            mode: ConfusionMode::Distribution,
        }
    }

    /// Identity mixed with the uniform matrix at level `eps`.
    pub fn eps_uniform(n: usize, eps: f64, mode: ConfusionMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(HsprError::Config(format!("confusion level {eps} outside [0, 1]")));
        }
        let matrix = Array2::from_shape_fn((n, n), |(i, j)| {
            let base = eps / n as f64;
            if i == j {
                1.0 - eps + base
            } else {
                base
            }
        });
        Self::new(matrix, mode)
    }

    pub fn n_types(&self) -> usize {
        self.matrix.nrows()
    }

    /// Belief for one node of true type `true_type`; `draw_seed` keys the
    /// sample in sampled mode.
    pub fn belief(&self, node: usize, true_type: usize, draw_seed: u64) -> TypeBelief {
        let row = self.matrix.row(true_type);
        let probs = match self.mode {
            ConfusionMode::Distribution => row.to_vec(),
            ConfusionMode::Sampled => one_hot(row.len(), sample_row(row, draw_seed)),
        };
        TypeBelief { node, probs }
    }

    pub fn to_json(&self) -> String {
        let file = ConfusionFile {
            schema_version: PERCEPTION_SCHEMA_VERSION,
            mode: self.mode,
            matrix: self.matrix.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("confusion model serialises");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str, context: &str) -> Result<Self> {
        let file: ConfusionFile = serde_json::from_str(text).map_err(|e| HsprError::parse(context, e))?;
        if file.schema_version != PERCEPTION_SCHEMA_VERSION {
            return Err(HsprError::SchemaVersion {
                context: context.to_string(),
                found: file.schema_version,
                expected: PERCEPTION_SCHEMA_VERSION,
            });
        }
        let n = file.matrix.len();
        if file.matrix.iter().any(|r| r.len() != n) {
            return Err(HsprError::Dimension(format!(
                "{context}: confusion matrix is not square"
            )));
        }
        let matrix = Array2::from_shape_vec((n, n), file.matrix.into_iter().flatten().collect())
            .map_err(|e| HsprError::Dimension(e.to_string()))?;
        Self::new(matrix, file.mode)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HsprError::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }
}

#[derive(Serialize, Deserialize)]
struct ConfusionFile {
    schema_version: u64,
    #[serde(default)]
    mode: ConfusionMode,
    matrix: Vec<Vec<f64>>,
}

fn sample_row(row: ArrayView1<'_, f64>, draw_seed: u64) -> usize {
    let u: f64 = seed::rng(draw_seed).random();
    let mut acc = 0.0;
    for (k, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left `u` past the cumulative sum: take the last positive entry.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Beliefs for a batch of `(node, true_type)` pairs.
pub fn perceive_node_types(true_types: &[(usize, usize)], model: &ConfusionModel, seed_value: u64) -> Vec<TypeBelief> {
    true_types
        .iter()
        .map(|&(node, t)| model.belief(node, t, seed::mix(seed_value, node as u64)))
        .collect()
}

/// Target spec for an episode: `Y_r` from the confusion row of the target
/// type and `Y_o` as a mixture of the target object type with uniform.
pub fn target_spec_from_episode(
    episode: &Episode,
    scene: &SceneGraph,
    model: &ConfusionModel,
    object_noise: f64,
    seed_value: u64,
) -> Result<TargetSpec> {
    episode.check(scene)?;
    if !(0.0..=1.0).contains(&object_noise) {
        return Err(HsprError::Config(format!("object noise {object_noise} outside [0, 1]")));
    }
    if model.n_types() != scene.type_vocabulary().len() {
        return Err(HsprError::Dimension("confusion model size differs from N_r".into()));
    }
    let target = scene.require_node(&episode.target_node)?;
    let object_type = scene
        .node(target)
        .objects
        .iter()
        .find(|o| o.object_id == episode.target_object)
        .map(|o| o.object_type)
        .expect("episode check passed");
    let y_r = model
        .belief(
            target,
            scene.node(target).node_type,
            seed::mix_str(seed_value, "target"),
        )
        .probs;
    let n_o = scene.object_vocabulary().len();
    let y_o = mixture(n_o, object_type, object_noise);
    Ok(TargetSpec { y_r, y_o })
}

/// `(1 - noise) * onehot(k) + noise * uniform`.
pub fn mixture(n: usize, k: usize, noise: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let base = noise / n as f64;
            if i == k {
                1.0 - noise + base
            } else {
                base
            }
        })
        .collect()
}

/// Object beliefs for every instance at `node`.
pub fn perceive_objects(scene: &SceneGraph, node: usize, object_noise: f64) -> ObjectBelief {
    let n_o = scene.object_vocabulary().len();
    ObjectBelief {
        node,
        per_object: scene
            .node(node)
            .objects
            .iter()
            .map(|o| mixture(n_o, o.object_type, object_noise))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualWeights {
    pub w_distance: f64,
    pub w_type: f64,
    /// Distance decay scale in metres.
    pub lambda: f64,
    pub noise_sd: f64,
}

impl Default for VisualWeights {
    fn default() -> Self {
        VisualWeights {
            w_distance: 0.5,
            w_type: 3.0,
            lambda: 5.0,
            noise_sd: 0.0,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Heuristic visual score per candidate:
/// `w_d * exp(-d / lambda) + w_t * (R . Y_r) + N(0, noise_sd)`.
/// Each node's noise is keyed by `(seed, node)`, so a node scores the same
/// no matter which other candidates share the table.
pub fn visual_score_stub(
    candidates: &[(f64, &TypeBelief)],
    target: &TargetSpec,
    weights: &VisualWeights,
    seed_value: u64,
) -> Result<Vec<f64>> {
    if weights.lambda.is_nan() || weights.lambda <= 0.0 {
        return Err(HsprError::Config("visual decay lambda must be positive".into()));
    }
    let normal = if weights.noise_sd > 0.0 {
        Some(Normal::new(0.0, weights.noise_sd).map_err(|e| HsprError::Config(e.to_string()))?)
    } else {
        None
    };
    Ok(candidates
        .iter()
        .map(|&(d, belief)| {
            let noise = normal.map_or(0.0, |n| {
                n.sample(&mut seed::rng(seed::mix(seed_value, belief.node as u64)))
            });
            weights.w_distance * (-d / weights.lambda).exp() + weights.w_type * dot(&belief.probs, &target.y_r) + noise
        })
        .collect())
}

/// Cross-entropy of beliefs against true types, summed over items. Entries at
/// the true type are floored at 1e-12.
pub fn node_classification_loss(beliefs: &[TypeBelief], truth: &[usize]) -> Result<f64> {
    if beliefs.len() != truth.len() {
        return Err(HsprError::Dimension(format!(
            "{} beliefs vs {} labels",
            beliefs.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    for (b, &t) in beliefs.iter().zip(truth) {
        let p = *b
            .probs
            .get(t)
            .ok_or_else(|| HsprError::Dimension(format!("label {t} outside belief of length {}", b.probs.len())))?;
        total -= p.max(1e-12).ln();
    }
    Ok(total)
}
