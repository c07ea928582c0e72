//! Proximity reasoning over node types.
//!
//! Direct proximity of a node to the target is the bilinear form
//! `R · P_r · Y_rᵀ`. When the frontier holds nothing close to the target, the
//! reasoner chains types instead: it enumerates type paths that start at a
//! type visible on the frontier and end at the target type, ranks them by the
//! product of their `P_r` transitions, and scores every navigable node
//! against the remaining sub-goals of the best feasible path with a
//! discounted, weighted sum.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{HsprError, Result};
use crate::perception::{argmax, ObjectBelief, TypeBelief};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerConfig {
    pub gamma: f64,
    /// Per-step weights; steps past the end of the list weigh 1.
    pub omega: Vec<f64>,
    pub max_steps: usize,
    pub beam: usize,
    pub feasibility_tau: f64,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            gamma: 0.9,
            omega: vec![1.0; 3],
            max_steps: 3,
            beam: 3,
            feasibility_tau: 0.5,
        }
    }
}

impl ReasonerConfig {
    pub fn with_steps(max_steps: usize) -> Self {
        ReasonerConfig {
            omega: vec![1.0; max_steps.max(1)],
            max_steps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(HsprError::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if self.max_steps == 0 || self.beam == 0 {
            return Err(HsprError::Config("reasoning steps and beam must be at least 1".into()));
        }
        if self.omega.iter().any(|w| !w.is_finite()) {
            return Err(HsprError::Config("omega weights must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.feasibility_tau) {
            return Err(HsprError::Config("feasibility tau outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn omega(&self, j: usize) -> f64 {
        self.omega.get(j).copied().unwrap_or(1.0)
    }
}

/// A type chain `s_1 -> ... -> target` with distinct entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypePath {
    pub types: Vec<usize>,
    pub confidence: f64,
}

impl TypePath {
    pub fn first(&self) -> usize {
        self.types[0]
    }

    pub fn target(&self) -> usize {
        *self.types.last().expect("paths are nonempty")
    }

    pub fn transitions(&self) -> usize {
        self.types.len() - 1
    }

    /// Types a frontier node is scored against: everything after the first
    /// (frontier) type, or the target itself for a one-element path.
    pub fn scoring_goals(&self) -> &[usize] {
        if self.types.len() == 1 {
            &self.types
        } else {
            &self.types[1..]
        }
    }
}

/// Ranking used for the beam: confidence descending, then fewer types, then
/// lexicographic type order.
pub fn path_order(a: &TypePath, b: &TypePath) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.types.len().cmp(&b.types.len()))
        .then_with(|| a.types.cmp(&b.types))
}

/// `r · p · yᵀ`.
pub fn bilinear(r: &[f64], p: &Array2<f64>, y: &[f64]) -> f64 {
    let mut total = 0.0;
    for (a, &ra) in r.iter().enumerate() {
        if ra == 0.0 {
            continue;
        }
        let row = p.row(a);
        let mut inner = 0.0;
        for (b, &yb) in y.iter().enumerate() {
            inner += row[b] * yb;
        }
        total += ra * inner;
    }
    total
}

fn check_square(p: &Array2<f64>, n: usize, what: &str) -> Result<()> {
    if p.dim() != (n, n) {
        return Err(HsprError::Dimension(format!(
            "{what} is {:?} but vectors have length {n}",
            p.dim()
        )));
    }
    Ok(())
}

/// Direct proximity of each node to the target type distribution.
pub fn proximity_scores(beliefs: &[TypeBelief], p_r: &Array2<f64>, y_r: &[f64]) -> Result<Vec<f64>> {
    check_square(p_r, y_r.len(), "P_r")?;
    beliefs
        .iter()
        .map(|b| {
            if b.probs.len() != y_r.len() {
                return Err(HsprError::Dimension(format!(
                    "belief of length {} vs N_r = {}",
                    b.probs.len(),
                    y_r.len()
                )));
            }
            Ok(bilinear(&b.probs, p_r, y_r))
        })
        .collect()
}

/// Proximity of each object instance at a node to the target object type.
pub fn object_proximity_scores(objects: &ObjectBelief, p_o: &Array2<f64>, y_o: &[f64]) -> Result<Vec<f64>> {
    check_square(p_o, y_o.len(), "P_o")?;
    objects
        .per_object
        .iter()
        .map(|o| {
            if o.len() != y_o.len() {
                return Err(HsprError::Dimension(format!(
                    "object belief of length {} vs N_o = {}",
                    o.len(),
                    y_o.len()
                )));
            }
            Ok(bilinear(o, p_o, y_o))
        })
        .collect()
}

/// Types on which some belief puts at least `tau` mass.
pub fn present_types(beliefs: &[TypeBelief], tau: f64) -> BTreeSet<usize> {
    beliefs
        .iter()
        .flat_map(|b| b.probs.iter().enumerate().filter(|(_, &p)| p >= tau).map(|(t, _)| t))
        .collect()
}

/// The `beam` most confident type paths from a present type to `target`
/// using at most `max_steps` transitions. Zero transitions prune.
pub fn enumerate_type_paths(
    present: &BTreeSet<usize>,
    target: usize,
    p_r: &Array2<f64>,
    config: &ReasonerConfig,
) -> Vec<TypePath> {
    let n_r = p_r.nrows();
    if target >= n_r {
        return Vec::new();
    }
    let mut found = Vec::new();
    let mut prefix = Vec::with_capacity(config.max_steps + 1);
    for &s1 in present.iter().filter(|&&s| s < n_r) {
        if s1 == target {
            found.push(TypePath {
                types: vec![target],
                confidence: 1.0,
            });
            continue;
        }
        prefix.clear();
        prefix.push(s1);
        extend(&mut prefix, 1.0, target, p_r, config.max_steps, &mut found);
    }
    found.sort_by(path_order);
    found.truncate(config.beam);
    found
}

fn extend(
    prefix: &mut Vec<usize>,
    conf: f64,
    target: usize,
    p_r: &Array2<f64>,
    max_steps: usize,
    out: &mut Vec<TypePath>,
) {
    let last = *prefix.last().expect("prefix nonempty");
    // Finishing at the target uses prefix.len() transitions in total.
    let done = conf * p_r[[last, target]];
    if done > 0.0 {
        let mut types = prefix.clone();
        types.push(target);
        out.push(TypePath {
            types,
            confidence: done,
        });
    }
    if prefix.len() + 1 > max_steps {
        return;
    }
    for s in 0..p_r.nrows() {
        if s == target || prefix.contains(&s) {
            continue;
        }
        let c = conf * p_r[[last, s]];
        if c > 0.0 {
            prefix.push(s);
            extend(prefix, c, target, p_r, max_steps, out);
            prefix.pop();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Path {
        path: TypePath,
        sub_goal: usize,
    },
    /// No candidate path is feasible; score with direct proximity.
    Fallback,
}

/// First path (in the given order) whose first type is held with at least
/// `tau` mass by some navigable node.
pub fn select_path(paths: &[TypePath], navigable: &[TypeBelief], tau: f64) -> Selection {
    for path in paths {
        let s1 = path.first();
        if navigable.iter().any(|b| b.probs.get(s1).is_some_and(|&p| p >= tau)) {
            return Selection::Path {
                path: path.clone(),
                sub_goal: s1,
            };
        }
    }
    Selection::Fallback
}

/// Discounted multi-step proximity of each node along `path`:
/// `Σ_j γ^(j-1) ω_j η^(j)`, where `η^(j)` is the node's proximity to the j-th
/// scoring goal. The final goal is the target, scored against `y_r` itself.
pub fn multi_step_scores(
    beliefs: &[TypeBelief],
    path: &TypePath,
    y_r: &[f64],
    p_r: &Array2<f64>,
    config: &ReasonerConfig,
) -> Result<Vec<f64>> {
    let n_r = y_r.len();
    check_square(p_r, n_r, "P_r")?;
    let goals = path.scoring_goals();
    if goals.is_empty() || goals.iter().any(|&g| g >= n_r) {
        return Err(HsprError::Dimension("path types outside the type vocabulary".into()));
    }
    let goal_vectors: Vec<Vec<f64>> = goals
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            if j + 1 == goals.len() {
                y_r.to_vec()
            } else {
                let mut v = vec![0.0; n_r];
                v[g] = 1.0;
                v
            }
        })
        .collect();
    beliefs
        .iter()
        .map(|b| {
            if b.probs.len() != n_r {
                return Err(HsprError::Dimension(format!(
                    "belief of length {} vs N_r = {n_r}",
                    b.probs.len()
                )));
            }
            let mut total = 0.0;
            for (j, goal) in goal_vectors.iter().enumerate() {
                total += config.gamma.powi(j as i32) * config.omega(j) * bilinear(&b.probs, p_r, goal);
            }
            Ok(total)
        })
        .collect()
}

/// One reasoning pass over the navigable set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reasoning {
    pub target_type: usize,
    pub candidates: Vec<TypePath>,
    pub selection: Selection,
}

pub fn reason(navigable: &[TypeBelief], y_r: &[f64], p_r: &Array2<f64>, config: &ReasonerConfig) -> Reasoning {
    let target_type = argmax(y_r);
    let present = present_types(navigable, config.feasibility_tau);
    let candidates = enumerate_type_paths(&present, target_type, p_r, config);
    let selection = select_path(&candidates, navigable, config.feasibility_tau);
    Reasoning {
        target_type,
        candidates,
        selection,
    }
}

/// Scores for `beliefs` under a reasoning outcome: multi-step along the
/// selected path, or direct proximity on fallback.
pub fn reasoned_scores(
    beliefs: &[TypeBelief],
    reasoning: &Reasoning,
    y_r: &[f64],
    p_r: &Array2<f64>,
    config: &ReasonerConfig,
) -> Result<Vec<f64>> {
    match &reasoning.selection {
        Selection::Path { path, .. } => multi_step_scores(beliefs, path, y_r, p_r, config),
        Selection::Fallback => proximity_scores(beliefs, p_r, y_r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn belief(node: usize, probs: Vec<f64>) -> TypeBelief {
        TypeBelief { node, probs }
    }

    fn one_hot(n: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        v
    }

    #[test]
    fn one_hot_selects_entry() {
        let p = arr2(&[[0.1, 0.2], [0.3, 0.4]]);
        let s = proximity_scores(&[belief(0, one_hot(2, 1))], &p, &one_hot(2, 0)).unwrap();
        assert_eq!(s, vec![0.3]);
    }

    #[test]
    fn uniform_gives_matrix_mean() {
        let p = arr2(&[[0.1, 0.2], [0.3, 0.4]]);
        let s = proximity_scores(&[belief(0, vec![0.5, 0.5])], &p, &[0.5, 0.5]).unwrap();
        assert!((s[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let p = arr2(&[[0.1, 0.2], [0.3, 0.4]]);
        assert!(proximity_scores(&[belief(0, vec![1.0])], &p, &[0.5, 0.5]).is_err());
        assert!(proximity_scores(&[], &p, &[1.0]).is_err());
    }

    #[test]
    fn object_scores_select_entry() {
        let p = arr2(&[[0.95, 0.1], [0.2, 0.95]]);
        let ob = ObjectBelief {
            node: 0,
            per_object: vec![one_hot(2, 0), one_hot(2, 1)],
        };
        assert_eq!(
            object_proximity_scores(&ob, &p, &one_hot(2, 1)).unwrap(),
            vec![0.1, 0.95]
        );
        let mu = object_proximity_scores(&ob, &p, &[0.5, 0.5]).unwrap();
        assert!((mu[0] - 0.525).abs() < 1e-15);
    }

    #[test]
    fn single_step_paths_are_direct() {
        let p = arr2(&[[0.0, 0.5, 0.2], [0.5, 0.0, 0.9], [0.2, 0.9, 0.0]]);
        let cfg = ReasonerConfig::with_steps(1);
        let present = BTreeSet::from([0, 1]);
        let paths = enumerate_type_paths(&present, 2, &p, &cfg);
        assert_eq!(paths.len(), 2);
        assert_eq!(paths[0].types, vec![1, 2]);
        assert_eq!(paths[0].confidence, 0.9);
        assert_eq!(paths[1].confidence, 0.2);
    }

    #[test]
    fn two_step_chain_found() {
        // a=0, b=1, t=2: a->t impossible, a->b->t = 0.81
        let p = arr2(&[[0.0, 0.9, 0.0], [0.9, 0.0, 0.9], [0.0, 0.9, 0.0]]);
        let cfg = ReasonerConfig::default();
        let paths = enumerate_type_paths(&BTreeSet::from([0]), 2, &p, &cfg);
        assert_eq!(paths[0].types, vec![0, 1, 2]);
        assert!((paths[0].confidence - 0.81).abs() < 1e-15);
    }

    #[test]
    fn target_on_frontier_is_a_sure_path() {
        let p = arr2(&[[0.0, 0.9], [0.9, 0.0]]);
        let paths = enumerate_type_paths(&BTreeSet::from([0, 1]), 1, &p, &ReasonerConfig::default());
        assert_eq!(
            paths[0],
            TypePath {
                types: vec![1],
                confidence: 1.0
            }
        );
    }

    #[test]
    fn selection_switches_to_sub_optimal() {
        let paths = vec![
            TypePath {
                types: vec![3, 2],
                confidence: 0.9,
            },
            TypePath {
                types: vec![1, 2],
                confidence: 0.5,
            },
        ];
        let nav = vec![belief(7, one_hot(4, 1))];
        assert_eq!(
            select_path(&paths, &nav, 0.5),
            Selection::Path {
                path: paths[1].clone(),
                sub_goal: 1
            }
        );
        let nav = vec![belief(7, one_hot(4, 3))];
        assert_eq!(
            select_path(&paths, &nav, 0.5),
            Selection::Path {
                path: paths[0].clone(),
                sub_goal: 3
            }
        );
        let nav = vec![belief(7, one_hot(4, 0))];
        assert_eq!(select_path(&paths, &nav, 0.5), Selection::Fallback);
    }

    #[test]
    fn single_element_path_reduces_to_direct() {
        let p = arr2(&[[0.3, 0.6], [0.6, 0.1]]);
        let beliefs = vec![belief(0, vec![0.2, 0.8]), belief(1, vec![1.0, 0.0])];
        let y = one_hot(2, 1);
        let path = TypePath {
            types: vec![1],
            confidence: 1.0,
        };
        let multi = multi_step_scores(&beliefs, &path, &y, &p, &ReasonerConfig::default()).unwrap();
        assert_eq!(multi, proximity_scores(&beliefs, &p, &y).unwrap());
    }

    #[test]
    fn discounted_sum_arithmetic() {
        // goals (1, 2): node of type 0 has P[0][1] = 0.5, P[0][2] = 0.4
        let p = arr2(&[[0.0, 0.5, 0.4], [0.5, 0.0, 0.9], [0.4, 0.9, 0.0]]);
        let path = TypePath {
            types: vec![0, 1, 2],
            confidence: 0.45,
        };
        let s = multi_step_scores(
            &[belief(0, one_hot(3, 0))],
            &path,
            &one_hot(3, 2),
            &p,
            &ReasonerConfig::default(),
        )
        .unwrap();
        assert!((s[0] - 0.86).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(ReasonerConfig::default().validate().is_ok());
        assert!(ReasonerConfig {
            gamma: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ReasonerConfig {
            max_steps: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
