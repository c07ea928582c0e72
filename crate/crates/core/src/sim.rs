//! Episode execution: observe, perceive, reason, score, fuse, act, route.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HsprError, Result};
use crate::fusion::{
    balance_factor, variant_fusion, ActionKey, ActionScoreTable, BalancePolicy, BalanceState, DynamicContext,
    FusionInputs, FusionMode,
};
use crate::kb::ProximityKB;
use crate::par;
use crate::perception::{
    dot, perceive_objects, target_spec_from_episode, visual_score_stub, ConfusionModel, TargetSpec, TypeBelief,
    VisualWeights,
};
use crate::reasoner::{object_proximity_scores, proximity_scores, reason, reasoned_scores, ReasonerConfig, Reasoning};
use crate::scene::SceneGraph;
use crate::seed;
use crate::synth::Episode;
use crate::topo::{all_pairs_shortest_paths, route_to, ConfusionPerceiver, MapEntry, SemanticTopoMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Hspr,
    /// Direct proximity plus visual scores, no path reasoning.
    GreedyEta,
    VisualOnly,
    Random,
}

impl FromStr for Policy {
    type Err = HsprError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hspr" => Ok(Policy::Hspr),
            "greedy_eta" => Ok(Policy::GreedyEta),
            "visual_only" => Ok(Policy::VisualOnly),
            "random" => Ok(Policy::Random),
            other => Err(HsprError::Config(format!(
                "unknown policy '{other}' (expected hspr, greedy_eta, visual_only or random)"
            ))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Hspr => "hspr",
            Policy::GreedyEta => "greedy_eta",
            Policy::VisualOnly => "visual_only",
            Policy::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopWeights {
    pub w_type: f64,
    pub w_obj: f64,
}

impl Default for StopWeights {
    fn default() -> Self {
        StopWeights {
            w_type: 0.25,
            w_obj: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionConfig {
    pub confusion: ConfusionModel,
    /// Uniform mass mixed into object and target-object beliefs.
    pub object_noise: f64,
    pub visual: VisualWeights,
}

impl PerceptionConfig {
    pub fn oracle(n_types: usize) -> Self {
        PerceptionConfig {
            confusion: ConfusionModel::identity(n_types),
            object_noise: 0.0,
            visual: VisualWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub reasoner: ReasonerConfig,
    pub fusion_mode: FusionMode,
    pub beta_policy: BalancePolicy,
    /// Local nodes score `η_f` alone instead of `η_f + ε_f`.
    pub proximity_only_local: bool,
    pub perception: PerceptionConfig,
    pub max_actions: usize,
    pub stop_weights: StopWeights,
    pub seed: u64,
    pub trace: bool,
}

impl AgentConfig {
    pub fn new(perception: PerceptionConfig, seed: u64) -> Self {
        AgentConfig {
            reasoner: ReasonerConfig::default(),
            fusion_mode: FusionMode::Residual,
            beta_policy: BalancePolicy::default(),
            proximity_only_local: false,
            perception,
            max_actions: 15,
            stop_weights: StopWeights::default(),
            seed,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_actions == 0 {
            return Err(HsprError::Config("max_actions must be at least 1".into()));
        }
        self.reasoner.validate()?;
        self.beta_policy.validate()?;
        if !(0.0..=1.0).contains(&self.perception.object_noise) {
            return Err(HsprError::Config("object noise outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Stable description of every setting that affects trajectories.
    pub fn describe(&self) -> String {
        format!(
            "reasoner={} fusion={} beta={} proximity_only_local={} confusion={} object_noise={} visual={} max_actions={} stop={} seed={}",
            serde_json::to_string(&self.reasoner).expect("serializable"),
            self.fusion_mode,
            self.beta_policy,
            self.proximity_only_local,
            self.perception.confusion.to_json().trim(),
            self.perception.object_noise,
            serde_json::to_string(&self.perception.visual).expect("serializable"),
            self.max_actions,
            serde_json::to_string(&self.stop_weights).expect("serializable"),
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Move(String),
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedScore {
    pub action: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_f: Option<f64>,
    pub l_c: f64,
    pub l_f: f64,
    pub l_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub current: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<Reasoning>,
    pub scores: Vec<TracedScore>,
    pub map: Vec<MapEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: String,
    pub scene_id: String,
    pub policy: Policy,
    pub node_sequence: Vec<String>,
    pub action_sequence: Vec<Action>,
    pub stop_node: String,
    pub selected_object: Option<String>,
    pub total_length: f64,
    /// The action budget ran out before the agent chose to stop.
    pub forced_stop: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<StepTrace>>,
}

/// `w_type * (R_current . Y_r) + w_obj * max μ` over the node's objects.
pub fn stop_score(current: &TypeBelief, object_scores: &[f64], target: &TargetSpec, weights: &StopWeights) -> f64 {
    let type_term = dot(&current.probs, &target.y_r);
    let object_term = object_scores
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    weights.w_type * type_term + weights.w_obj * object_term.unwrap_or(0.0)
}

/// Highest-μ object at `node`; ties go to the smaller object id.
pub fn ground_object(scene: &SceneGraph, node: usize, object_scores: &[f64]) -> Option<String> {
    let objects = &scene.node(node).objects;
    let mut best: Option<(usize, f64)> = None;
    for (k, (obj, &mu)) in objects.iter().zip(object_scores).enumerate() {
        best = match best {
            Some((b, bmu)) if bmu > mu || (bmu == mu && objects[b].object_id <= obj.object_id) => Some((b, bmu)),
            _ => Some((k, mu)),
        };
    }
    best.map(|(k, _)| objects[k].object_id.clone())
}

fn object_scores_at(
    scene: &SceneGraph,
    node: usize,
    kb: &ProximityKB,
    agent: &AgentConfig,
    target: &TargetSpec,
) -> Result<Vec<f64>> {
    let beliefs = perceive_objects(scene, node, agent.perception.object_noise);
    object_proximity_scores(&beliefs, &kb.p_o, &target.y_o)
}

fn traced(table: &ActionScoreTable, scene: &SceneGraph) -> Vec<TracedScore> {
    table
        .rows
        .iter()
        .map(|r| TracedScore {
            action: match r.action {
                ActionKey::Stop => "stop".to_string(),
                ActionKey::Node(i) => scene.node(i).node_id.clone(),
            },
            epsilon_c: r.epsilon_c,
            epsilon_f: r.epsilon_f,
            eta_c: r.eta_c,
            eta_f: r.eta_f,
            l_c: r.l_c,
            l_f: r.l_f,
            l_final: r.l_final,
        })
        .collect()
}

struct Decision {
    action: ActionKey,
    beta: Option<f64>,
    reasoning: Option<Reasoning>,
    table: Option<ActionScoreTable>,
}

/// Per-episode seed, shared by every policy so baselines see the same draws.
pub fn episode_seed(agent_seed: u64, episode_id: &str) -> u64 {
    seed::mix_str(agent_seed, episode_id)
}

pub fn run_episode(
    scene: &SceneGraph,
    episode: &Episode,
    kb: &ProximityKB,
    agent: &AgentConfig,
    policy: Policy,
) -> Result<Trajectory> {
    agent.validate()?;
    kb.check_scene(scene)?;
    if episode.scene_id != scene.scene_id() {
        return Err(HsprError::EpisodeMismatch {
            episode: episode.episode_id.clone(),
            scene: scene.scene_id().to_string(),
            reason: format!("episode belongs to scene `{}`", episode.scene_id),
        });
    }
    episode.check(scene)?;
    if agent.perception.confusion.n_types() != kb.n_types() {
        return Err(HsprError::Dimension(
            "confusion model size differs from the KB's N_r".into(),
        ));
    }

    let ep_seed = episode_seed(agent.seed, &episode.episode_id);
    let target = target_spec_from_episode(
        episode,
        scene,
        &agent.perception.confusion,
        agent.perception.object_noise,
        seed::mix_str(ep_seed, "target"),
    )?;
    let mut perceiver = ConfusionPerceiver {
        model: &agent.perception.confusion,
        seed: seed::mix_str(ep_seed, "types"),
    };
    let mut random = seed::rng(seed::mix_str(ep_seed, "random"));

    let start = scene.require_node(&episode.start_node)?;
    let mut map = SemanticTopoMap::new();
    map.observe(scene, start, &mut perceiver)?;
    let mut node_sequence = vec![scene.node(start).node_id.clone()];
    let mut actions = Vec::new();
    let mut total_length = 0.0;
    let mut trace = agent.trace.then(Vec::new);
    let mut forced_stop = true;

    for step in 0..agent.max_actions {
        let current = map.current().expect("observed at least once");
        let routing = all_pairs_shortest_paths(&map);
        let decision = match policy {
            Policy::Random => {
                let (local, global) = map.navigable_sets();
                let pool = if local.is_empty() { global } else { local };
                let pick = random.random_range(0..=pool.len());
                Decision {
                    action: if pick == pool.len() {
                        ActionKey::Stop
                    } else {
                        ActionKey::Node(pool[pick])
                    },
                    beta: None,
                    reasoning: None,
                    table: None,
                }
            }
            _ => decide(
                scene, kb, agent, policy, &target, &map, &routing, current, ep_seed, step,
            )?,
        };
        if let Some(t) = trace.as_mut() {
            t.push(StepTrace {
                step,
                current: scene.node(current).node_id.clone(),
                beta: decision.beta,
                reasoning: decision.reasoning.clone(),
                scores: decision.table.as_ref().map(|tb| traced(tb, scene)).unwrap_or_default(),
                map: map.snapshot(scene),
            });
        }
        match decision.action {
            ActionKey::Stop => {
                actions.push(Action::Stop);
                forced_stop = false;
                break;
            }
            ActionKey::Node(goal) => {
                actions.push(Action::Move(scene.node(goal).node_id.clone()));
                let route = route_to(&map, &routing, goal, scene)?;
                for pair in route.windows(2) {
                    total_length += scene.edge_length(pair[0], pair[1]).ok_or_else(|| {
                        HsprError::Invariant(format!(
                            "route hop {} -> {} is not a scene edge",
                            scene.node(pair[0]).node_id,
                            scene.node(pair[1]).node_id
                        ))
                    })?;
                    map.observe(scene, pair[1], &mut perceiver)?;
                    node_sequence.push(scene.node(pair[1]).node_id.clone());
                }
            }
        }
    }

    let stop = map.current().expect("observed at least once");
    let mu = object_scores_at(scene, stop, kb, agent, &target)?;
    Ok(Trajectory {
        episode_id: episode.episode_id.clone(),
        scene_id: scene.scene_id().to_string(),
        policy,
        node_sequence,
        action_sequence: actions,
        stop_node: scene.node(stop).node_id.clone(),
        selected_object: ground_object(scene, stop, &mu),
        total_length,
        forced_stop,
        trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn decide(
    scene: &SceneGraph,
    kb: &ProximityKB,
    agent: &AgentConfig,
    policy: Policy,
    target: &TargetSpec,
    map: &SemanticTopoMap,
    routing: &crate::topo::RoutingTable,
    current: usize,
    ep_seed: u64,
    step: usize,
) -> Result<Decision> {
    let (local, global) = map.navigable_sets();
    let belief_of = |i: usize| &map.node(i).expect("known node").belief;
    let beliefs_c: Vec<TypeBelief> = global.iter().map(|&i| belief_of(i).clone()).collect();
    let beliefs_f: Vec<TypeBelief> = local.iter().map(|&i| belief_of(i).clone()).collect();

    let reasoning = (policy == Policy::Hspr).then(|| reason(&beliefs_c, &target.y_r, &kb.p_r, &agent.reasoner));
    let eta = |beliefs: &[TypeBelief]| -> Result<Vec<f64>> {
        match (&reasoning, policy) {
            (Some(r), _) => reasoned_scores(beliefs, r, &target.y_r, &kb.p_r, &agent.reasoner),
            (None, Policy::VisualOnly) => Ok(vec![0.0; beliefs.len()]),
            (None, _) => proximity_scores(beliefs, &kb.p_r, &target.y_r),
        }
    };
    let eta_c = eta(&beliefs_c)?;
    let eta_f = eta(&beliefs_f)?;

    let seed_c = seed::mix(seed::mix_str(ep_seed, "visual_c"), step as u64);
    let seed_f = seed::mix(seed::mix_str(ep_seed, "visual_f"), step as u64);
    let visual = &agent.perception.visual;
    let cands_c: Vec<(f64, &TypeBelief)> = global
        .iter()
        .zip(&beliefs_c)
        .map(|(&i, b)| (routing.dist(current, i), b))
        .collect();
    let epsilon_c = visual_score_stub(&cands_c, target, visual, seed_c)?;
    let local_distance = |i: usize| map.edge_length(current, i).unwrap_or_else(|| routing.dist(current, i));
    let cands_f: Vec<(f64, &TypeBelief)> = local
        .iter()
        .zip(&beliefs_f)
        .map(|(&i, b)| (local_distance(i), b))
        .collect();
    let epsilon_f = visual_score_stub(&cands_f, target, visual, seed_f)?;

    let mu = object_scores_at(scene, current, kb, agent, target)?;
    let stop = stop_score(belief_of(current), &mu, target, &agent.stop_weights);

    let visited = map.visited();
    let state = BalanceState {
        visited: visited.len(),
        known: map.nodes().len(),
        features: vec![
            visited.len() as f64 / map.nodes().len() as f64,
            if global.is_empty() {
                0.0
            } else {
                local.len() as f64 / global.len() as f64
            },
        ],
    };
    let beta = balance_factor(&agent.beta_policy, &state)?;

    let visited_scores = if agent.fusion_mode == FusionMode::Dynamic {
        let beliefs_v: Vec<TypeBelief> = visited.iter().map(|&i| belief_of(i).clone()).collect();
        let eta_v = eta(&beliefs_v)?;
        let cands_v: Vec<(f64, &TypeBelief)> = visited
            .iter()
            .zip(&beliefs_v)
            .map(|(&i, b)| (routing.dist(current, i), b))
            .collect();
        let eps_v = visual_score_stub(&cands_v, target, visual, seed_f)?;
        visited
            .iter()
            .zip(eta_v.iter().zip(&eps_v))
            .map(|(&i, (e, v))| (i, e + v))
            .collect()
    } else {
        BTreeMap::new()
    };
    let dynamic = DynamicContext {
        routing,
        current,
        visited_scores: &visited_scores,
    };
    let inputs = FusionInputs {
        global: &global,
        local: &local,
        eta_c: &eta_c,
        epsilon_c: &epsilon_c,
        eta_f: &eta_f,
        epsilon_f: &epsilon_f,
    };
    let table = variant_fusion(
        agent.fusion_mode,
        &inputs,
        stop,
        beta,
        agent.proximity_only_local,
        Some(&dynamic),
    )?;
    Ok(Decision {
        action: table.best(),
        beta: Some(table.beta),
        reasoning,
        table: Some(table),
    })
}

/// Outcome of one episode in a batch.
#[derive(Debug)]
pub struct EpisodeOutcome {
    pub episode_id: String,
    pub result: Result<Trajectory>,
}

/// Runs every episode, `threads` at a time (0 = all cores). Results are
/// sorted by episode id and do not depend on `threads`.
pub fn run_batch(
    scenes: &[SceneGraph],
    episodes: &[Episode],
    kb: &ProximityKB,
    agent: &AgentConfig,
    policy: Policy,
    threads: usize,
) -> Vec<EpisodeOutcome> {
    let by_id: BTreeMap<&str, &SceneGraph> = scenes.iter().map(|s| (s.scene_id(), s)).collect();
    let mut outcomes = par::map_ordered(episodes, threads, |ep| {
        let result = match by_id.get(ep.scene_id.as_str()) {
            Some(scene) => run_episode(scene, ep, kb, agent, policy),
            None => Err(HsprError::EpisodeMismatch {
                episode: ep.episode_id.clone(),
                scene: ep.scene_id.clone(),
                reason: "scene not found in the scene set".into(),
            }),
        };
        if let Err(e) = &result {
            log::warn!("episode {} failed: {e}", ep.episode_id);
        } else {
            log::debug!("episode {} done", ep.episode_id);
        }
        EpisodeOutcome {
            episode_id: ep.episode_id.clone(),
            result,
        }
    });
    outcomes.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
    outcomes
}

/// Writes one JSON trajectory per line.
pub fn save_trajectories(trajectories: &[Trajectory], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| HsprError::io(path, e))?);
    for t in trajectories {
        let line = serde_json::to_string(t).map_err(|e| HsprError::parse("trajectory", e))?;
        writeln!(out, "{line}").map_err(|e| HsprError::io(path, e))?;
    }
    out.flush().map_err(|e| HsprError::io(path, e))
}

pub fn load_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| HsprError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HsprError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let context = format!("{}:{}", path.display(), n + 1);
        out.push(serde_json::from_str(&line).map_err(|e| HsprError::parse(context, e))?);
    }
    Ok(out)
}
