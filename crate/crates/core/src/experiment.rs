//! Synthetic benchmarks, evaluation over batches, and ablation sweeps.

use std::collections::BTreeMap;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{HsprError, Result};
use crate::fusion::FusionMode;
use crate::kb::ProximityKB;
use crate::metrics::{aggregate, episode_metrics, format_table, Aggregates, EpisodeMetrics, NeMode, SUCCESS_THRESHOLD};
use crate::par;
use crate::perception::{ConfusionMode, ConfusionModel};
use crate::reasoner::ReasonerConfig;
use crate::scene::SceneGraph;
use crate::seed;
use crate::sim::{run_batch, AgentConfig, PerceptionConfig, Policy, Trajectory};
use crate::synth::{generate_scene, house_generator_kb, sample_episodes, Episode, GeneratorConfig};

/// Seed of the `k`-th scene generated from `seed`.
pub fn scene_seed(seed_value: u64, k: usize) -> u64 {
    seed::mix(seed::mix_str(seed_value, "scene"), k as u64)
}

/// `count` scenes from `kb`, generated in parallel. Order follows `k`.
pub fn generate_scenes(
    kb: &ProximityKB,
    base: &GeneratorConfig,
    count: usize,
    seed_value: u64,
    threads: usize,
) -> Result<Vec<SceneGraph>> {
    let ks: Vec<usize> = (0..count).collect();
    par::map_ordered(&ks, threads, |&k| {
        let config = GeneratorConfig {
            seed: scene_seed(seed_value, k),
            ..base.clone()
        };
        generate_scene(&config, kb)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub kb: ProximityKB,
    pub scenes: Vec<SceneGraph>,
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub seed: u64,
    pub scenes: usize,
    pub episodes_per_scene: usize,
    pub generator: GeneratorConfig,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            seed: 2024,
            scenes: 100,
            episodes_per_scene: 5,
            generator: GeneratorConfig::default(),
        }
    }
}

/// House-style generator KB, its scenes, and sampled episodes.
pub fn standard_benchmark(spec: &BenchmarkSpec, threads: usize) -> Result<Benchmark> {
    let kb = house_generator_kb();
    let scenes = generate_scenes(&kb, &spec.generator, spec.scenes, spec.seed, threads)?;
    let episodes = sample_episodes(&scenes, spec.episodes_per_scene, seed::mix_str(spec.seed, "episodes"))?;
    Ok(Benchmark { kb, scenes, episodes })
}

pub const BENCHMARK_CONFUSION: f64 = 0.2;
pub const BENCHMARK_VISUAL_NOISE: f64 = 0.1;

/// Agent used for benchmark comparisons: sampled ε-uniform type confusion
/// and noisy visual scores, everything else at defaults.
pub fn benchmark_agent(n_types: usize, seed_value: u64) -> Result<AgentConfig> {
    let mut perception = PerceptionConfig::oracle(n_types);
    perception.confusion = ConfusionModel::eps_uniform(n_types, BENCHMARK_CONFUSION, ConfusionMode::Sampled)?;
    perception.visual.noise_sd = BENCHMARK_VISUAL_NOISE;
    Ok(AgentConfig::new(perception, seed_value))
}

/// Confusion model from `identity`, `eps:<level>[:sampled|:distribution]`
/// (sampled by default), or a path to a confusion JSON file.
pub fn confusion_from_spec(spec: &str, n_types: usize) -> Result<ConfusionModel> {
    if spec == "identity" {
        return Ok(ConfusionModel::identity(n_types));
    }
    if let Some(rest) = spec.strip_prefix("eps:") {
        let bad = || {
            HsprError::Config(format!(
                "malformed confusion '{spec}' (try eps:0.2 or eps:0.2:distribution)"
            ))
        };
        let (level, mode) = match rest.split_once(':') {
            Some((l, "sampled")) => (l, ConfusionMode::Sampled),
            Some((l, "distribution")) => (l, ConfusionMode::Distribution),
            Some(_) => return Err(bad()),
            None => (rest, ConfusionMode::Sampled),
        };
        return ConfusionModel::eps_uniform(n_types, level.parse().map_err(|_| bad())?, mode);
    }
    let model = ConfusionModel::load(spec)?;
    if model.n_types() != n_types {
        return Err(HsprError::Dimension(format!(
            "confusion model in {spec} covers {} types, the KB has {n_types}",
            model.n_types()
        )));
    }
    Ok(model)
}

/// Metrics for each trajectory, matched to episodes by id.
pub fn evaluate(
    scenes: &[SceneGraph],
    episodes: &[Episode],
    trajectories: &[Trajectory],
    threshold: f64,
    mode: NeMode,
) -> Result<Vec<EpisodeMetrics>> {
    let scene_by_id: BTreeMap<&str, &SceneGraph> = scenes.iter().map(|s| (s.scene_id(), s)).collect();
    let episode_by_id: BTreeMap<&str, &Episode> = episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect();
    trajectories
        .iter()
        .map(|t| {
            let ep = episode_by_id
                .get(t.episode_id.as_str())
                .ok_or_else(|| HsprError::UnknownNode(format!("episode {}", t.episode_id)))?;
            let scene = scene_by_id
                .get(ep.scene_id.as_str())
                .ok_or_else(|| HsprError::EpisodeMismatch {
                    episode: ep.episode_id.clone(),
                    scene: ep.scene_id.clone(),
                    reason: "scene not found in the scene set".into(),
                })?;
            episode_metrics(t, ep, scene, threshold, mode)
        })
        .collect()
}

/// Runs a policy over the benchmark; any failed episode fails the run.
pub fn run_policy(bench: &Benchmark, agent: &AgentConfig, policy: Policy, threads: usize) -> Result<Vec<Trajectory>> {
    run_batch(&bench.scenes, &bench.episodes, &bench.kb, agent, policy, threads)
        .into_iter()
        .map(|o| o.result)
        .collect()
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub trajectories: Vec<Trajectory>,
    pub metrics: Vec<EpisodeMetrics>,
    pub aggregates: Aggregates,
}

pub fn run_and_evaluate(bench: &Benchmark, agent: &AgentConfig, policy: Policy, threads: usize) -> Result<PolicyRun> {
    let trajectories = run_policy(bench, agent, policy, threads)?;
    let metrics = evaluate(
        &bench.scenes,
        &bench.episodes,
        &trajectories,
        SUCCESS_THRESHOLD,
        NeMode::Geodesic,
    )?;
    let aggregates = aggregate(&metrics)?;
    Ok(PolicyRun {
        trajectories,
        metrics,
        aggregates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    Steps(Vec<usize>),
    Fusion(Vec<FusionMode>),
}

/// Parses `steps=1..5`, `steps=1,3` or `fusion=average,dynamic,residual`.
impl FromStr for Sweep {
    type Err = HsprError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            HsprError::Config(format!(
                "malformed sweep '{s}' (try steps=1..5 or fusion=average,dynamic,residual)"
            ))
        };
        let (key, values) = s.split_once('=').ok_or_else(bad)?;
        match key {
            "steps" => {
                let steps: Vec<usize> = if let Some((a, b)) = values.split_once("..") {
                    let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                    (a..=b).collect()
                } else {
                    values
                        .split(',')
                        .map(|v| v.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad())?
                };
                if steps.is_empty() || steps.contains(&0) {
                    return Err(bad());
                }
                Ok(Sweep::Steps(steps))
            }
            "fusion" => {
                let modes = values
                    .split(',')
                    .map(FusionMode::from_str)
                    .collect::<Result<Vec<_>>>()?;
                Ok(Sweep::Fusion(modes))
            }
            _ => Err(bad()),
        }
    }
}

impl Sweep {
    pub fn label(&self) -> &'static str {
        match self {
            Sweep::Steps(_) => "steps",
            Sweep::Fusion(_) => "fusion",
        }
    }

    /// One agent per sweep value, labelled.
    pub fn agents(&self, base: &AgentConfig) -> Vec<(String, AgentConfig)> {
        match self {
            Sweep::Steps(steps) => steps
                .iter()
                .map(|&m| {
                    let reasoner = ReasonerConfig {
                        omega: vec![1.0; m],
                        max_steps: m,
                        ..base.reasoner.clone()
                    };
                    (
                        m.to_string(),
                        AgentConfig {
                            reasoner,
                            ..base.clone()
                        },
                    )
                })
                .collect(),
            Sweep::Fusion(modes) => modes
                .iter()
                .map(|&mode| {
                    (
                        mode.to_string(),
                        AgentConfig {
                            fusion_mode: mode,
                            ..base.clone()
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub aggregates: Aggregates,
}

pub fn ablate(bench: &Benchmark, base: &AgentConfig, sweep: &Sweep, threads: usize) -> Result<Vec<AblationRow>> {
    sweep
        .agents(base)
        .into_iter()
        .map(|(label, agent)| {
            let run = run_and_evaluate(bench, &agent, Policy::Hspr, threads)?;
            log::info!(
                "{} = {label}: SR {:.2} SPL {:.2}",
                sweep.label(),
                run.aggregates.sr,
                run.aggregates.spl
            );
            Ok(AblationRow {
                label,
                aggregates: run.aggregates,
            })
        })
        .collect()
}

pub fn ablation_table(sweep: &Sweep, rows: &[AblationRow]) -> String {
    let labelled: Vec<(String, &Aggregates)> = rows.iter().map(|r| (r.label.clone(), &r.aggregates)).collect();
    format_table(sweep.label(), &labelled)
}

/// Hex sha256 over length-prefixed parts.
pub fn fingerprint<I, B>(parts: I) -> String
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let mut hasher = Sha256::new();
    for part in parts {
        let bytes = part.as_ref();
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    hex::encode(hasher.finalize())
}
