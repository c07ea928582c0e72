//! File-level steps: scene generation, KB building, episode sampling,
//! batch runs and evaluation. Each step reads and writes plain files so the
//! steps can be chained from the command line.

use std::fs;
use std::path::Path;

use crate::error::{HsprError, Result};
use crate::experiment::{evaluate, fingerprint, generate_scenes};
use crate::kb::{accumulate_scenes, load_kb, save_kb, KbBuildConfig, ProximityKB};
use crate::metrics::{aggregate_report, EvalReport, NeMode};
use crate::scene::{load_scene_dir, save_scene, SceneGraph};
use crate::sim::{load_trajectories, run_batch, save_trajectories, AgentConfig, Policy};
use crate::synth::{load_episodes, sample_episodes, save_episodes, Episode, GeneratorConfig};

/// `P_o` is stored sparse when fewer than this fraction of entries are nonzero.
pub const SPARSE_BELOW: f64 = 0.1;

/// Generates `count` scenes from the KB at `kb_path` into `out_dir`, one
/// `<scene_id>.json` per scene.
pub fn gen_scenes(
    kb_path: &Path,
    generator: &GeneratorConfig,
    count: usize,
    seed: u64,
    out_dir: &Path,
    threads: usize,
) -> Result<Vec<SceneGraph>> {
    let kb = load_kb(kb_path)?;
    let scenes = generate_scenes(&kb, generator, count, seed, threads)?;
    fs::create_dir_all(out_dir).map_err(|e| HsprError::io(out_dir, e))?;
    for scene in &scenes {
        save_scene(scene, out_dir.join(format!("{}.json", scene.scene_id())))?;
    }
    Ok(scenes)
}

/// Counts and normalizes every scene in `scenes_dir`, writing the KB to `out`.
pub fn build_kb(scenes_dir: &Path, config: &KbBuildConfig, out: &Path, threads: usize) -> Result<ProximityKB> {
    let scenes = load_scene_dir(scenes_dir)?;
    let first = &scenes[0];
    let counts = accumulate_scenes(first.type_vocabulary(), first.object_vocabulary(), &scenes, threads)?;
    let kb = ProximityKB::from_counts(&counts, config)?;
    save_kb(&kb, out, SPARSE_BELOW)?;
    Ok(kb)
}

pub fn gen_episodes(scenes_dir: &Path, per_scene: usize, seed: u64, out: &Path) -> Result<Vec<Episode>> {
    if per_scene == 0 {
        return Err(HsprError::Config("episodes per scene must be at least 1".into()));
    }
    let scenes = load_scene_dir(scenes_dir)?;
    let episodes = sample_episodes(&scenes, per_scene, seed)?;
    save_episodes(&episodes, out)?;
    Ok(episodes)
}

#[derive(Debug)]
pub struct RunSummary {
    pub written: usize,
    /// `(episode_id, error)` for every episode that failed.
    pub failures: Vec<(String, HsprError)>,
}

/// Runs `policy` over the manifest and writes successful trajectories, in
/// episode-id order, as JSON lines.
pub fn run(
    scenes_dir: &Path,
    kb_path: &Path,
    episodes_path: &Path,
    agent: &AgentConfig,
    policy: Policy,
    threads: usize,
    out: &Path,
) -> Result<RunSummary> {
    let scenes = load_scene_dir(scenes_dir)?;
    let kb = load_kb(kb_path)?;
    let episodes = load_episodes(episodes_path)?;
    agent.validate()?;
    for scene in &scenes {
        kb.check_scene(scene)?;
    }
    let outcomes = run_batch(&scenes, &episodes, &kb, agent, policy, threads);
    let mut trajectories = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for o in outcomes {
        match o.result {
            Ok(t) => trajectories.push(t),
            Err(e) => failures.push((o.episode_id, e)),
        }
    }
    save_trajectories(&trajectories, out)?;
    Ok(RunSummary {
        written: trajectories.len(),
        failures,
    })
}

/// Scores a trajectory log and writes `report.json` and `report.txt` into
/// `out_dir`. The fingerprint covers the manifest, the log and the options.
pub fn eval(
    scenes_dir: &Path,
    episodes_path: &Path,
    trajectories_path: &Path,
    threshold: f64,
    mode: NeMode,
    out_dir: &Path,
) -> Result<EvalReport> {
    let scenes = load_scene_dir(scenes_dir)?;
    let episodes = load_episodes(episodes_path)?;
    let trajectories = load_trajectories(trajectories_path)?;
    let metrics = evaluate(&scenes, &episodes, &trajectories, threshold, mode)?;
    let read = |p: &Path| fs::read(p).map_err(|e| HsprError::io(p, e));
    let options = format!("threshold={threshold};ne={mode:?}");
    let fp = fingerprint([read(episodes_path)?, read(trajectories_path)?, options.into_bytes()]);
    let report = aggregate_report(metrics, fp)?;
    report.save(out_dir)?;
    Ok(report)
}
