//! Navigation and grounding metrics.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HsprError, Result};
use crate::scene::SceneGraph;
use crate::sim::Trajectory;
use crate::synth::Episode;

pub const SUCCESS_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeMode {
    #[default]
    Geodesic,
    Euclidean,
}

impl FromStr for NeMode {
    type Err = HsprError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geodesic" => Ok(NeMode::Geodesic),
            "euclidean" => Ok(NeMode::Euclidean),
            other => Err(HsprError::Config(format!(
                "unknown NE mode '{other}' (expected geodesic or euclidean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: String,
    pub tl: f64,
    pub ne: f64,
    pub success: bool,
    pub oracle_success: bool,
    pub spl: f64,
    pub rgs: bool,
    pub rgspl: f64,
}

fn mismatch(traj: &Trajectory, scene: &SceneGraph, reason: String) -> HsprError {
    HsprError::EpisodeMismatch {
        episode: traj.episode_id.clone(),
        scene: scene.scene_id().to_string(),
        reason,
    }
}

pub fn episode_metrics(
    traj: &Trajectory,
    episode: &Episode,
    scene: &SceneGraph,
    threshold: f64,
    mode: NeMode,
) -> Result<EpisodeMetrics> {
    if traj.episode_id != episode.episode_id {
        return Err(mismatch(
            traj,
            scene,
            format!("trajectory is for episode `{}`", traj.episode_id),
        ));
    }
    if traj.scene_id != scene.scene_id() || episode.scene_id != scene.scene_id() {
        return Err(mismatch(
            traj,
            scene,
            format!("trajectory is for scene `{}`", traj.scene_id),
        ));
    }
    let path: Vec<usize> = traj
        .node_sequence
        .iter()
        .map(|id| scene.require_node(id))
        .collect::<Result<_>>()?;
    if path.first() != scene.node_index(&episode.start_node).as_ref() {
        return Err(mismatch(
            traj,
            scene,
            "trajectory does not begin at the episode start".into(),
        ));
    }
    if traj.node_sequence.last() != Some(&traj.stop_node) {
        return Err(mismatch(traj, scene, "stop node is not the last traversed node".into()));
    }
    let mut walked = 0.0;
    for pair in path.windows(2) {
        walked += scene.edge_length(pair[0], pair[1]).ok_or_else(|| {
            mismatch(
                traj,
                scene,
                format!(
                    "{} -> {} is not an edge",
                    scene.node(pair[0]).node_id,
                    scene.node(pair[1]).node_id
                ),
            )
        })?;
    }
    if (walked - traj.total_length).abs() > 1e-6 * walked.max(1.0) {
        return Err(mismatch(
            traj,
            scene,
            format!("total_length {} but traversed edges sum to {walked}", traj.total_length),
        ));
    }

    let target = scene.require_node(&episode.target_node)?;
    let distance: Box<dyn Fn(usize) -> f64> = match mode {
        NeMode::Geodesic => {
            let d = scene.geodesic_from(target);
            Box::new(move |i| d[i])
        }
        NeMode::Euclidean => Box::new(move |i| scene.euclidean(i, target)),
    };
    let stop = *path.last().expect("nonempty");
    let ne = distance(stop);
    let success = ne < threshold;
    let oracle_success = path.iter().any(|&i| distance(i) < threshold);
    let l = episode.shortest_length;
    let tl = traj.total_length;
    let weight = l / l.max(tl);
    let spl = if success { weight } else { 0.0 };
    let rgs = success && traj.selected_object.as_deref() == Some(episode.target_object.as_str());
    let rgspl = if rgs { weight } else { 0.0 };
    Ok(EpisodeMetrics {
        episode_id: traj.episode_id.clone(),
        tl,
        ne,
        success,
        oracle_success,
        spl,
        rgs,
        rgspl,
    })
}

/// Means over episodes. Rates are percentages rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub episodes: usize,
    pub tl: f64,
    pub ne: f64,
    pub osr: f64,
    pub sr: f64,
    pub spl: f64,
    pub rgs: f64,
    pub rgspl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub aggregates: Aggregates,
    pub episodes: Vec<EpisodeMetrics>,
}

fn percent(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

pub fn aggregate(metrics: &[EpisodeMetrics]) -> Result<Aggregates> {
    if metrics.is_empty() {
        return Err(HsprError::Empty("no episode metrics to aggregate".into()));
    }
    let n = metrics.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(Aggregates {
        episodes: metrics.len(),
        tl: mean(&|m| m.tl),
        ne: mean(&|m| m.ne),
        osr: percent(mean(&|m| flag(m.oracle_success))),
        sr: percent(mean(&|m| flag(m.success))),
        spl: percent(mean(&|m| m.spl)),
        rgs: percent(mean(&|m| flag(m.rgs))),
        rgspl: percent(mean(&|m| m.rgspl)),
    })
}

pub fn aggregate_report(metrics: Vec<EpisodeMetrics>, fingerprint: impl Into<String>) -> Result<EvalReport> {
    Ok(EvalReport {
        fingerprint: fingerprint.into(),
        aggregates: aggregate(&metrics)?,
        episodes: metrics,
    })
}

/// Aligned plain-text table, one row per labelled aggregate.
pub fn format_table(label_header: &str, rows: &[(String, &Aggregates)]) -> String {
    let width = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain([label_header.len()])
        .max()
        .unwrap_or(0);
    let mut out = format!(
        "{label_header:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "TL", "NE", "OSR", "SR", "SPL", "RGS", "RGSPL"
    );
    for (label, a) in rows {
        let _ = writeln!(
            out,
            "{label:<width$}  {:>8.2}  {:>8.2}  {:>8.2}  {:>8.2}  {:>8.2}  {:>8.2}  {:>8.2}",
            a.tl, a.ne, a.osr, a.sr, a.spl, a.rgs, a.rgspl
        );
    }
    out
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("fingerprint {}\n", self.fingerprint);
        out.push_str(&format_table(
            "episodes",
            &[(self.aggregates.episodes.to_string(), &self.aggregates)],
        ));
        out
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| HsprError::io(dir, e))?;
        for (name, body) in [("report.json", self.to_json()), ("report.txt", self.to_text())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| HsprError::io(&path, e))?;
        }
        Ok(())
    }
}
