//! Global/local action-score fusion.
//!
//! Every navigable node gets a global score `l_c = ε_c + η_c`. The local table
//! scores nodes adjacent to the agent from local inputs and, in residual mode,
//! carries the global score over for the rest. The two tables are blended by a
//! balance factor β.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HsprError, Result};
use crate::topo::RoutingTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Residual,
    Average,
    Dynamic,
}

impl FromStr for FusionMode {
    type Err = HsprError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(FusionMode::Residual),
            "average" => Ok(FusionMode::Average),
            "dynamic" => Ok(FusionMode::Dynamic),
            other => Err(HsprError::Config(format!(
                "unknown fusion mode '{other}' (expected residual, average or dynamic)"
            ))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Residual => "residual",
            FusionMode::Average => "average",
            FusionMode::Dynamic => "dynamic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancePolicy {
    Fixed(f64),
    VisitedFraction,
    /// `sigmoid(bias + weights · features)`.
    Logistic {
        bias: f64,
        weights: Vec<f64>,
    },
}

impl Default for BalancePolicy {
    fn default() -> Self {
        BalancePolicy::Fixed(0.5)
    }
}

/// Parses `fixed:<c>`, `visited`, or `logistic:<bias>,<w1>,<w2>,...`.
impl FromStr for BalancePolicy {
    type Err = HsprError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            HsprError::Config(format!(
                "malformed beta policy '{s}' (try fixed:0.5, visited or logistic:0,1,1)"
            ))
        };
        let (kind, rest) = match s.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (s, None),
        };
        let policy = match (kind, rest) {
            ("fixed", Some(v)) => BalancePolicy::Fixed(v.trim().parse().map_err(|_| bad())?),
            ("visited", None) => BalancePolicy::VisitedFraction,
            ("logistic", Some(v)) => {
                let nums = v
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad())?;
                let (&bias, weights) = nums.split_first().ok_or_else(bad)?;
                BalancePolicy::Logistic {
                    bias,
                    weights: weights.to_vec(),
                }
            }
            _ => return Err(bad()),
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl fmt::Display for BalancePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BalancePolicy::Fixed(c) => write!(f, "fixed:{c}"),
            BalancePolicy::VisitedFraction => f.write_str("visited"),
            BalancePolicy::Logistic { bias, weights } => {
                write!(f, "logistic:{bias}")?;
                for w in weights {
                    write!(f, ",{w}")?;
                }
                Ok(())
            }
        }
    }
}

impl BalancePolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            BalancePolicy::Fixed(c) => (0.0..=1.0).contains(c),
            BalancePolicy::VisitedFraction => true,
            BalancePolicy::Logistic { bias, weights } => bias.is_finite() && weights.iter().all(|w| w.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(HsprError::Config(format!("invalid beta policy {self}")))
        }
    }
}

/// What a balance policy may look at.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceState {
    pub visited: usize,
    pub known: usize,
    /// Features for the logistic policy.
    pub features: Vec<f64>,
}

pub fn balance_factor(policy: &BalancePolicy, state: &BalanceState) -> Result<f64> {
    policy.validate()?;
    let beta = match policy {
        BalancePolicy::Fixed(c) => *c,
        BalancePolicy::VisitedFraction => {
            if state.known == 0 {
                return Err(HsprError::Config("visited fraction of an empty map".into()));
            }
            state.visited as f64 / state.known as f64
        }
        BalancePolicy::Logistic { bias, weights } => {
            if weights.len() != state.features.len() {
                return Err(HsprError::Config(format!(
                    "logistic beta has {} weights for {} features",
                    weights.len(),
                    state.features.len()
                )));
            }
            let z = bias + weights.iter().zip(&state.features).map(|(w, x)| w * x).sum::<f64>();
            1.0 / (1.0 + (-z).exp())
        }
    };
    Ok(beta.clamp(0.0, 1.0))
}

/// Per-node inputs. `eta_c`/`epsilon_c` align with `global` (C),
/// `eta_f`/`epsilon_f` with `local` (F). Both node lists are sorted.
#[derive(Debug, Clone, Copy)]
pub struct FusionInputs<'a> {
    pub global: &'a [usize],
    pub local: &'a [usize],
    pub eta_c: &'a [f64],
    pub epsilon_c: &'a [f64],
    pub eta_f: &'a [f64],
    pub epsilon_f: &'a [f64],
}

impl FusionInputs<'_> {
    fn check(&self) -> Result<()> {
        if self.eta_c.len() != self.global.len() || self.epsilon_c.len() != self.global.len() {
            return Err(HsprError::Dimension("global scores do not cover C".into()));
        }
        if self.eta_f.len() != self.local.len() || self.epsilon_f.len() != self.local.len() {
            return Err(HsprError::Dimension("local scores missing for a node in F".into()));
        }
        if let Some(&i) = self.local.iter().find(|i| self.global.binary_search(i).is_err()) {
            return Err(HsprError::Invariant(format!(
                "local node #{i} is not globally navigable"
            )));
        }
        Ok(())
    }

    fn local_position(&self, node: usize) -> Option<usize> {
        self.local.binary_search(&node).ok()
    }
}

/// `(l_c, l_f)` aligned with C.
pub fn compose_scores(inputs: &FusionInputs<'_>, proximity_only_local: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    inputs.check()?;
    let mut l_c = Vec::with_capacity(inputs.global.len());
    let mut l_f = Vec::with_capacity(inputs.global.len());
    for (k, &node) in inputs.global.iter().enumerate() {
        let global = inputs.epsilon_c[k] + inputs.eta_c[k];
        l_c.push(global);
        l_f.push(match inputs.local_position(node) {
            Some(j) if proximity_only_local => inputs.eta_f[j],
            Some(j) => inputs.eta_f[j] + inputs.epsilon_f[j],
            None => inputs.eta_c[k] + inputs.epsilon_c[k],
        });
    }
    Ok((l_c, l_f))
}

pub fn fuse_final(l_c: &[f64], l_f: &[f64], beta: f64) -> Result<Vec<f64>> {
    if l_c.len() != l_f.len() {
        return Err(HsprError::Dimension(format!(
            "{} global vs {} local action scores",
            l_c.len(),
            l_f.len()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(HsprError::Config(format!("beta {beta} outside [0, 1]")));
    }
    Ok(l_c.iter().zip(l_f).map(|(c, f)| beta * c + (1.0 - beta) * f).collect())
}

/// Context for dynamic fusion: routes over the known map and the local score
/// of each visited node.
#[derive(Debug, Clone, Copy)]
pub struct DynamicContext<'a> {
    pub routing: &'a RoutingTable,
    pub current: usize,
    pub visited_scores: &'a BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKey {
    Stop,
    Node(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScore {
    pub action: ActionKey,
    pub epsilon_c: Option<f64>,
    pub epsilon_f: Option<f64>,
    pub eta_c: Option<f64>,
    pub eta_f: Option<f64>,
    pub l_c: f64,
    pub l_f: f64,
    pub l_final: f64,
}

/// Rows are the stop action followed by C in ascending node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScoreTable {
    pub beta: f64,
    pub rows: Vec<ActionScore>,
}

impl ActionScoreTable {
    /// Highest `l_final`; earlier rows win ties, so stop beats a tied node and
    /// lower node indices beat higher ones.
    pub fn best(&self) -> ActionKey {
        let mut best = &self.rows[0];
        for row in &self.rows[1..] {
            if row.l_final > best.l_final {
                best = row;
            }
        }
        best.action
    }

    pub fn get(&self, action: ActionKey) -> Option<&ActionScore> {
        self.rows.iter().find(|r| r.action == action)
    }
}

/// Full fusion for one decision step. `stop` is the stop action's score,
/// entered into both tables.
pub fn variant_fusion(
    mode: FusionMode,
    inputs: &FusionInputs<'_>,
    stop: f64,
    beta: f64,
    proximity_only_local: bool,
    dynamic: Option<&DynamicContext<'_>>,
) -> Result<ActionScoreTable> {
    let (l_c, mut l_f) = compose_scores(inputs, proximity_only_local)?;
    let beta = match mode {
        FusionMode::Average => 0.5,
        _ => beta,
    };
    match mode {
        FusionMode::Residual => {}
        FusionMode::Average => {
            for (k, node) in inputs.global.iter().enumerate() {
                if inputs.local_position(*node).is_none() {
                    l_f[k] = 0.0;
                }
            }
        }
        FusionMode::Dynamic => {
            let ctx = dynamic.ok_or_else(|| HsprError::Config("dynamic fusion needs the known map".into()))?;
            for (k, &node) in inputs.global.iter().enumerate() {
                if inputs.local_position(node).is_some() {
                    continue;
                }
                let route = ctx
                    .routing
                    .path(ctx.current, node)
                    .ok_or_else(|| HsprError::Unreachable(format!("navigable #{node} unreachable on the known map")))?;
                // route runs current..=node, so it has at least two entries
                let interior = &route[1..route.len() - 1];
                l_f[k] = interior.iter().filter_map(|v| ctx.visited_scores.get(v)).sum();
            }
        }
    }
    let fused = fuse_final(&l_c, &l_f, beta)?;
    let mut rows = Vec::with_capacity(inputs.global.len() + 1);
    rows.push(ActionScore {
        action: ActionKey::Stop,
        epsilon_c: None,
        epsilon_f: None,
        eta_c: None,
        eta_f: None,
        l_c: stop,
        l_f: stop,
        l_final: beta * stop + (1.0 - beta) * stop,
    });
    for (k, &node) in inputs.global.iter().enumerate() {
        let local = inputs.local_position(node);
        rows.push(ActionScore {
            action: ActionKey::Node(node),
            epsilon_c: Some(inputs.epsilon_c[k]),
            epsilon_f: local.map(|j| inputs.epsilon_f[j]),
            eta_c: Some(inputs.eta_c[k]),
            eta_f: local.map(|j| inputs.eta_f[j]),
            l_c: l_c[k],
            l_f: l_f[k],
            l_final: fused[k],
        });
    }
    Ok(ActionScoreTable { beta, rows })
}
