//! Dialogue environment contract and its three implementations: deterministic
//! synthetic (table-driven and procedural), scripted replay from a persisted
//! corpus, and a remote wire-protocol client.

use crate::model::{DialogueState, Role, Strategy, TrajectoryTree, TurnScores};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

mod remote;
pub use remote::RemoteEnv;

/// Immediate-reward weights and normalizer: r = (0.1 E + 0.1 I + 0.1 H + 0.2 S) / 2.5.
pub const REWARD_WEIGHTS: (f64, f64, f64, f64) = (0.1, 0.1, 0.1, 0.2);
pub const REWARD_SCALE: f64 = 2.5;

/// Result of advancing the dialogue one supporter turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub supporter_text: String,
    pub seeker_text: String,
    pub scores: TurnScores,
    pub terminal: bool,
    /// Present iff `terminal`. When absent for a terminal step, the caller
    /// derives the reward from the path's immediate rewards.
    pub terminal_reward: Option<f64>,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("environment configuration error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("transport error: {0}")]
    Transport(String),
}

/// Abstract dialogue environment. Implementations must be safe for concurrent
/// `step` calls from different trees; the synthetic and scripted variants are
/// stateless after construction.
pub trait DialogueEnv: Send + Sync {
    fn step(&self, state: &DialogueState, action: Strategy) -> Result<StepOutcome, EnvError>;
}

/// Immediate reward from rater scores; lands in [0, 1] for in-range scores.
pub fn immediate_reward(scores: &TurnScores) -> f64 {
    let (we, wi, wh, ws) = REWARD_WEIGHTS;
    (we * scores.empathy
        + wi * scores.info_quality
        + wh * scores.naturalness
        + ws * scores.strategic_efficacy)
        / REWARD_SCALE
}

/// How an underived terminal reward is aggregated from per-turn rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TerminalRewardMode {
    #[default]
    Mean,
    Sum,
}

/// Terminal reward for a finished dialogue. An explicit environment-declared
/// reward wins; otherwise the per-turn immediate rewards along the path are
/// aggregated (mean by default). Empty paths yield 0.
pub fn terminal_reward(
    path_rewards: &[f64],
    leaf: &DialogueState,
    declared: Option<f64>,
    mode: TerminalRewardMode,
) -> Result<f64, EnvError> {
    if !leaf.terminal {
        return Err(EnvError::Contract(format!(
            "terminal_reward called on non-terminal node {}",
            leaf.node_id
        )));
    }
    if let Some(r) = declared {
        if r < 0.0 {
            return Err(EnvError::Contract(format!(
                "declared terminal reward {r} is negative"
            )));
        }
        return Ok(r);
    }
    if path_rewards.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = path_rewards.iter().sum();
    Ok(match mode {
        TerminalRewardMode::Mean => sum / path_rewards.len() as f64,
        TerminalRewardMode::Sum => sum,
    })
}

/// Action-path key for synthetic environments: the sequence of strategy
/// indices taken from the root, e.g. "0.3.1". The root key is "".
pub type PathKey = String;

pub fn child_path(parent: &PathKey, action: Strategy) -> PathKey {
    if parent.is_empty() {
        action.index().to_string()
    } else {
        format!("{parent}.{}", action.index())
    }
}

/// Recover the action path of a synthetic state from its most recent seeker
/// utterance. Synthetic environments encode the path as "seeker[<path>]".
pub fn decode_path(state: &DialogueState) -> Result<PathKey, EnvError> {
    let last_seeker = state
        .utterances
        .iter()
        .rev()
        .find(|(role, _)| *role == Role::Seeker)
        .map(|(_, text)| text.as_str())
        .unwrap_or("seeker[]");
    last_seeker
        .strip_prefix("seeker[")
        .and_then(|s| s.strip_suffix(']'))
        .map(|s| s.to_string())
        .ok_or_else(|| {
            EnvError::Config(format!(
                "state {} does not carry a synthetic path marker",
                state.node_id
            ))
        })
}

fn placeholder_texts(path: &PathKey) -> (String, String) {
    (format!("supporter[{path}]"), format!("seeker[{path}]"))
}

/// Fully tabulated synthetic environment for enumerable fixtures. Every
/// reachable (state, action) pair must have an entry.
#[derive(Debug, Clone)]
pub struct SyntheticEnvSpec {
    /// (path key of the resulting child) -> (scores, terminal flag).
    pub table: BTreeMap<PathKey, (TurnScores, bool)>,
    /// Explicit rewards for terminal leaves, by child path key.
    pub leaf_rewards: BTreeMap<PathKey, f64>,
    /// Depth at which every branch terminates regardless of the table.
    pub horizon: u32,
}

impl SyntheticEnvSpec {
    /// Validate reachability coverage and reward sanity: every reachable
    /// non-terminal state has entries for all 8 actions, leaf rewards are
    /// non-negative, and at least two leaves carry strictly positive reward.
    pub fn validate(&self) -> Result<(), EnvError> {
        let mut positive = 0usize;
        for (path, reward) in &self.leaf_rewards {
            if *reward < 0.0 {
                return Err(EnvError::Config(format!(
                    "leaf `{path}` has negative reward {reward}"
                )));
            }
            if *reward > 0.0 {
                positive += 1;
            }
        }
        if positive < 2 {
            return Err(EnvError::Config(
                "need at least two leaves with strictly positive reward".into(),
            ));
        }
        let mut frontier = vec![(PathKey::new(), 0u32)];
        while let Some((path, depth)) = frontier.pop() {
            if depth >= self.horizon {
                continue;
            }
            for action in Strategy::ALL {
                let child = child_path(&path, action);
                match self.table.get(&child) {
                    None => {
                        return Err(EnvError::Config(format!(
                            "missing table entry for reachable pair (`{path}`, {action})"
                        )));
                    }
                    Some((scores, terminal)) => {
                        if !scores.in_range() {
                            return Err(EnvError::Config(format!(
                                "scores out of range at `{child}`"
                            )));
                        }
                        if !terminal {
                            frontier.push((child, depth + 1));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl DialogueEnv for SyntheticEnvSpec {
    fn step(&self, state: &DialogueState, action: Strategy) -> Result<StepOutcome, EnvError> {
        if state.terminal {
            return Err(EnvError::Contract(format!(
                "step called on terminal state {}",
                state.node_id
            )));
        }
        let parent = decode_path(state)?;
        let child = child_path(&parent, action);
        let (scores, table_terminal) = self
            .table
            .get(&child)
            .copied()
            .ok_or_else(|| EnvError::Config(format!("no table entry for (`{parent}`, {action})")))?;
        let terminal = table_terminal || state.turn + 1 >= self.horizon;
        let (supporter_text, seeker_text) = placeholder_texts(&child);
        Ok(StepOutcome {
            supporter_text,
            seeker_text,
            scores,
            terminal,
            terminal_reward: if terminal {
                self.leaf_rewards.get(&child).copied()
            } else {
                None
            },
        })
    }
}

/// Deterministic procedural synthetic environment. Scores and termination are
/// pure functions of (seed, action path), so identical inputs give identical
/// outcomes across runs and platforms.
#[derive(Debug, Clone)]
pub struct ProceduralEnv {
    pub seed: u64,
    /// Depth at which every branch terminates.
    pub horizon: u32,
    /// Depth from which hashed early termination may trigger.
    pub term_start: u32,
    /// Early-termination density in [0, 1].
    pub term_prob: f64,
    /// Weight of the per-action reward offsets (0 = all actions alike).
    pub action_bias: f64,
    /// Amplitude of the hashed per-path reward jitter.
    pub jitter: f64,
}

impl Default for ProceduralEnv {
    fn default() -> Self {
        ProceduralEnv {
            seed: 0,
            horizon: 7,
            term_start: 3,
            term_prob: 0.4,
            action_bias: 0.25,
            jitter: 0.15,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn hash_path(seed: u64, path: &PathKey, salt: u64) -> u64 {
    let mut h = splitmix64(seed ^ salt);
    for b in path.bytes() {
        h = splitmix64(h ^ b as u64);
    }
    h
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl ProceduralEnv {
    /// Target immediate reward for the step that produces `child`: a base of
    /// 0.5 shifted by action-identity offsets along the path plus hashed
    /// jitter, clamped to [0.04, 1.0] so flows stay positive.
    fn reward_target(&self, child: &PathKey) -> f64 {
        let mut bias = 0.0;
        let mut steps = 0usize;
        for part in child.split('.') {
            if let Ok(idx) = part.parse::<usize>() {
                bias += (idx as f64 - 3.5) / 3.5;
                steps += 1;
            }
        }
        if steps > 0 {
            bias /= steps as f64;
        }
        let j = 2.0 * unit(hash_path(self.seed, child, 0x6A17)) - 1.0;
        (0.5 + self.action_bias * bias + self.jitter * j).clamp(0.04, 1.0)
    }

    fn terminates(&self, child: &PathKey, depth: u32) -> bool {
        if depth >= self.horizon {
            return true;
        }
        if depth < self.term_start {
            return false;
        }
        unit(hash_path(self.seed, child, 0x7E3A)) < self.term_prob
    }
}

impl DialogueEnv for ProceduralEnv {
    fn step(&self, state: &DialogueState, action: Strategy) -> Result<StepOutcome, EnvError> {
        if state.terminal {
            return Err(EnvError::Contract(format!(
                "step called on terminal state {}",
                state.node_id
            )));
        }
        let parent = decode_path(state)?;
        let child = child_path(&parent, action);
        let r = self.reward_target(&child);
        // uniform scores s* with r = 0.2 s* reproduce the target exactly
        let s = 5.0 * r;
        let scores = TurnScores::new(s, s, s, s);
        let terminal = self.terminates(&child, state.turn + 1);
        let (supporter_text, seeker_text) = placeholder_texts(&child);
        Ok(StepOutcome {
            supporter_text,
            seeker_text,
            scores,
            terminal,
            terminal_reward: None,
        })
    }
}

/// Replays one recorded tree: the outcome of (node, action) is whatever the
/// corpus recorded for that edge. Missing edges are configuration errors.
#[derive(Debug, Clone)]
pub struct ScriptedEnv {
    steps: BTreeMap<(u64, usize), StepOutcome>,
}

impl ScriptedEnv {
    pub fn for_tree(tree: &TrajectoryTree) -> Self {
        let mut steps = BTreeMap::new();
        for ((parent, action), child_id) in &tree.edges {
            let child = &tree.nodes[child_id];
            let scores = child.state.scores.unwrap_or(TurnScores::new(0.0, 0.0, 0.0, 0.0));
            let (supporter_text, seeker_text) = child
                .state
                .utterances
                .len()
                .checked_sub(2)
                .map(|i| {
                    (
                        child.state.utterances[i].1.clone(),
                        child.state.utterances[i + 1].1.clone(),
                    )
                })
                .unwrap_or_else(|| (String::new(), String::new()));
            steps.insert(
                (parent.0, action.index()),
                StepOutcome {
                    supporter_text,
                    seeker_text,
                    scores,
                    terminal: child.state.terminal,
                    terminal_reward: child.state.terminal_reward,
                },
            );
        }
        ScriptedEnv { steps }
    }
}

impl DialogueEnv for ScriptedEnv {
    fn step(&self, state: &DialogueState, action: Strategy) -> Result<StepOutcome, EnvError> {
        if state.terminal {
            return Err(EnvError::Contract(format!(
                "step called on terminal state {}",
                state.node_id
            )));
        }
        self.steps
            .get(&(state.node_id.0, action.index()))
            .cloned()
            .ok_or_else(|| {
                EnvError::Config(format!(
                    "scripted corpus has no recording for ({}, {action})",
                    state.node_id
                ))
            })
    }
}
