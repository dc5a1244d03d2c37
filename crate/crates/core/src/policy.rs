//! Parametric strategy policy and value heads.
//!
//! The policy is a softmax over per-state logits (tabular mode, the default)
//! or over a fixed feature map (featurized mode). The state value head is
//! exp-parameterized so state flows stay strictly positive; the action head
//! is an unconstrained score.

use crate::model::{StateKey, Strategy, NUM_STRATEGIES};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// Feature layout for featurized mode: bias, scaled turn index, one-hot of
/// the last action, and a no-last-action flag.
pub const NUM_FEATURES: usize = 2 + NUM_STRATEGIES + 1;

/// Everything the policy may condition on for one state.
#[derive(Debug, Clone, Copy)]
pub struct StateFeatures {
    pub key: StateKey,
    pub turn: u32,
    pub last_action: Option<Strategy>,
}

impl StateFeatures {
    pub fn vector(&self) -> [f64; NUM_FEATURES] {
        let mut x = [0.0; NUM_FEATURES];
        x[0] = 1.0;
        x[1] = self.turn as f64 / 10.0;
        match self.last_action {
            Some(a) => x[2 + a.index()] = 1.0,
            None => x[2 + NUM_STRATEGIES] = 1.0,
        }
        x
    }
}

/// Bitmask over the strategy set; used to restrict the policy's support to
/// the actions a corpus actually materialized at a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionMask(pub u8);

impl ActionMask {
    pub const FULL: ActionMask = ActionMask(0xFF);

    pub fn from_actions(actions: impl IntoIterator<Item = Strategy>) -> Self {
        let mut m = 0u8;
        for a in actions {
            m |= 1 << a.index();
        }
        ActionMask(m)
    }

    pub fn contains(&self, a: Strategy) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn actions(&self) -> impl Iterator<Item = Strategy> + '_ {
        Strategy::ALL.iter().copied().filter(|a| self.contains(*a))
    }
}

/// Strategy policy parameters.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum PolicyParams {
    Tabular {
        logits: BTreeMap<StateKey, [f64; NUM_STRATEGIES]>,
    },
    Featurized {
        weights: [[f64; NUM_FEATURES]; NUM_STRATEGIES],
    },
}

impl PolicyParams {
    /// Zero-initialized tabular policy: uniform everywhere.
    pub fn tabular() -> Self {
        PolicyParams::Tabular {
            logits: BTreeMap::new(),
        }
    }

    /// Zero-initialized featurized policy.
    pub fn featurized() -> Self {
        PolicyParams::Featurized {
            weights: [[0.0; NUM_FEATURES]; NUM_STRATEGIES],
        }
    }

    pub fn logits(&self, s: &StateFeatures) -> [f64; NUM_STRATEGIES] {
        match self {
            PolicyParams::Tabular { logits } => logits.get(&s.key).copied().unwrap_or_default(),
            PolicyParams::Featurized { weights } => {
                let x = s.vector();
                let mut z = [0.0; NUM_STRATEGIES];
                for (a, row) in weights.iter().enumerate() {
                    z[a] = row.iter().zip(x.iter()).map(|(w, xi)| w * xi).sum();
                }
                z
            }
        }
    }

    /// Full-support policy probabilities: softmax over all 8 strategies.
    /// Unknown tabular keys use zero logits (uniform output).
    pub fn prob(&self, s: &StateFeatures) -> [f64; NUM_STRATEGIES] {
        softmax_masked(&self.logits(s), ActionMask::FULL)
    }

    /// Policy restricted to `mask`: softmax over the masked logits, zero
    /// probability elsewhere. `mask` must be non-empty.
    pub fn prob_masked(&self, s: &StateFeatures, mask: ActionMask) -> [f64; NUM_STRATEGIES] {
        softmax_masked(&self.logits(s), mask)
    }

    pub fn log_prob_masked(&self, s: &StateFeatures, mask: ActionMask, a: Strategy) -> f64 {
        debug_assert!(mask.contains(a));
        let z = self.logits(s);
        let mut max = f64::NEG_INFINITY;
        for b in mask.actions() {
            max = max.max(z[b.index()]);
        }
        let log_sum: f64 = mask
            .actions()
            .map(|b| (z[b.index()] - max).exp())
            .sum::<f64>()
            .ln()
            + max;
        z[a.index()] - log_sum
    }

    /// Prior used inside rollouts, where steps are not tree nodes. Tabular
    /// mode has no key for them and falls back to uniform; featurized mode
    /// conditions on (turn, last action).
    pub fn prob_for_rollout(
        &self,
        turn: u32,
        last_action: Option<Strategy>,
    ) -> [f64; NUM_STRATEGIES] {
        match self {
            PolicyParams::Tabular { .. } => [1.0 / NUM_STRATEGIES as f64; NUM_STRATEGIES],
            PolicyParams::Featurized { .. } => {
                let s = StateFeatures {
                    key: StateKey::new(crate::model::TreeId(u64::MAX), crate::model::NodeId(0)),
                    turn,
                    last_action,
                };
                self.prob(&s)
            }
        }
    }
}

fn softmax_masked(logits: &[f64; NUM_STRATEGIES], mask: ActionMask) -> [f64; NUM_STRATEGIES] {
    debug_assert!(!mask.is_empty());
    let mut max = f64::NEG_INFINITY;
    for a in mask.actions() {
        max = max.max(logits[a.index()]);
    }
    let mut out = [0.0; NUM_STRATEGIES];
    let mut sum = 0.0;
    for a in mask.actions() {
        let e = (logits[a.index()] - max).exp();
        out[a.index()] = e;
        sum += e;
    }
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Gradient of log pi(a|s) with respect to the state's logits:
/// onehot(a) - pi(.|s). Entries sum to zero.
pub fn log_policy_grad(
    policy: &PolicyParams,
    s: &StateFeatures,
    action: Strategy,
) -> [f64; NUM_STRATEGIES] {
    let pi = policy.prob(s);
    let mut g = [0.0; NUM_STRATEGIES];
    for a in 0..NUM_STRATEGIES {
        g[a] = -pi[a];
    }
    g[action.index()] += 1.0;
    g
}

/// Value heads: V(s) = exp(w_s) > 0 and an unconstrained V(s,a) score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValueParams {
    pub state_head: BTreeMap<StateKey, f64>,
    pub action_head: BTreeMap<StateKey, [f64; NUM_STRATEGIES]>,
}

impl ValueParams {
    pub fn new() -> Self {
        ValueParams::default()
    }

    /// Always strictly positive; unknown keys have w = 0, so V = 1.
    pub fn value_state(&self, key: &StateKey) -> f64 {
        self.state_head.get(key).copied().unwrap_or(0.0).exp()
    }

    pub fn state_log_weight(&self, key: &StateKey) -> f64 {
        self.state_head.get(key).copied().unwrap_or(0.0)
    }

    /// Unconstrained edge score; unknown keys score 0.
    pub fn value_action(&self, key: &StateKey, action: Strategy) -> f64 {
        self.action_head
            .get(key)
            .map(|row| row[action.index()])
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding error: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    policy: BTreeMap<String, Vec<f64>>,
    value_state: BTreeMap<String, f64>,
    value_action: BTreeMap<String, Vec<f64>>,
    step_count: u64,
    config_hash: String,
    policy_mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy_weights: Option<Vec<Vec<f64>>>,
}

/// Persist parameters as a structured-text checkpoint.
pub fn save_checkpoint(
    path: &Path,
    policy: &PolicyParams,
    values: &ValueParams,
    step_count: u64,
    config_hash: &str,
) -> Result<(), CheckpointError> {
    let (mode, logits, weights) = match policy {
        PolicyParams::Tabular { logits } => ("tabular", logits.clone(), None),
        PolicyParams::Featurized { weights } => (
            "featurized",
            BTreeMap::new(),
            Some(weights.iter().map(|r| r.to_vec()).collect()),
        ),
    };
    let file = CheckpointFile {
        policy: logits
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_vec()))
            .collect(),
        value_state: values
            .state_head
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        value_action: values
            .action_head
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_vec()))
            .collect(),
        step_count,
        config_hash: config_hash.to_string(),
        policy_mode: mode.to_string(),
        policy_weights: weights,
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(
    path: &Path,
) -> Result<(PolicyParams, ValueParams, u64, String), CheckpointError> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    let parse_key = |k: &str| -> Result<StateKey, CheckpointError> {
        k.parse()
            .map_err(|_| CheckpointError::Malformed(format!("bad state key `{k}`")))
    };
    let to_row = |v: &[f64]| -> Result<[f64; NUM_STRATEGIES], CheckpointError> {
        v.try_into()
            .map_err(|_| CheckpointError::Malformed("row length != 8".into()))
    };
    let policy = match file.policy_mode.as_str() {
        "tabular" => {
            let mut logits = BTreeMap::new();
            for (k, v) in &file.policy {
                logits.insert(parse_key(k)?, to_row(v)?);
            }
            PolicyParams::Tabular { logits }
        }
        "featurized" => {
            let rows = file
                .policy_weights
                .ok_or_else(|| CheckpointError::Malformed("missing policy_weights".into()))?;
            if rows.len() != NUM_STRATEGIES {
                return Err(CheckpointError::Malformed("weights need 8 rows".into()));
            }
            let mut weights = [[0.0; NUM_FEATURES]; NUM_STRATEGIES];
            for (a, row) in rows.iter().enumerate() {
                if row.len() != NUM_FEATURES {
                    return Err(CheckpointError::Malformed(format!(
                        "weight row {a} has length {} (want {NUM_FEATURES})",
                        row.len()
                    )));
                }
                weights[a].copy_from_slice(row);
            }
            PolicyParams::Featurized { weights }
        }
        other => {
            return Err(CheckpointError::Malformed(format!(
                "unknown policy mode `{other}`"
            )))
        }
    };
    let mut values = ValueParams::new();
    for (k, v) in &file.value_state {
        values.state_head.insert(parse_key(k)?, *v);
    }
    for (k, v) in &file.value_action {
        values.action_head.insert(parse_key(k)?, to_row(v)?);
    }
    Ok((policy, values, file.step_count, file.config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NodeId, TreeId};
    use crate::rng::{next_unit, tree_rng};

    fn feat(key_node: u64) -> StateFeatures {
        StateFeatures {
            key: StateKey::new(TreeId(0), NodeId(key_node)),
            turn: 1,
            last_action: Some(Strategy::Clarification),
        }
    }

    #[test]
    fn zero_logits_give_uniform() {
        let policy = PolicyParams::tabular();
        let pi = policy.prob(&feat(0));
        for p in pi {
            assert!((p - 0.125).abs() < 1e-15);
        }
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_logit_softmax_value() {
        let mut logits = BTreeMap::new();
        let key = StateKey::new(TreeId(0), NodeId(0));
        let mut row = [0.0; NUM_STRATEGIES];
        row[0] = 1.0;
        logits.insert(key, row);
        let policy = PolicyParams::Tabular { logits };
        let pi = policy.prob(&feat(0));
        let e = std::f64::consts::E;
        assert!((pi[0] - e / (e + 7.0)).abs() < 1e-12);
        assert!((pi[1] - 1.0 / (e + 7.0)).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let key = StateKey::new(TreeId(0), NodeId(0));
        let mut row = [0.3, -1.0, 2.0, 0.0, 0.7, -0.2, 1.1, 0.4];
        let mut logits = BTreeMap::new();
        logits.insert(key, row);
        let p1 = PolicyParams::Tabular {
            logits: logits.clone(),
        }
        .prob(&feat(0));
        for v in &mut row {
            *v += 123.456;
        }
        logits.insert(key, row);
        let p2 = PolicyParams::Tabular { logits }.prob(&feat(0));
        for a in 0..NUM_STRATEGIES {
            assert!((p1[a] - p2[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_restricts_support() {
        let policy = PolicyParams::tabular();
        let mask = ActionMask::from_actions([
            Strategy::ReflectiveStatements,
            Strategy::Clarification,
            Strategy::Affirmation,
        ]);
        let pi = policy.prob_masked(&feat(0), mask);
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((pi[4] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(pi[2], 0.0);
        let lp = policy.log_prob_masked(&feat(0), mask, Strategy::Clarification);
        assert!((lp - (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn log_policy_grad_uniform_case() {
        let policy = PolicyParams::tabular();
        let g = log_policy_grad(&policy, &feat(0), Strategy::ALL[2]);
        assert!((g[2] - 0.875).abs() < 1e-12);
        for (a, v) in g.iter().enumerate() {
            if a != 2 {
                assert!((v + 0.125).abs() < 1e-12);
            }
        }
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn log_policy_grad_saturates_at_concentration() {
        let key = StateKey::new(TreeId(0), NodeId(0));
        let mut row = [0.0; NUM_STRATEGIES];
        row[3] = 40.0;
        let mut logits = BTreeMap::new();
        logits.insert(key, row);
        let policy = PolicyParams::Tabular { logits };
        let g = log_policy_grad(&policy, &feat(0), Strategy::ALL[3]);
        assert!(g[3].abs() < 1e-12);
    }

    #[test]
    fn log_policy_grad_matches_finite_differences() {
        let mut rng = tree_rng(13, 0);
        let key = StateKey::new(TreeId(0), NodeId(0));
        let h = 1e-5;
        for trial in 0..40 {
            let mut row = [0.0; NUM_STRATEGIES];
            for v in &mut row {
                *v = 4.0 * next_unit(&mut rng) - 2.0;
            }
            let action = Strategy::ALL[trial % NUM_STRATEGIES];
            let mut logits = BTreeMap::new();
            logits.insert(key, row);
            let policy = PolicyParams::Tabular { logits };
            let analytic = log_policy_grad(&policy, &feat(0), action);
            for b in 0..NUM_STRATEGIES {
                let eval = |delta: f64| {
                    let mut bumped = row;
                    bumped[b] += delta;
                    let mut m = BTreeMap::new();
                    m.insert(key, bumped);
                    let p = PolicyParams::Tabular { logits: m };
                    p.prob(&feat(0))[action.index()].ln()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let denom = analytic[b].abs().max(fd.abs()).max(1e-8);
                assert!(
                    ((analytic[b] - fd) / denom).abs() < 1e-4,
                    "grad mismatch at trial {trial} coord {b}: {} vs {}",
                    analytic[b],
                    fd
                );
            }
        }
    }

    #[test]
    fn featurized_mode_produces_valid_distributions() {
        let mut weights = [[0.0; NUM_FEATURES]; NUM_STRATEGIES];
        let mut rng = tree_rng(2, 2);
        for row in &mut weights {
            for w in row.iter_mut() {
                *w = 2.0 * next_unit(&mut rng) - 1.0;
            }
        }
        let policy = PolicyParams::Featurized { weights };
        for turn in 0..5 {
            for last in [None, Some(Strategy::Affirmation)] {
                let pi = policy.prob_for_rollout(turn, last);
                assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for p in pi {
                    assert!(p > 0.0 && p < 1.0);
                }
            }
        }
    }

    #[test]
    fn value_heads_defaults_and_exp() {
        let mut values = ValueParams::new();
        let key = StateKey::new(TreeId(0), NodeId(7));
        assert_eq!(values.value_state(&key), 1.0);
        assert_eq!(values.value_action(&key, Strategy::ALL[0]), 0.0);
        values.state_head.insert(key, 2.0f64.ln());
        assert!((values.value_state(&key) - 2.0).abs() < 1e-12);
        // structural positivity, including very negative weights
        values.state_head.insert(key, -60.0);
        assert!(values.value_state(&key) > 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let mut logits = BTreeMap::new();
        logits.insert(
            StateKey::new(TreeId(1), NodeId(2)),
            [0.1, -0.2, 0.3, 0.0, 1.5, -2.5, 0.25, 0.125],
        );
        let policy = PolicyParams::Tabular { logits };
        let mut values = ValueParams::new();
        values
            .state_head
            .insert(StateKey::new(TreeId(1), NodeId(2)), -0.75);
        values.action_head.insert(
            StateKey::new(TreeId(1), NodeId(0)),
            [0.0, 0.5, 0.0, 0.0, -0.125, 0.0, 0.0, 9.0],
        );
        save_checkpoint(&path, &policy, &values, 42, "abcd1234").unwrap();
        let (p2, v2, steps, hash) = load_checkpoint(&path).unwrap();
        assert_eq!(p2, policy);
        assert_eq!(v2, values);
        assert_eq!(steps, 42);
        assert_eq!(hash, "abcd1234");

        // byte-identical rewrite
        let bytes1 = std::fs::read(&path).unwrap();
        save_checkpoint(&path, &p2, &v2, steps, &hash).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn featurized_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let mut weights = [[0.0; NUM_FEATURES]; NUM_STRATEGIES];
        weights[3][1] = 0.5;
        let policy = PolicyParams::Featurized { weights };
        save_checkpoint(&path, &policy, &ValueParams::new(), 7, "h").unwrap();
        let (p2, _, _, _) = load_checkpoint(&path).unwrap();
        assert_eq!(p2, policy);
    }
}
