//! Joint policy/value training.
//!
//! The objective couples two terms. The policy term penalizes, over every
//! subpath (m, n) of every retained trajectory, the squared gap between the
//! log state-flow difference and the accumulated log-likelihood of the
//! strategies taken in between. The evaluation term is a margin ranking loss
//! over action pairs ordered by the search's edge estimates. Gradients are
//! exact and the trainer is deterministic full-batch gradient descent with a
//! backtracking step-size rule.

use crate::corpus::{CorpusError, TreeCorpus};
use crate::model::{StateKey, Strategy, TrajectoryTree, NUM_STRATEGIES};
use crate::policy::{PolicyParams, ValueParams, NUM_FEATURES};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// How the subpath loss is aggregated. The evaluation term is always a mean
/// over pairs; `Mean` normalizes the policy term by the signal count so the
/// two scales stay comparable, `Sum` reproduces the literal summed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossAggregation {
    #[default]
    Mean,
    Sum,
}

/// Trainer hyperparameters. Defaults: gamma=0.1, lambda_eval=1.0,
/// eps_flow=1e-6, min_visits=1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Margin for the ranking loss.
    pub gamma: f64,
    /// Weight of the evaluation term in the total loss.
    pub lambda_eval: f64,
    /// Floor applied to Q-hat before logarithms.
    pub eps_flow: f64,
    pub learning_rate: f64,
    pub max_steps: u64,
    /// Minimum visit count for both sides of a preference pair.
    pub min_visits: u64,
    /// Fix V(s_T) = 1 at terminal states so terminal flow equals reward.
    pub clamp_leaf: bool,
    pub aggregation: LossAggregation,
    /// Stop when the loss improves by less than this between steps.
    pub convergence_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.1,
            lambda_eval: 1.0,
            eps_flow: 1e-6,
            learning_rate: 0.25,
            max_steps: 100,
            min_visits: 1,
            clamp_leaf: false,
            aggregation: LossAggregation::Mean,
            convergence_tol: 1e-10,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("corpus has no trajectories to train on")]
    EmptyCorpus,
    #[error("corpus error: {0}")]
    Corpus(#[from] CorpusError),
    #[error("loss diverged at step {step} (loss {loss:.3e})")]
    Diverged { step: u64, loss: f64 },
}

/// One subpath training signal: the (m, n) pair within a trajectory,
/// 0 <= m < n <= T.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubpathSignal {
    pub trajectory: usize,
    pub m: usize,
    pub n: usize,
}

impl SubpathSignal {
    pub fn endpoint_states(&self, corpus: &TreeCorpus) -> (StateKey, StateKey) {
        let traj = &corpus.trajectories[self.trajectory];
        (
            StateKey::new(traj.tree_id, traj.states[self.m]),
            StateKey::new(traj.tree_id, traj.states[self.n]),
        )
    }

    pub fn actions<'c>(&self, corpus: &'c TreeCorpus) -> &'c [Strategy] {
        &corpus.trajectories[self.trajectory].actions[self.m..self.n]
    }
}

/// All T(T+1)/2 signals per trajectory, in (trajectory, m, n) order.
pub fn subpath_signals(corpus: &TreeCorpus) -> Vec<SubpathSignal> {
    let mut out = Vec::new();
    for (t, traj) in corpus.trajectories.iter().enumerate() {
        let horizon = traj.horizon();
        for m in 0..horizon {
            for n in (m + 1)..=horizon {
                out.push(SubpathSignal {
                    trajectory: t,
                    m,
                    n,
                });
            }
        }
    }
    out
}

/// Log state flow: ln(max(qhat, eps) * v). `v` must be positive.
pub fn log_flow(qhat: f64, v: f64, eps: f64) -> f64 {
    (qhat.max(eps) * v).ln()
}

fn state_log_flow(
    corpus: &TreeCorpus,
    values: &ValueParams,
    key: &StateKey,
    clamp_leaf: bool,
    eps: f64,
) -> Result<f64, CorpusError> {
    let qhat = corpus.qhat_state(key)?;
    let terminal = corpus
        .node(key)
        .map(|n| n.state.terminal)
        .unwrap_or(false);
    let w = if clamp_leaf && terminal {
        0.0
    } else {
        values.state_log_weight(key)
    };
    Ok(qhat.max(eps).ln() + w)
}

/// Log-flow difference across a subpath: log F(s_n) - log F(s_m).
pub fn delta_f(
    corpus: &TreeCorpus,
    values: &ValueParams,
    sig: &SubpathSignal,
    clamp_leaf: bool,
    eps: f64,
) -> Result<f64, CorpusError> {
    let (s_m, s_n) = sig.endpoint_states(corpus);
    Ok(state_log_flow(corpus, values, &s_n, clamp_leaf, eps)?
        - state_log_flow(corpus, values, &s_m, clamp_leaf, eps)?)
}

/// Accumulated log-likelihood of the strategies along a subpath, under the
/// policy restricted to each state's materialized action set. Always <= 0.
pub fn delta_pi(policy: &PolicyParams, corpus: &TreeCorpus, sig: &SubpathSignal) -> f64 {
    let traj = &corpus.trajectories[sig.trajectory];
    let mut sum = 0.0;
    for i in sig.m..sig.n {
        let key = StateKey::new(traj.tree_id, traj.states[i]);
        let features = corpus
            .state_features(&key)
            .expect("trajectory state exists in corpus");
        let mask = corpus.support_mask(&key);
        sum += policy.log_prob_masked(&features, mask, traj.actions[i]);
    }
    sum
}

/// Subpath residual: delta_f - delta_pi. Zero everywhere means every subpath
/// flow-balance constraint holds exactly.
pub fn subpath_residual(
    corpus: &TreeCorpus,
    policy: &PolicyParams,
    values: &ValueParams,
    sig: &SubpathSignal,
    cfg: &TrainConfig,
) -> Result<f64, CorpusError> {
    Ok(delta_f(corpus, values, sig, cfg.clamp_leaf, cfg.eps_flow)?
        - delta_pi(policy, corpus, sig))
}

/// A preference pair at one state: winner/loser strategies with a strictly
/// positive gap in the search's edge estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub state: StateKey,
    pub winner: Strategy,
    pub loser: Strategy,
    pub q_gap: f64,
}

/// Pairs for every visited state of one tree: all strategy pairs with
/// N >= min_visits on both sides and strictly ordered edge estimates. Ties
/// emit nothing. Deterministic (state, winner, loser) order.
pub fn make_preference_pairs(
    tree: &TrajectoryTree,
    min_visits: u64,
    eps_flow: f64,
) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for (id, node) in &tree.nodes {
        if node.stats.total_visits() == 0 {
            continue;
        }
        let key = StateKey::new(tree.tree_id, *id);
        for w in 0..NUM_STRATEGIES {
            for l in 0..NUM_STRATEGIES {
                if w == l {
                    continue;
                }
                if node.stats.visits[w] < min_visits.max(1)
                    || node.stats.visits[l] < min_visits.max(1)
                {
                    continue;
                }
                let qw = node.stats.values[w].max(eps_flow);
                let ql = node.stats.values[l].max(eps_flow);
                if qw > ql {
                    out.push(PreferencePair {
                        state: key,
                        winner: Strategy::ALL[w],
                        loser: Strategy::ALL[l],
                        q_gap: qw - ql,
                    });
                }
            }
        }
    }
    out
}

/// Preference pairs across every tree of the corpus.
pub fn corpus_preference_pairs(corpus: &TreeCorpus, cfg: &TrainConfig) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for tree in corpus.trees.values() {
        out.extend(make_preference_pairs(tree, cfg.min_visits, cfg.eps_flow));
    }
    out
}

/// Margin ranking loss: mean over pairs of max(0, gamma - (V(s,a_w) - V(s,a_l))).
/// An empty pair list scores 0.
pub fn evaluate_loss(pairs: &[PreferencePair], values: &ValueParams, gamma: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|p| {
            let gap = values.value_action(&p.state, p.winner) - values.value_action(&p.state, p.loser);
            (gamma - gap).max(0.0)
        })
        .sum();
    total / pairs.len() as f64
}

/// Loss components for one parameter setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub policy: f64,
    pub evaluate: f64,
    pub total: f64,
    pub max_residual: f64,
}

/// Subpath flow-balance loss over all signals.
pub fn policy_loss(
    corpus: &TreeCorpus,
    policy: &PolicyParams,
    values: &ValueParams,
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    Ok(loss_breakdown(corpus, policy, values, cfg, &[])?.policy)
}

/// Total loss: policy term plus lambda_eval times the evaluation term.
pub fn total_loss(
    corpus: &TreeCorpus,
    policy: &PolicyParams,
    values: &ValueParams,
    cfg: &TrainConfig,
) -> Result<LossBreakdown, TrainError> {
    let pairs = corpus_preference_pairs(corpus, cfg);
    loss_breakdown(corpus, policy, values, cfg, &pairs)
}

fn loss_breakdown(
    corpus: &TreeCorpus,
    policy: &PolicyParams,
    values: &ValueParams,
    cfg: &TrainConfig,
    pairs: &[PreferencePair],
) -> Result<LossBreakdown, TrainError> {
    if corpus.trajectories.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    let mut max_residual: f64 = 0.0;
    for traj_idx in 0..corpus.trajectories.len() {
        let prefix = edge_residual_prefix(corpus, policy, values, traj_idx, cfg)?;
        let horizon = prefix.len() - 1;
        for m in 0..horizon {
            for n in (m + 1)..=horizon {
                let res = prefix[n] - prefix[m];
                sq_sum += res * res;
                max_residual = max_residual.max(res.abs());
                count += 1;
            }
        }
    }
    let policy_term = match cfg.aggregation {
        LossAggregation::Mean => sq_sum / count as f64,
        LossAggregation::Sum => sq_sum,
    };
    let eval_term = evaluate_loss(pairs, values, cfg.gamma);
    Ok(LossBreakdown {
        policy: policy_term,
        evaluate: eval_term,
        total: policy_term + cfg.lambda_eval * eval_term,
        max_residual,
    })
}

/// Prefix sums of per-edge residuals for one trajectory: entry k is the
/// residual of the (0, k) subpath, so res(m, n) = prefix[n] - prefix[m].
fn edge_residual_prefix(
    corpus: &TreeCorpus,
    policy: &PolicyParams,
    values: &ValueParams,
    traj_idx: usize,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, CorpusError> {
    let traj = &corpus.trajectories[traj_idx];
    let horizon = traj.horizon();
    let mut prefix = Vec::with_capacity(horizon + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    let mut prev_logflow = {
        let key = StateKey::new(traj.tree_id, traj.states[0]);
        state_log_flow(corpus, values, &key, cfg.clamp_leaf, cfg.eps_flow)?
    };
    for i in 0..horizon {
        let key = StateKey::new(traj.tree_id, traj.states[i]);
        let next_key = StateKey::new(traj.tree_id, traj.states[i + 1]);
        let next_logflow = state_log_flow(corpus, values, &next_key, cfg.clamp_leaf, cfg.eps_flow)?;
        let features = corpus
            .state_features(&key)
            .expect("trajectory state exists");
        let mask = corpus.support_mask(&key);
        let logpi = policy.log_prob_masked(&features, mask, traj.actions[i]);
        acc += next_logflow - prev_logflow - logpi;
        prefix.push(acc);
        prev_logflow = next_logflow;
    }
    Ok(prefix)
}

/// Exact gradients of the total loss for every trainable parameter block.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub policy_logits: BTreeMap<StateKey, [f64; NUM_STRATEGIES]>,
    pub policy_weights: Option<[[f64; NUM_FEATURES]; NUM_STRATEGIES]>,
    pub state_head: BTreeMap<StateKey, f64>,
    pub action_head: BTreeMap<StateKey, [f64; NUM_STRATEGIES]>,
}

impl Gradients {
    pub fn norm_sq(&self) -> f64 {
        let mut total = 0.0;
        for row in self.policy_logits.values() {
            total += row.iter().map(|g| g * g).sum::<f64>();
        }
        if let Some(weights) = &self.policy_weights {
            for row in weights {
                total += row.iter().map(|g| g * g).sum::<f64>();
            }
        }
        total += self.state_head.values().map(|g| g * g).sum::<f64>();
        for row in self.action_head.values() {
            total += row.iter().map(|g| g * g).sum::<f64>();
        }
        total
    }
}

/// Loss and analytic gradients at the current parameters.
pub fn gradients(
    corpus: &TreeCorpus,
    policy: &PolicyParams,
    values: &ValueParams,
    cfg: &TrainConfig,
    pairs: &[PreferencePair],
) -> Result<(LossBreakdown, Gradients), TrainError> {
    if corpus.trajectories.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut grads = Gradients::default();
    if matches!(policy, PolicyParams::Featurized { .. }) {
        grads.policy_weights = Some([[0.0; NUM_FEATURES]; NUM_STRATEGIES]);
    }

    let total_signals: usize = corpus
        .trajectories
        .iter()
        .map(|t| t.horizon() * (t.horizon() + 1) / 2)
        .sum();
    let weight = match cfg.aggregation {
        LossAggregation::Mean => 1.0 / total_signals as f64,
        LossAggregation::Sum => 1.0,
    };

    let mut sq_sum = 0.0;
    let mut max_residual: f64 = 0.0;
    for (traj_idx, traj) in corpus.trajectories.iter().enumerate() {
        let prefix = edge_residual_prefix(corpus, policy, values, traj_idx, cfg)?;
        let horizon = traj.horizon();
        // endpoint coefficients for the state head, edge coefficients for
        // the policy term
        let mut state_coeff = vec![0.0; horizon + 1];
        let mut edge_coeff = vec![0.0; horizon];
        for m in 0..horizon {
            for n in (m + 1)..=horizon {
                let res = prefix[n] - prefix[m];
                sq_sum += res * res;
                max_residual = max_residual.max(res.abs());
                let c = 2.0 * weight * res;
                state_coeff[n] += c;
                state_coeff[m] -= c;
                for e in edge_coeff.iter_mut().take(n).skip(m) {
                    *e += c;
                }
            }
        }
        for (k, coeff) in state_coeff.iter().enumerate() {
            if *coeff == 0.0 {
                continue;
            }
            let key = StateKey::new(traj.tree_id, traj.states[k]);
            let terminal = corpus.node(&key).map(|n| n.state.terminal).unwrap_or(false);
            if cfg.clamp_leaf && terminal {
                continue;
            }
            *grads.state_head.entry(key).or_insert(0.0) += coeff;
        }
        for (i, coeff) in edge_coeff.iter().enumerate() {
            if *coeff == 0.0 {
                continue;
            }
            let key = StateKey::new(traj.tree_id, traj.states[i]);
            let features = corpus.state_features(&key).expect("trajectory state exists");
            let mask = corpus.support_mask(&key);
            let pi = policy.prob_masked(&features, mask);
            let taken = traj.actions[i];
            match policy {
                PolicyParams::Tabular { .. } => {
                    let row = grads.policy_logits.entry(key).or_insert([0.0; NUM_STRATEGIES]);
                    for b in mask.actions() {
                        let indicator = if b == taken { 1.0 } else { 0.0 };
                        // d res / d z_b = -(indicator - pi_b)
                        row[b.index()] -= coeff * (indicator - pi[b.index()]);
                    }
                }
                PolicyParams::Featurized { .. } => {
                    let x = features.vector();
                    let weights = grads.policy_weights.as_mut().expect("featurized grads");
                    for b in mask.actions() {
                        let indicator = if b == taken { 1.0 } else { 0.0 };
                        let g = -coeff * (indicator - pi[b.index()]);
                        for (f, xf) in x.iter().enumerate() {
                            weights[b.index()][f] += g * xf;
                        }
                    }
                }
            }
        }
    }
    let policy_term = match cfg.aggregation {
        LossAggregation::Mean => sq_sum / total_signals as f64,
        LossAggregation::Sum => sq_sum,
    };

    // hinge term: subgradient 0 at the kink
    let eval_term = evaluate_loss(pairs, values, cfg.gamma);
    if !pairs.is_empty() {
        let per_pair = cfg.lambda_eval / pairs.len() as f64;
        for pair in pairs {
            let gap = values.value_action(&pair.state, pair.winner)
                - values.value_action(&pair.state, pair.loser);
            if cfg.gamma - gap > 0.0 {
                let row = grads
                    .action_head
                    .entry(pair.state)
                    .or_insert([0.0; NUM_STRATEGIES]);
                row[pair.winner.index()] -= per_pair;
                row[pair.loser.index()] += per_pair;
            }
        }
    }

    Ok((
        LossBreakdown {
            policy: policy_term,
            evaluate: eval_term,
            total: policy_term + cfg.lambda_eval * eval_term,
            max_residual,
        },
        grads,
    ))
}

fn apply_policy_block(
    policy: &mut PolicyParams,
    values: &mut ValueParams,
    grads: &Gradients,
    lr: f64,
) {
    match policy {
        PolicyParams::Tabular { logits } => {
            for (key, g) in &grads.policy_logits {
                let row = logits.entry(*key).or_insert([0.0; NUM_STRATEGIES]);
                for a in 0..NUM_STRATEGIES {
                    row[a] -= lr * g[a];
                }
            }
        }
        PolicyParams::Featurized { weights } => {
            if let Some(gw) = &grads.policy_weights {
                for a in 0..NUM_STRATEGIES {
                    for f in 0..NUM_FEATURES {
                        weights[a][f] -= lr * gw[a][f];
                    }
                }
            }
        }
    }
    for (key, g) in &grads.state_head {
        *values.state_head.entry(*key).or_insert(0.0) -= lr * g;
    }
}

fn apply_eval_block(values: &mut ValueParams, grads: &Gradients, lr: f64) {
    for (key, g) in &grads.action_head {
        let row = values.action_head.entry(*key).or_insert([0.0; NUM_STRATEGIES]);
        for a in 0..NUM_STRATEGIES {
            row[a] -= lr * g[a];
        }
    }
}

impl Gradients {
    fn policy_block_norm_sq(&self) -> f64 {
        let mut total = 0.0;
        for row in self.policy_logits.values() {
            total += row.iter().map(|g| g * g).sum::<f64>();
        }
        if let Some(weights) = &self.policy_weights {
            for row in weights {
                total += row.iter().map(|g| g * g).sum::<f64>();
            }
        }
        total + self.state_head.values().map(|g| g * g).sum::<f64>()
    }

    fn eval_block_norm_sq(&self) -> f64 {
        self.action_head
            .values()
            .map(|row| row.iter().map(|g| g * g).sum::<f64>())
            .sum()
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub l_policy: f64,
    pub l_evaluate: f64,
    pub total: f64,
    pub max_residual: f64,
}

/// Training outcome: the loss trace plus final residual statistics.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    pub final_loss: LossBreakdown,
    pub steps_run: u64,
    pub pairs_total: usize,
    pub pairs_satisfied: usize,
}

/// Deterministic full-batch gradient descent with backtracking line search.
/// Runs until `max_steps`, loss improvement below `convergence_tol`, or a
/// vanishing gradient. The loss trace is non-increasing.
pub fn train(
    corpus: &TreeCorpus,
    policy: &mut PolicyParams,
    values: &mut ValueParams,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    train_steps(corpus, policy, values, cfg, cfg.max_steps, 0)
}

/// Run up to `steps` optimizer steps, numbering trace rows from
/// `step_offset`. Used by the iterative refresh loop to continue training
/// across rebuilt corpora.
///
/// The two objective terms touch disjoint parameter blocks (subpath balance:
/// policy logits and state head; margin ranking: action head), so each block
/// runs its own backtracking line search. The smooth balance term takes
/// Armijo steps; the piecewise-linear hinge accepts any strict decrease,
/// which keeps the trace monotone without stalling at margin kinks.
pub fn train_steps(
    corpus: &TreeCorpus,
    policy: &mut PolicyParams,
    values: &mut ValueParams,
    cfg: &TrainConfig,
    steps: u64,
    step_offset: u64,
) -> Result<TrainReport, TrainError> {
    let pairs = corpus_preference_pairs(corpus, cfg);
    let mut trace = Vec::new();
    let mut lr_policy = cfg.learning_rate;
    let mut lr_eval = cfg.learning_rate;
    let (mut current, mut grads) = gradients(corpus, policy, values, cfg, &pairs)?;
    let mut steps_run = 0;

    for step in 0..steps {
        trace.push(TraceRow {
            step: step_offset + step,
            l_policy: current.policy,
            l_evaluate: current.evaluate,
            total: current.total,
            max_residual: current.max_residual,
        });
        if current.total > 1e12 {
            return Err(TrainError::Diverged {
                step: step_offset + step,
                loss: current.total,
            });
        }
        if current.total == 0.0 {
            break;
        }

        let mut progressed = false;

        // balance block: Armijo backtracking on the smooth subpath term
        let ga = grads.policy_block_norm_sq();
        if ga >= 1e-28 {
            for _ in 0..60 {
                let mut cand_policy = policy.clone();
                let mut cand_values = values.clone();
                apply_policy_block(&mut cand_policy, &mut cand_values, &grads, lr_policy);
                let cand =
                    loss_breakdown(corpus, &cand_policy, &cand_values, cfg, &[])?;
                if cand.policy <= current.policy - 1e-4 * lr_policy * ga {
                    *policy = cand_policy;
                    values.state_head = cand_values.state_head;
                    lr_policy = (lr_policy * 1.5).min(cfg.learning_rate * 1e4);
                    progressed = true;
                    break;
                }
                lr_policy *= 0.5;
                if lr_policy < 1e-18 {
                    break;
                }
            }
        }

        // ranking block: strict-decrease backtracking on the hinge term
        let gb = grads.eval_block_norm_sq();
        if gb >= 1e-28 {
            for _ in 0..60 {
                let mut cand_values = values.clone();
                apply_eval_block(&mut cand_values, &grads, lr_eval);
                let cand_eval = evaluate_loss(&pairs, &cand_values, cfg.gamma);
                if cand_eval < current.evaluate {
                    values.action_head = cand_values.action_head;
                    lr_eval = (lr_eval * 1.5).min(cfg.learning_rate * 1e4);
                    progressed = true;
                    break;
                }
                lr_eval *= 0.5;
                if lr_eval < 1e-18 {
                    break;
                }
            }
        }

        steps_run += 1;
        if !progressed {
            break;
        }
        let refreshed = gradients(corpus, policy, values, cfg, &pairs)?;
        let prev_total = current.total;
        current = refreshed.0;
        grads = refreshed.1;
        if (prev_total - current.total).abs() < cfg.convergence_tol {
            break;
        }
    }
    trace.push(TraceRow {
        step: step_offset + steps_run,
        l_policy: current.policy,
        l_evaluate: current.evaluate,
        total: current.total,
        max_residual: current.max_residual,
    });

    let pairs_satisfied = pairs
        .iter()
        .filter(|p| {
            values.value_action(&p.state, p.winner) - values.value_action(&p.state, p.loser)
                >= cfg.gamma
        })
        .count();
    Ok(TrainReport {
        trace,
        final_loss: current,
        steps_run,
        pairs_total: pairs.len(),
        pairs_satisfied,
    })
}
