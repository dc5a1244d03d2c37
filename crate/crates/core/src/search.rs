//! MCTS over strategy decisions: selection, single-node expansion, bounded
//! rollout and incremental-mean backpropagation. Produces trajectory trees
//! whose visit counts and Q values feed the flow-balance trainer.

use crate::env::{self, DialogueEnv, EnvError, TerminalRewardMode};
use crate::model::{
    DialogueState, ModelError, NodeId, Role, Strategy, TrajectoryTree, TreeId, NUM_STRATEGIES,
};
use crate::policy::PolicyParams;
use crate::rng::{next_unit, tree_rng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Search hyperparameters. Defaults: D=10, L=3, S=20, kappa=0.1,
/// explore_weight=1.0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Maximum tree depth D.
    pub depth_limit: u32,
    /// Maximum rollout depth L.
    pub rollout_depth: u32,
    /// Simulations per tree S.
    pub simulations: u32,
    /// Exploration-ratio hyperparameter kappa.
    pub kappa: f64,
    /// Exploration-exploitation weight in the selection score.
    pub explore_weight: f64,
    pub rng_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            depth_limit: 10,
            rollout_depth: 3,
            simulations: 20,
            kappa: 0.1,
            explore_weight: 1.0,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("tree {tree}: environment failure: {source}")]
    Env {
        tree: TreeId,
        #[source]
        source: EnvError,
    },
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("expansion precondition violated: {0}")]
    Precondition(String),
}

/// Exploration ratio rho = kappa / (kappa + ln(N+1)). Equals 1 at N=0 and
/// decreases strictly in N.
pub fn exploration_ratio(visit_count: u64, kappa: f64) -> f64 {
    kappa / (kappa + ((visit_count + 1) as f64).ln())
}

/// Strategy sampling distribution over the action set:
/// u(a) = Q(s,a) + lambda * prior(a) * sqrt(N(s) / (1 + N(s,a))),
/// mu = (1 - rho) * softmax(u) + rho * uniform.
pub fn selection_distribution(
    visits: &[u64; NUM_STRATEGIES],
    values: &[f64; NUM_STRATEGIES],
    prior: &[f64; NUM_STRATEGIES],
    rho: f64,
    explore_weight: f64,
) -> [f64; NUM_STRATEGIES] {
    debug_assert!((prior.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    debug_assert!((0.0..=1.0).contains(&rho));
    let n_total: u64 = visits.iter().sum();
    let mut u = [0.0f64; NUM_STRATEGIES];
    for a in 0..NUM_STRATEGIES {
        let bonus = (n_total as f64 / (1.0 + visits[a] as f64)).sqrt();
        u[a] = values[a] + explore_weight * prior[a] * bonus;
    }
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut soft = [0.0f64; NUM_STRATEGIES];
    let mut sum = 0.0;
    for a in 0..NUM_STRATEGIES {
        soft[a] = (u[a] - max).exp();
        sum += soft[a];
    }
    let uniform = 1.0 / NUM_STRATEGIES as f64;
    let mut mu = [0.0f64; NUM_STRATEGIES];
    for a in 0..NUM_STRATEGIES {
        mu[a] = (1.0 - rho) * soft[a] / sum + rho * uniform;
    }
    mu
}

/// Inverse-CDF sample from `mu`: the first index whose cumulative mass
/// strictly exceeds the draw. Depends only on the rng stream.
pub fn select_action(mu: &[f64; NUM_STRATEGIES], rng: &mut ChaCha8Rng) -> Strategy {
    let x = next_unit(rng);
    let mut cum = 0.0;
    for (a, p) in mu.iter().enumerate() {
        cum += p;
        if x < cum {
            return Strategy::ALL[a];
        }
    }
    Strategy::ALL[NUM_STRATEGIES - 1]
}

fn extended_history(
    state: &DialogueState,
    supporter_text: String,
    seeker_text: String,
) -> Vec<(Role, String)> {
    let mut utterances = state.utterances.clone();
    utterances.push((Role::Supporter, supporter_text));
    utterances.push((Role::Seeker, seeker_text));
    utterances
}

/// Materialize the child of (`state_id`, `action`) by stepping the
/// environment. Fresh statistics start at Q=0, N=0. The child is marked
/// terminal when the environment says so or when it lands on the depth
/// limit; its reward then comes from the declared value or the path mean.
pub fn expand(
    tree: &mut TrajectoryTree,
    state_id: NodeId,
    action: Strategy,
    env: &dyn DialogueEnv,
) -> Result<NodeId, SearchError> {
    let depth_limit = tree.depth_limit;
    let state = tree.node(state_id)?.state.clone();
    if state.terminal {
        return Err(SearchError::Precondition(format!(
            "cannot expand terminal state {state_id}"
        )));
    }
    if tree.child(state_id, action).is_some() {
        return Err(SearchError::Precondition(format!(
            "edge ({state_id}, {action}) already expanded"
        )));
    }
    if state.turn >= depth_limit {
        return Err(SearchError::Precondition(format!(
            "state {state_id} is at the depth limit"
        )));
    }
    let outcome = env.step(&state, action).map_err(|source| SearchError::Env {
        tree: tree.tree_id,
        source,
    })?;
    let terminal = outcome.terminal || state.turn + 1 >= depth_limit;
    let utterances = extended_history(&state, outcome.supporter_text, outcome.seeker_text);
    let reward = if terminal {
        let mut rewards = tree.path_rewards(state_id)?;
        rewards.push(env::immediate_reward(&outcome.scores));
        let leaf_preview = DialogueState {
            node_id: NodeId(u64::MAX),
            parent_id: Some(state_id),
            turn: state.turn + 1,
            action_from_parent: Some(action),
            utterances: Vec::new(),
            terminal: true,
            terminal_reward: None,
            scores: Some(outcome.scores),
        };
        Some(
            env::terminal_reward(
                &rewards,
                &leaf_preview,
                outcome.terminal_reward,
                TerminalRewardMode::Mean,
            )
            .map_err(|source| SearchError::Env {
                tree: tree.tree_id,
                source,
            })?,
        )
    } else {
        None
    };
    Ok(tree.push_child(state_id, action, utterances, outcome.scores, terminal, reward)?)
}

/// Bounded-depth rollout from `start`, sampling actions from the policy
/// prior. Returns the mean of the collected immediate rewards, or 0 when the
/// environment terminates mid-rollout. Rollout steps never touch the tree;
/// environment failures degrade to a zero return.
pub fn rollout(
    env: &dyn DialogueEnv,
    policy: &PolicyParams,
    start: &DialogueState,
    rollout_depth: u32,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut rewards = Vec::new();
    let mut current = start.clone();
    for _ in 0..rollout_depth {
        if current.terminal {
            return 0.0;
        }
        let prior = policy.prob_for_rollout(current.turn, current.action_from_parent);
        let action = select_action(&prior, rng);
        let outcome = match env.step(&current, action) {
            Ok(o) => o,
            Err(err) => {
                eprintln!("warning: rollout step failed, zeroing return: {err}");
                return 0.0;
            }
        };
        rewards.push(env::immediate_reward(&outcome.scores));
        if outcome.terminal {
            return 0.0;
        }
        current = DialogueState {
            node_id: current.node_id,
            parent_id: current.parent_id,
            turn: current.turn + 1,
            action_from_parent: Some(action),
            utterances: extended_history(&current, outcome.supporter_text, outcome.seeker_text),
            terminal: false,
            terminal_reward: None,
            scores: Some(outcome.scores),
        };
    }
    if rewards.is_empty() {
        0.0
    } else {
        rewards.iter().sum::<f64>() / rewards.len() as f64
    }
}

/// Incremental-mean update along the selected path: N += 1,
/// Q += (G - Q) / N for every (state, action) on it.
pub fn backpropagate(tree: &mut TrajectoryTree, path: &[(NodeId, Strategy)], g: f64) {
    for (state_id, action) in path {
        if let Ok(node) = tree.node_mut(*state_id) {
            let a = action.index();
            node.stats.visits[a] += 1;
            let n = node.stats.visits[a] as f64;
            node.stats.values[a] += (g - node.stats.values[a]) / n;
        }
    }
}

/// Run S simulations from a fresh root. Each simulation descends by sampling
/// the selection distribution until it reaches an unexpanded edge or a
/// terminal node, expands once, rolls out, and backpropagates. Descents that
/// land on a terminal node backpropagate its recorded reward.
pub fn build_tree(
    tree_id: TreeId,
    seed_utterances: Vec<(Role, String)>,
    env: &dyn DialogueEnv,
    policy: &PolicyParams,
    cfg: &SearchConfig,
) -> Result<TrajectoryTree, SearchError> {
    let mut tree = TrajectoryTree::new(tree_id, cfg.depth_limit, seed_utterances);
    let mut rng = tree_rng(cfg.rng_seed, tree_id.0);

    for _ in 0..cfg.simulations {
        let mut path: Vec<(NodeId, Strategy)> = Vec::new();
        let mut current = tree.root_id;
        loop {
            let node = tree.node(current)?;
            if node.state.terminal {
                let g = node.state.terminal_reward.unwrap_or(0.0);
                backpropagate(&mut tree, &path, g);
                break;
            }
            let key = crate::model::StateKey::new(tree_id, current);
            let prior = policy.prob(&crate::policy::StateFeatures {
                key,
                turn: node.state.turn,
                last_action: node.state.action_from_parent,
            });
            let rho = exploration_ratio(node.stats.total_visits(), cfg.kappa);
            let mu = selection_distribution(
                &node.stats.visits,
                &node.stats.values,
                &prior,
                rho,
                cfg.explore_weight,
            );
            let action = select_action(&mu, &mut rng);
            match tree.child(current, action) {
                Some(child) => {
                    path.push((current, action));
                    current = child;
                }
                None => {
                    let child = expand(&mut tree, current, action, env)?;
                    path.push((current, action));
                    let child_node = tree.node(child)?;
                    let g = if child_node.state.terminal {
                        child_node.state.terminal_reward.unwrap_or(0.0)
                    } else {
                        let start = child_node.state.clone();
                        rollout(env, policy, &start, cfg.rollout_depth, &mut rng)
                    };
                    backpropagate(&mut tree, &path, g);
                    break;
                }
            }
        }
    }
    Ok(tree)
}
