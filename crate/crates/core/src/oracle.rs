//! Brute-force ground truth on enumerable instances: exhaustive trajectory
//! enumeration, reward-proportional target distributions, entropy bounds,
//! flow-conservation audits and the value-gap report.

use crate::corpus::TreeCorpus;
use crate::model::{NodeId, StateKey, Strategy, Trajectory, TrajectoryTree, NUM_STRATEGIES};
use crate::policy::{PolicyParams, ValueParams};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Hard cap on enumeration size; larger instances are refused.
pub const MAX_LEAVES: usize = 100_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large to enumerate: about {estimated_leaves} leaves exceeds {MAX_LEAVES}")]
    TooLarge { estimated_leaves: usize },
    #[error("all rewards are zero; no target distribution exists")]
    ZeroRewards,
    #[error("negative reward {0} is not allowed")]
    NegativeReward(f64),
    #[error("leaf {0} is not terminal; the tree is not a complete instance")]
    NonTerminalLeaf(NodeId),
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
}

/// Every root-to-leaf trajectory with its terminal reward, in deterministic
/// node-id-lexicographic order. Every leaf must be terminal and the leaf
/// count must stay under the enumeration cap.
pub fn enumerate_trajectories(
    tree: &TrajectoryTree,
) -> Result<Vec<(Trajectory, f64)>, OracleError> {
    let leaves = tree.leaves();
    if leaves.len() > MAX_LEAVES {
        return Err(OracleError::TooLarge {
            estimated_leaves: leaves.len(),
        });
    }
    let mut out = Vec::with_capacity(leaves.len());
    for leaf in leaves {
        let node = tree.node(leaf)?;
        if !node.state.terminal {
            return Err(OracleError::NonTerminalLeaf(leaf));
        }
        let reward = node.state.terminal_reward.unwrap_or(0.0);
        let states = tree.path_to(leaf)?;
        let actions = states[1..]
            .iter()
            .map(|id| {
                tree.nodes[id]
                    .state
                    .action_from_parent
                    .expect("non-root node has an incoming action")
            })
            .collect();
        out.push((
            Trajectory {
                tree_id: tree.tree_id,
                states,
                actions,
            },
            reward,
        ));
    }
    out.sort_by(|a, b| a.0.states.cmp(&b.0.states));
    Ok(out)
}

/// Reward-proportional target: R(tau) / sum R.
pub fn target_distribution(rewards: &[f64]) -> Result<Vec<f64>, OracleError> {
    for r in rewards {
        if *r < 0.0 {
            return Err(OracleError::NegativeReward(*r));
        }
    }
    let total: f64 = rewards.iter().sum();
    if total <= 0.0 {
        return Err(OracleError::ZeroRewards);
    }
    Ok(rewards.iter().map(|r| r / total).collect())
}

/// Probability the policy generates each enumerated trajectory: the product
/// of per-step probabilities under the policy restricted to each node's
/// materialized action set. Sums to 1 on trees whose leaves are all terminal.
pub fn policy_trajectory_distribution(
    policy: &PolicyParams,
    tree: &TrajectoryTree,
    trajectories: &[(Trajectory, f64)],
) -> Vec<f64> {
    trajectories
        .iter()
        .map(|(traj, _)| {
            let mut p = 1.0;
            for (i, action) in traj.actions.iter().enumerate() {
                let node = &tree.nodes[&traj.states[i]];
                let key = StateKey::new(tree.tree_id, traj.states[i]);
                let features = crate::policy::StateFeatures {
                    key,
                    turn: node.state.turn,
                    last_action: node.state.action_from_parent,
                };
                let mask = crate::policy::ActionMask::from_actions(
                    Strategy::ALL
                        .iter()
                        .copied()
                        .filter(|a| tree.edges.contains_key(&(traj.states[i], *a))),
                );
                p *= policy.prob_masked(&features, mask)[action.index()];
            }
            p
        })
        .collect()
}

/// Shannon entropy with the 0 ln 0 = 0 convention.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|x| **x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

/// Lower bound ln(sum R / max R) implied by reward-proportional sampling.
pub fn entropy_lower_bound(rewards: &[f64]) -> Result<f64, OracleError> {
    for r in rewards {
        if *r < 0.0 {
            return Err(OracleError::NegativeReward(*r));
        }
    }
    let total: f64 = rewards.iter().sum();
    let max = rewards.iter().cloned().fold(0.0f64, f64::max);
    if total <= 0.0 || max <= 0.0 {
        return Err(OracleError::ZeroRewards);
    }
    Ok((total / max).ln())
}

/// Per-node flow conservation audit entry.
#[derive(Debug, Clone, Serialize)]
pub struct NodeResidual {
    pub state: String,
    pub incoming: f64,
    pub outgoing: f64,
    pub residual: f64,
}

/// Flow conservation report over one tree.
#[derive(Debug, Clone, Serialize)]
pub struct ConservationReport {
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub nodes: Vec<NodeResidual>,
}

/// Check, at every non-terminal node, that incoming flow matches the summed
/// outgoing flow F(s) pi(a|s) over materialized edges. The root's incoming
/// flow is its own state flow. Always produces a report; `pass` is set iff
/// the largest residual is within tolerance.
pub fn check_flow_conservation(
    corpus: &TreeCorpus,
    tree: &TrajectoryTree,
    policy: &PolicyParams,
    values: &ValueParams,
    clamp_leaf: bool,
    tol: f64,
) -> ConservationReport {
    let eps = corpus.params.eps_flow;
    let flow = |id: NodeId| -> Option<f64> {
        let key = StateKey::new(tree.tree_id, id);
        let qhat = corpus.qhat_state.get(&key)?;
        let terminal = tree.nodes[&id].state.terminal;
        let v = if clamp_leaf && terminal {
            1.0
        } else {
            values.value_state(&key)
        };
        Some(qhat.max(eps) * v)
    };
    let masked_prob = |id: NodeId| -> [f64; NUM_STRATEGIES] {
        let key = StateKey::new(tree.tree_id, id);
        let node = &tree.nodes[&id];
        let features = crate::policy::StateFeatures {
            key,
            turn: node.state.turn,
            last_action: node.state.action_from_parent,
        };
        let mask = crate::policy::ActionMask::from_actions(
            Strategy::ALL
                .iter()
                .copied()
                .filter(|a| tree.edges.contains_key(&(id, *a))),
        );
        if mask.is_empty() {
            [0.0; NUM_STRATEGIES]
        } else {
            policy.prob_masked(&features, mask)
        }
    };

    let mut nodes = Vec::new();
    let mut max_residual: f64 = 0.0;
    for (id, node) in &tree.nodes {
        if node.state.terminal {
            continue;
        }
        let Some(f_here) = flow(*id) else { continue };
        let incoming = match node.state.parent_id {
            None => f_here,
            Some(parent) => {
                let action = node.state.action_from_parent.expect("non-root has action");
                match flow(parent) {
                    Some(fp) => fp * masked_prob(parent)[action.index()],
                    None => continue,
                }
            }
        };
        let pi = masked_prob(*id);
        let outgoing: f64 = Strategy::ALL
            .iter()
            .filter(|a| tree.edges.contains_key(&(*id, **a)))
            .map(|a| f_here * pi[a.index()])
            .sum();
        let residual = (incoming - outgoing).abs();
        max_residual = max_residual.max(residual);
        nodes.push(NodeResidual {
            state: StateKey::new(tree.tree_id, *id).to_string(),
            incoming,
            outgoing,
            residual,
        });
    }
    ConservationReport {
        max_residual,
        tolerance: tol,
        pass: max_residual <= tol,
        nodes,
    }
}

/// One matched state in the value-gap report: sibling branches whose subtree
/// terminal rewards differ, compared by both estimators.
#[derive(Debug, Clone, Serialize)]
pub struct ValueGapEntry {
    pub state: String,
    pub turn: u32,
    pub good_action: usize,
    pub bad_action: usize,
    /// Gap under the trained action head V(s, a_good) - V(s, a_bad).
    pub gap_learned: f64,
    /// Gap under the search estimates Q(s, a_good) - Q(s, a_bad).
    pub gap_search: f64,
}

/// Aggregated value-gap statistics (the discrimination measure between
/// higher- and lower-terminal-reward branches).
#[derive(Debug, Clone, Serialize)]
pub struct ValueGapReport {
    pub entries: Vec<ValueGapEntry>,
    pub mean_gap_learned: f64,
    pub mean_gap_search: f64,
    pub fraction_positive_learned: f64,
    pub fraction_positive_search: f64,
    /// Mean learned gap by turn index of the matched state.
    pub per_turn_learned: BTreeMap<u32, f64>,
    pub note: Option<String>,
}

/// Mean terminal reward of the subtree reached through (state, action), if
/// that branch contains any terminal descendant.
fn branch_terminal_outcome(tree: &TrajectoryTree, root: NodeId) -> Option<f64> {
    let mut stack = vec![root];
    let mut total = 0.0;
    let mut count = 0usize;
    while let Some(id) = stack.pop() {
        let node = &tree.nodes[&id];
        if node.state.terminal {
            total += node.state.terminal_reward.unwrap_or(0.0);
            count += 1;
            continue;
        }
        for a in Strategy::ALL {
            if let Some(child) = tree.child(id, a) {
                stack.push(child);
            }
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Per matched state, the value gap between the branches with the highest
/// and lowest subtree terminal outcomes. States qualify when at least two
/// visited branches carry terminal descendants with differing outcomes.
pub fn value_gap_report(corpus: &TreeCorpus, values: &ValueParams) -> ValueGapReport {
    let mut entries = Vec::new();
    for tree in corpus.trees.values() {
        for (id, node) in &tree.nodes {
            if node.state.terminal {
                continue;
            }
            let mut branches: Vec<(usize, f64)> = Vec::new();
            for a in Strategy::ALL {
                if node.stats.visits[a.index()] == 0 {
                    continue;
                }
                if let Some(child) = tree.child(*id, a) {
                    if let Some(outcome) = branch_terminal_outcome(tree, child) {
                        branches.push((a.index(), outcome));
                    }
                }
            }
            if branches.len() < 2 {
                continue;
            }
            let good = branches
                .iter()
                .cloned()
                .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(b.0.cmp(&a.0)))
                .expect("non-empty");
            let bad = branches
                .iter()
                .cloned()
                .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(b.0.cmp(&a.0)))
                .expect("non-empty");
            if good.1 <= bad.1 {
                continue; // all outcomes equal; not a matched state
            }
            let key = StateKey::new(tree.tree_id, *id);
            let ga = Strategy::ALL[good.0];
            let ba = Strategy::ALL[bad.0];
            entries.push(ValueGapEntry {
                state: key.to_string(),
                turn: node.state.turn,
                good_action: good.0,
                bad_action: bad.0,
                gap_learned: values.value_action(&key, ga) - values.value_action(&key, ba),
                gap_search: node.stats.values[good.0] - node.stats.values[bad.0],
            });
        }
    }
    let n = entries.len();
    let mean = |f: &dyn Fn(&ValueGapEntry) -> f64| -> f64 {
        if n == 0 {
            0.0
        } else {
            entries.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let frac = |f: &dyn Fn(&ValueGapEntry) -> f64| -> f64 {
        if n == 0 {
            0.0
        } else {
            entries.iter().filter(|e| f(e) > 0.0).count() as f64 / n as f64
        }
    };
    let mut per_turn: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for e in &entries {
        let slot = per_turn.entry(e.turn).or_insert((0.0, 0));
        slot.0 += e.gap_learned;
        slot.1 += 1;
    }
    ValueGapReport {
        mean_gap_learned: mean(&|e| e.gap_learned),
        mean_gap_search: mean(&|e| e.gap_search),
        fraction_positive_learned: frac(&|e| e.gap_learned),
        fraction_positive_search: frac(&|e| e.gap_search),
        per_turn_learned: per_turn
            .into_iter()
            .map(|(t, (sum, c))| (t, sum / c as f64))
            .collect(),
        note: if n == 0 {
            Some("no matched states with differing branch outcomes".into())
        } else {
            None
        },
        entries,
    }
}

/// Build the complete K-ary fixture tree used by the enumerable checks: every
/// non-terminal node materializes the first `arity` strategies, every
/// depth-`depth` leaf is terminal with a caller-supplied reward, and every
/// visited edge carries one visit with a Q matching the subtree mean so the
/// derived targets are well-formed.
pub fn build_enumerable_tree(
    tree_id: crate::model::TreeId,
    arity: usize,
    depth: u32,
    leaf_reward: &dyn Fn(usize) -> f64,
) -> TrajectoryTree {
    use crate::model::{Role, TurnScores};
    assert!((1..=NUM_STRATEGIES).contains(&arity));
    let mut tree = TrajectoryTree::new(
        tree_id,
        depth,
        vec![(Role::Seeker, "seeker[]".to_string())],
    );
    let mut leaf_counter = 0usize;
    // depth-first materialization, action-index order; ids are then
    // lexicographic along paths
    fn grow(
        tree: &mut TrajectoryTree,
        node: NodeId,
        arity: usize,
        depth: u32,
        leaf_counter: &mut usize,
        leaf_reward: &dyn Fn(usize) -> f64,
    ) {
        let turn = tree.nodes[&node].state.turn;
        for a in Strategy::ALL.iter().take(arity) {
            let terminal = turn + 1 == depth;
            let reward = if terminal {
                let r = leaf_reward(*leaf_counter);
                *leaf_counter += 1;
                Some(r)
            } else {
                None
            };
            let child = tree
                .push_child(
                    node,
                    *a,
                    vec![],
                    TurnScores::new(2.5, 2.5, 2.5, 2.5),
                    terminal,
                    reward,
                )
                .expect("fresh edge");
            if !terminal {
                grow(tree, child, arity, depth, leaf_counter, leaf_reward);
            }
        }
    }
    let root = tree.root_id;
    grow(&mut tree, root, arity, depth, &mut leaf_counter, leaf_reward);

    // bottom-up visit/Q fill: each edge gets one visit with Q equal to the
    // mean terminal reward of its subtree, keeping stats well-formed
    let ids: Vec<NodeId> = tree.nodes.keys().copied().collect();
    let mut order = ids.clone();
    order.sort_by_key(|id| std::cmp::Reverse(tree.nodes[id].state.turn));
    for id in order {
        if tree.nodes[&id].state.terminal {
            continue;
        }
        for a in Strategy::ALL.iter().take(arity) {
            if let Some(child) = tree.child(id, *a) {
                let q = branch_terminal_outcome(&tree, child).unwrap_or(0.0);
                let node = tree.node_mut(id).expect("node exists");
                node.stats.visits[a.index()] = 1;
                node.stats.values[a.index()] = q;
            }
        }
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TreeId;
    use crate::rng::{next_unit, tree_rng};

    #[test]
    fn enumeration_counts_match_product_formula() {
        let t2 = build_enumerable_tree(TreeId(0), 2, 2, &|_| 1.0);
        assert_eq!(enumerate_trajectories(&t2).unwrap().len(), 4);
        let t3 = build_enumerable_tree(TreeId(0), 3, 3, &|_| 1.0);
        assert_eq!(enumerate_trajectories(&t3).unwrap().len(), 27);
    }

    #[test]
    fn enumeration_with_early_terminal_branch_is_smaller() {
        let mut tree = build_enumerable_tree(TreeId(0), 2, 3, &|_| 1.0);
        // cut one depth-1 subtree down to a terminal node
        let child = tree.child(NodeId(0), Strategy::ALL[0]).unwrap();
        let doomed: Vec<NodeId> = tree
            .nodes
            .keys()
            .copied()
            .filter(|id| {
                let mut cur = *id;
                loop {
                    if cur == child {
                        break *id != child;
                    }
                    match tree.nodes[&cur].state.parent_id {
                        Some(p) => cur = p,
                        None => break false,
                    }
                }
            })
            .collect();
        for id in &doomed {
            tree.nodes.remove(id);
        }
        tree.edges.retain(|_, v| tree.nodes.contains_key(v));
        {
            let node = tree.node_mut(child).unwrap();
            node.state.terminal = true;
            node.state.terminal_reward = Some(0.5);
            node.stats = Default::default();
        }
        let count = enumerate_trajectories(&tree).unwrap().len();
        assert_eq!(count, 5); // 4 full paths on one side + 1 early terminal
        assert!(count < 8);
    }

    #[test]
    fn enumeration_rejects_incomplete_trees() {
        let mut tree = build_enumerable_tree(TreeId(0), 2, 2, &|_| 1.0);
        let leaf = *tree.leaves().first().unwrap();
        let node = tree.node_mut(leaf).unwrap();
        node.state.terminal = false;
        node.state.terminal_reward = None;
        assert!(matches!(
            enumerate_trajectories(&tree),
            Err(OracleError::NonTerminalLeaf(_))
        ));
    }

    #[test]
    fn target_distribution_cases() {
        let d = target_distribution(&[3.0, 1.0]).unwrap();
        assert_eq!(d, vec![0.75, 0.25]);
        let u = target_distribution(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(u.iter().all(|p| (p - 0.25).abs() < 1e-15));
        let z = target_distribution(&[2.0, 0.0, 2.0]).unwrap();
        assert_eq!(z, vec![0.5, 0.0, 0.5]);
        assert!(matches!(
            target_distribution(&[0.0, 0.0]),
            Err(OracleError::ZeroRewards)
        ));
        assert!(matches!(
            target_distribution(&[1.0, -0.1]),
            Err(OracleError::NegativeReward(_))
        ));
    }

    #[test]
    fn trajectory_distribution_sums_to_one_under_random_policies() {
        let tree = build_enumerable_tree(TreeId(0), 3, 3, &|i| 0.1 + i as f64 * 0.01);
        let trajs = enumerate_trajectories(&tree).unwrap();
        let mut rng = tree_rng(19, 0);
        for _ in 0..20 {
            let mut logits = std::collections::BTreeMap::new();
            for id in tree.nodes.keys() {
                let mut row = [0.0; NUM_STRATEGIES];
                for v in &mut row {
                    *v = 4.0 * next_unit(&mut rng) - 2.0;
                }
                logits.insert(StateKey::new(TreeId(0), *id), row);
            }
            let policy = PolicyParams::Tabular { logits };
            let dist = policy_trajectory_distribution(&policy, &tree, &trajs);
            let sum: f64 = dist.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "sum was {sum}");
        }
        // uniform policy on the 3-ary tree: 1/27 each
        let uniform = PolicyParams::tabular();
        let dist = policy_trajectory_distribution(&uniform, &tree, &trajs);
        for p in dist {
            assert!((p - 1.0 / 27.0).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_and_bound_cases() {
        assert!((entropy(&[0.5, 0.5]) - 2.0f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
        let b = entropy_lower_bound(&[1.0, 1.0]).unwrap();
        assert!((b - 2.0f64.ln()).abs() < 1e-12);
        let b2 = entropy_lower_bound(&[3.0, 1.0]).unwrap();
        assert!((b2 - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        let h = entropy(&target_distribution(&[3.0, 1.0]).unwrap());
        assert!((h - 0.5623351446188083).abs() < 1e-9);
        assert!(h >= b2);
        // single trajectory: both vanish
        assert_eq!(entropy_lower_bound(&[2.0]).unwrap(), 0.0);
        assert_eq!(entropy(&[1.0]), 0.0);
    }

    #[test]
    fn entropy_bound_holds_for_fuzzed_rewards() {
        let mut rng = tree_rng(23, 1);
        for _ in 0..1000 {
            let len = 2 + (next_unit(&mut rng) * 16.0) as usize;
            let rewards: Vec<f64> = (0..len).map(|_| next_unit(&mut rng) * 5.0).collect();
            if rewards.iter().sum::<f64>() <= 0.0 {
                continue;
            }
            let target = target_distribution(&rewards).unwrap();
            let h = entropy(&target);
            let bound = entropy_lower_bound(&rewards).unwrap();
            assert!(
                h >= bound - 1e-12,
                "entropy {h} fell below bound {bound} for {rewards:?}"
            );
        }
    }

    #[test]
    fn conservation_is_exact_on_a_hand_balanced_fixture() {
        use crate::corpus::CorpusParams;
        // depth-2 binary tree: exact flows are the subtree reward sums and
        // the policy carries the flow ratios
        let rewards = [1.0, 0.5, 0.25, 0.25];
        let tree = build_enumerable_tree(TreeId(0), 2, 2, &|i| rewards[i]);
        let corpus = TreeCorpus::from_trees(
            vec![tree],
            CorpusParams {
                min_nodes: 0,
                eps_flow: 1e-9,
                depth_limit: 2,
            },
            "t".into(),
            0,
        )
        .unwrap();
        let tree = corpus.tree(TreeId(0)).unwrap();
        let mut values = ValueParams::new();
        let mut logits = std::collections::BTreeMap::new();
        let subtree_sum = |id: NodeId| -> f64 {
            let mut total = 0.0;
            let mut stack = vec![id];
            while let Some(cur) = stack.pop() {
                let node = &tree.nodes[&cur];
                if node.state.terminal {
                    total += node.state.terminal_reward.unwrap();
                } else {
                    for a in Strategy::ALL {
                        if let Some(c) = tree.child(cur, a) {
                            stack.push(c);
                        }
                    }
                }
            }
            total
        };
        for (id, node) in &tree.nodes {
            if node.state.terminal {
                continue;
            }
            let key = StateKey::new(TreeId(0), *id);
            let target_flow = subtree_sum(*id);
            let qhat = corpus.qhat_state(&key).unwrap();
            values.state_head.insert(key, (target_flow / qhat).ln());
            let mut row = [0.0; NUM_STRATEGIES];
            for a in Strategy::ALL {
                if let Some(child) = tree.child(*id, a) {
                    row[a.index()] = (subtree_sum(child) / target_flow).ln();
                }
            }
            logits.insert(key, row);
        }
        let policy = PolicyParams::Tabular { logits };
        let report = check_flow_conservation(&corpus, tree, &policy, &values, true, 1e-12);
        assert!(report.pass, "max residual {}", report.max_residual);

        // untrained parameters: residuals reported, no pass claim
        let uniform = PolicyParams::tabular();
        let fresh = ValueParams::new();
        let report2 = check_flow_conservation(&corpus, tree, &uniform, &fresh, true, 1e-12);
        assert!(!report2.nodes.is_empty());
        assert!(report2.max_residual > 0.0);
    }

    #[test]
    fn value_gap_report_flags_dominant_branches() {
        use crate::corpus::CorpusParams;
        // root with two visited branches: branch 0 leads to reward 1.0,
        // branch 1 to reward 0.2
        let tree = build_enumerable_tree(TreeId(0), 2, 2, &|i| if i < 2 { 1.0 } else { 0.2 });
        let corpus = TreeCorpus::from_trees(
            vec![tree],
            CorpusParams {
                min_nodes: 0,
                eps_flow: 1e-9,
                depth_limit: 2,
            },
            "t".into(),
            0,
        )
        .unwrap();
        // untrained values: all learned gaps are zero
        let fresh = ValueParams::new();
        let report = value_gap_report(&corpus, &fresh);
        assert!(!report.entries.is_empty());
        assert!(report.entries.iter().all(|e| e.gap_learned == 0.0));
        assert_eq!(report.fraction_positive_learned, 0.0);
        // the search-side gaps already separate the branches at the root
        let root_entry = report.entries.iter().find(|e| e.turn == 0).unwrap();
        assert!(root_entry.gap_search > 0.0);
        assert_eq!(root_entry.good_action, 0);

        // trained-looking values flip the learned fraction to 1
        let mut values = ValueParams::new();
        for e in &report.entries {
            let key: StateKey = e.state.parse().unwrap();
            let mut row = [0.0; NUM_STRATEGIES];
            row[e.good_action] = 1.0;
            row[e.bad_action] = -1.0;
            values.action_head.insert(key, row);
        }
        let report2 = value_gap_report(&corpus, &values);
        assert_eq!(report2.fraction_positive_learned, 1.0);
        assert!(report2.mean_gap_learned > 0.0);
    }

    #[test]
    fn value_gap_report_empty_on_symmetric_corpus() {
        use crate::corpus::CorpusParams;
        let tree = build_enumerable_tree(TreeId(0), 2, 2, &|_| 0.6);
        let corpus = TreeCorpus::from_trees(
            vec![tree],
            CorpusParams {
                min_nodes: 0,
                eps_flow: 1e-9,
                depth_limit: 2,
            },
            "t".into(),
            0,
        )
        .unwrap();
        let report = value_gap_report(&corpus, &ValueParams::new());
        assert!(report.entries.is_empty());
        assert!(report.note.is_some());
    }
}
