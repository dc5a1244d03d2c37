//! Property tests for the invariants that hold at any parameter setting.

use dialogue_flow::corpus::{CorpusParams, TreeCorpus};
use dialogue_flow::model::{
    NodeId, Role, StateKey, Strategy, TrajectoryTree, TreeId, TurnScores, NUM_STRATEGIES,
};
use dialogue_flow::oracle;
use dialogue_flow::policy::{ActionMask, PolicyParams, StateFeatures, ValueParams};
use dialogue_flow::search::selection_distribution;
use dialogue_flow::training::{self, evaluate_loss, PreferencePair, SubpathSignal, TrainConfig};
use proptest::prelude::*;
use proptest::strategy::Strategy as PropStrategy;

fn prior_strategy() -> impl PropStrategy<Value = [f64; NUM_STRATEGIES]> {
    proptest::array::uniform8(1e-3..1.0f64).prop_map(|mut raw| {
        let total: f64 = raw.iter().sum();
        for v in &mut raw {
            *v /= total;
        }
        raw
    })
}

proptest! {
    /// mu is a valid distribution with every entry at least rho / 8.
    #[test]
    fn selection_distribution_is_valid(
        visits in proptest::array::uniform8(0u64..40),
        raw_values in proptest::array::uniform8(0.0..1.0f64),
        prior in prior_strategy(),
        rho in 0.0..=1.0f64,
        explore in 0.0..3.0f64,
    ) {
        let mut values = raw_values;
        for a in 0..NUM_STRATEGIES {
            if visits[a] == 0 {
                values[a] = 0.0;
            }
        }
        let mu = selection_distribution(&visits, &values, &prior, rho, explore);
        let sum: f64 = mu.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        for p in mu {
            prop_assert!(p >= rho / NUM_STRATEGIES as f64 - 1e-12);
            prop_assert!(p <= 1.0 + 1e-12);
        }
    }

    /// Incremental-mean backprop equals the batch mean of the returns.
    #[test]
    fn incremental_mean_matches_batch(returns in proptest::collection::vec(0.0..1.0f64, 1..60)) {
        let mut tree = TrajectoryTree::new(TreeId(0), 2, vec![(Role::Seeker, "seeker[]".into())]);
        let a = Strategy::Affirmation;
        tree.push_child(tree.root_id, a, vec![], TurnScores::new(0.0, 0.0, 0.0, 0.0), true, Some(0.0))
            .unwrap();
        let path = vec![(tree.root_id, a)];
        for g in &returns {
            dialogue_flow::search::backpropagate(&mut tree, &path, *g);
        }
        let q = tree.node(tree.root_id).unwrap().stats.values[a.index()];
        let batch = returns.iter().sum::<f64>() / returns.len() as f64;
        prop_assert!((q - batch).abs() < 1e-12);
    }

    /// Softmax output is strictly positive, normalized and shift invariant.
    #[test]
    fn policy_prob_is_normalized_and_shift_invariant(
        logits in proptest::array::uniform8(-6.0..6.0f64),
        shift in -20.0..20.0f64,
    ) {
        let key = StateKey::new(TreeId(0), NodeId(0));
        let state = StateFeatures { key, turn: 0, last_action: None };
        let mut map = std::collections::BTreeMap::new();
        map.insert(key, logits);
        let pi = PolicyParams::Tabular { logits: map }.prob(&state);
        let sum: f64 = pi.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for p in pi {
            prop_assert!(p > 0.0 && p < 1.0);
        }
        let mut shifted = logits;
        for v in &mut shifted {
            *v += shift;
        }
        let mut map2 = std::collections::BTreeMap::new();
        map2.insert(key, shifted);
        let pi2 = PolicyParams::Tabular { logits: map2 }.prob(&state);
        for a in 0..NUM_STRATEGIES {
            prop_assert!((pi[a] - pi2[a]).abs() < 1e-9);
        }
    }

    /// V(s) stays strictly positive for any weight.
    #[test]
    fn state_value_is_structurally_positive(w in -300.0..300.0f64) {
        let key = StateKey::new(TreeId(0), NodeId(0));
        let mut values = ValueParams::new();
        values.state_head.insert(key, w);
        prop_assert!(values.value_state(&key) > 0.0);
    }

    /// Zero hinge loss holds exactly when every pair clears the margin.
    #[test]
    fn hinge_zero_iff_margins_met(
        gaps in proptest::collection::vec(-1.0..1.0f64, 1..12),
        gamma in 0.01..0.5f64,
    ) {
        let key = StateKey::new(TreeId(0), NodeId(0));
        let mut values = ValueParams::new();
        let mut pairs = Vec::new();
        for (i, gap) in gaps.iter().enumerate() {
            let state = StateKey::new(TreeId(i as u64), NodeId(0));
            let mut row = [0.0; NUM_STRATEGIES];
            row[0] = *gap;
            values.action_head.insert(state, row);
            pairs.push(PreferencePair {
                state,
                winner: Strategy::ALL[0],
                loser: Strategy::ALL[1],
                q_gap: 0.1,
            });
        }
        let loss = evaluate_loss(&pairs, &values, gamma);
        let all_met = gaps.iter().all(|g| *g >= gamma);
        prop_assert_eq!(loss == 0.0, all_met);
        let _ = key;
    }

    /// The reward-proportional distribution always clears the entropy bound.
    #[test]
    fn entropy_bound_below_target_entropy(
        rewards in proptest::collection::vec(0.0..5.0f64, 2..24),
    ) {
        prop_assume!(rewards.iter().sum::<f64>() > 0.0);
        let target = oracle::target_distribution(&rewards).unwrap();
        let h = oracle::entropy(&target);
        let bound = oracle::entropy_lower_bound(&rewards).unwrap();
        prop_assert!(h >= bound - 1e-12);
    }

    /// Masked trajectory products over a complete tree always sum to one.
    #[test]
    fn trajectory_distribution_absorbs_all_mass(
        raw_logits in proptest::collection::vec(-4.0..4.0f64, 16),
        rewards in proptest::array::uniform4(0.1..1.0f64),
    ) {
        let tree = oracle::build_enumerable_tree(TreeId(0), 2, 2, &|i| rewards[i]);
        let mut logits = std::collections::BTreeMap::new();
        for (i, id) in tree.nodes.keys().enumerate() {
            let mut row = [0.0; NUM_STRATEGIES];
            for a in 0..NUM_STRATEGIES {
                row[a] = raw_logits[(i * NUM_STRATEGIES + a) % raw_logits.len()];
            }
            logits.insert(StateKey::new(TreeId(0), *id), row);
        }
        let policy = PolicyParams::Tabular { logits };
        let trajs = oracle::enumerate_trajectories(&tree).unwrap();
        let dist = oracle::policy_trajectory_distribution(&policy, &tree, &trajs);
        prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    /// Subpath residuals are additive across any split point.
    #[test]
    fn residuals_add_across_split_points(
        horizon in 2usize..8,
        seed in 0u64..500,
    ) {
        let corpus = chain_corpus_for_props(horizon);
        let idx = corpus
            .trajectories
            .iter()
            .position(|t| t.horizon() == horizon)
            .unwrap();
        let mut rng = dialogue_flow::rng::tree_rng(seed, 0);
        let mut policy = PolicyParams::tabular();
        let mut values = ValueParams::new();
        if let PolicyParams::Tabular { logits } = &mut policy {
            for key in corpus.qhat_state.keys() {
                let mut row = [0.0; NUM_STRATEGIES];
                for v in &mut row {
                    *v = 4.0 * dialogue_flow::rng::next_unit(&mut rng) - 2.0;
                }
                logits.insert(*key, row);
            }
        }
        for key in corpus.qhat_state.keys() {
            values
                .state_head
                .insert(*key, 2.0 * dialogue_flow::rng::next_unit(&mut rng) - 1.0);
        }
        let cfg = TrainConfig::default();
        let res = |m: usize, n: usize| {
            training::subpath_residual(
                &corpus,
                &policy,
                &values,
                &SubpathSignal { trajectory: idx, m, n },
                &cfg,
            )
            .unwrap()
        };
        for m in 0..horizon {
            for k in (m + 1)..horizon {
                for n in (k + 1)..=horizon {
                    prop_assert!((res(m, n) - (res(m, k) + res(k, n))).abs() < 1e-12);
                }
            }
        }
    }
}

fn chain_corpus_for_props(horizon: usize) -> TreeCorpus {
    let mut tree = TrajectoryTree::new(
        TreeId(0),
        (horizon + 1) as u32,
        vec![(Role::Seeker, "seeker[]".into())],
    );
    let mut cur = tree.root_id;
    for depth in 1..=horizon {
        let mut next = None;
        for (slot, action) in Strategy::ALL.iter().take(3).enumerate() {
            let continues = slot == 0 && depth < horizon;
            let child = tree
                .push_child(
                    cur,
                    *action,
                    vec![],
                    TurnScores::new(2.0, 2.0, 2.0, 2.0),
                    !continues,
                    (!continues).then_some(0.25 + 0.05 * slot as f64),
                )
                .unwrap();
            if continues {
                next = Some(child);
            }
            let node = tree.node_mut(cur).unwrap();
            node.stats.visits[action.index()] = 1;
            node.stats.values[action.index()] = 0.4 + 0.1 * slot as f64;
        }
        cur = next.unwrap_or(cur);
        if next.is_none() {
            break;
        }
    }
    TreeCorpus::from_trees(
        vec![tree],
        CorpusParams {
            min_nodes: 0,
            eps_flow: 1e-6,
            depth_limit: (horizon + 1) as u32,
        },
        "prop".into(),
        0,
    )
    .unwrap()
}

#[test]
fn candidate_gating_holds_under_fuzz() {
    let mut rng = dialogue_flow::rng::tree_rng(7, 7);
    for _ in 0..200 {
        let key = StateKey::new(TreeId(0), NodeId(0));
        let state = StateFeatures {
            key,
            turn: 0,
            last_action: None,
        };
        let mut logits = std::collections::BTreeMap::new();
        let mut row = [0.0; NUM_STRATEGIES];
        for v in &mut row {
            *v = 6.0 * dialogue_flow::rng::next_unit(&mut rng) - 3.0;
        }
        logits.insert(key, row);
        let policy = PolicyParams::Tabular { logits };
        let mut values = ValueParams::new();
        let mut vrow = [0.0; NUM_STRATEGIES];
        for v in &mut vrow {
            *v = 10.0 * dialogue_flow::rng::next_unit(&mut rng) - 5.0;
        }
        values.action_head.insert(key, vrow);
        let k = 1 + (dialogue_flow::rng::next_unit(&mut rng) * 8.0) as usize;
        let pick = dialogue_flow::inference::select_strategy(&policy, &values, &state, k).unwrap();
        let candidates = dialogue_flow::inference::candidate_set(&policy, &state, k).unwrap();
        assert!(candidates.contains(&pick));
    }
}

#[test]
fn masked_probabilities_cover_exactly_the_mask() {
    let key = StateKey::new(TreeId(0), NodeId(0));
    let state = StateFeatures {
        key,
        turn: 0,
        last_action: None,
    };
    let policy = PolicyParams::tabular();
    for bits in 1u16..256 {
        let mask = ActionMask(bits as u8);
        let pi = policy.prob_masked(&state, mask);
        let mut sum = 0.0;
        for a in Strategy::ALL {
            if mask.contains(a) {
                assert!(pi[a.index()] > 0.0);
                sum += pi[a.index()];
            } else {
                assert_eq!(pi[a.index()], 0.0);
            }
        }
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
