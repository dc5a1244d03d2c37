//! Analysis-metric emission: per-turn strategy distributions and entropy,
//! turn-wise reward trajectories with a stability measure, and the value-gap
//! report. Everything lands as delimited tables consumable by any plotting
//! tool.

use crate::corpus::TreeCorpus;
use crate::env::immediate_reward;
use crate::model::{StateKey, NUM_STRATEGIES};
use crate::oracle::{value_gap_report, ValueGapReport};
use crate::policy::{PolicyParams, ValueParams};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// Mean policy distribution and its entropy per turn index.
    pub strategy_by_turn: Vec<(u32, [f64; NUM_STRATEGIES], f64)>,
    /// Mean immediate reward and node count per turn index.
    pub reward_by_turn: Vec<(u32, f64, usize)>,
    /// Mean absolute change between adjacent turn means.
    pub mean_adjacent_abs_change: f64,
    pub value_gaps: ValueGapReport,
    /// Mean dialogue turns over retained trajectories.
    pub mean_retained_turns: f64,
    pub retained_count: usize,
}

/// Compute all metric tables for a trained corpus/parameter pair.
pub fn compute_metrics(
    corpus: &TreeCorpus,
    policy: &PolicyParams,
    values: &ValueParams,
) -> MetricsReport {
    // per-turn mean policy distribution over non-terminal states
    let mut dist_by_turn: BTreeMap<u32, ([f64; NUM_STRATEGIES], usize)> = BTreeMap::new();
    let mut reward_by_turn: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for tree in corpus.trees.values() {
        for (id, node) in &tree.nodes {
            let turn = node.state.turn;
            if !node.state.terminal {
                let features = crate::policy::StateFeatures {
                    key: StateKey::new(tree.tree_id, *id),
                    turn,
                    last_action: node.state.action_from_parent,
                };
                let pi = policy.prob(&features);
                let slot = dist_by_turn.entry(turn).or_insert(([0.0; NUM_STRATEGIES], 0));
                for (acc, p) in slot.0.iter_mut().zip(pi.iter()) {
                    *acc += p;
                }
                slot.1 += 1;
            }
            if let Some(scores) = &node.state.scores {
                let slot = reward_by_turn.entry(turn).or_insert((0.0, 0));
                slot.0 += immediate_reward(scores);
                slot.1 += 1;
            }
        }
    }
    let strategy_by_turn: Vec<(u32, [f64; NUM_STRATEGIES], f64)> = dist_by_turn
        .into_iter()
        .map(|(turn, (sums, count))| {
            let mut mean = [0.0; NUM_STRATEGIES];
            for a in 0..NUM_STRATEGIES {
                mean[a] = sums[a] / count as f64;
            }
            let h = crate::oracle::entropy(&mean);
            (turn, mean, h)
        })
        .collect();
    let reward_rows: Vec<(u32, f64, usize)> = reward_by_turn
        .into_iter()
        .map(|(turn, (sum, count))| (turn, sum / count as f64, count))
        .collect();
    let mean_adjacent_abs_change = if reward_rows.len() < 2 {
        0.0
    } else {
        reward_rows
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).abs())
            .sum::<f64>()
            / (reward_rows.len() - 1) as f64
    };

    let mut turns_total = 0usize;
    for traj in &corpus.trajectories {
        if let Some(tree) = corpus.tree(traj.tree_id) {
            turns_total += traj.dialogue_turns(tree);
        }
    }
    let retained_count = corpus.trajectories.len();
    let mean_retained_turns = if retained_count == 0 {
        0.0
    } else {
        turns_total as f64 / retained_count as f64
    };

    MetricsReport {
        strategy_by_turn,
        reward_by_turn: reward_rows,
        mean_adjacent_abs_change,
        value_gaps: value_gap_report(corpus, values),
        mean_retained_turns,
        retained_count,
    }
}

/// Write the metric tables under `dir`: strategy_by_turn.tsv,
/// reward_by_turn.tsv, value_gaps.tsv and summary.tsv.
pub fn emit_metrics(report: &MetricsReport, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut f = std::fs::File::create(dir.join("strategy_by_turn.tsv"))?;
    writeln!(
        f,
        "turn\t{}\tentropy",
        (0..NUM_STRATEGIES)
            .map(|a| format!("p{a}"))
            .collect::<Vec<_>>()
            .join("\t")
    )?;
    for (turn, dist, h) in &report.strategy_by_turn {
        let probs = dist
            .iter()
            .map(|p| format!("{p}"))
            .collect::<Vec<_>>()
            .join("\t");
        writeln!(f, "{turn}\t{probs}\t{h}")?;
    }

    let mut f = std::fs::File::create(dir.join("reward_by_turn.tsv"))?;
    writeln!(f, "turn\tmean_reward\tnodes\tabs_change_from_prev")?;
    let mut prev: Option<f64> = None;
    for (turn, mean, count) in &report.reward_by_turn {
        let change = prev.map(|p| format!("{}", (mean - p).abs())).unwrap_or_default();
        writeln!(f, "{turn}\t{mean}\t{count}\t{change}")?;
        prev = Some(*mean);
    }

    let mut f = std::fs::File::create(dir.join("value_gaps.tsv"))?;
    writeln!(
        f,
        "state\tturn\tgood_action\tbad_action\tgap_learned\tgap_search"
    )?;
    for e in &report.value_gaps.entries {
        writeln!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}",
            e.state, e.turn, e.good_action, e.bad_action, e.gap_learned, e.gap_search
        )?;
    }

    let mut f = std::fs::File::create(dir.join("summary.tsv"))?;
    writeln!(f, "metric\tvalue")?;
    writeln!(f, "retained_trajectories\t{}", report.retained_count)?;
    writeln!(f, "mean_retained_turns\t{}", report.mean_retained_turns)?;
    writeln!(
        f,
        "mean_adjacent_abs_change\t{}",
        report.mean_adjacent_abs_change
    )?;
    writeln!(
        f,
        "value_gap_fraction_positive_learned\t{}",
        report.value_gaps.fraction_positive_learned
    )?;
    writeln!(
        f,
        "value_gap_fraction_positive_search\t{}",
        report.value_gaps.fraction_positive_search
    )?;
    writeln!(f, "value_gap_mean_learned\t{}", report.value_gaps.mean_gap_learned)?;
    Ok(())
}
