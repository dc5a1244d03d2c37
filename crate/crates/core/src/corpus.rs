//! Persisted forest of search trees plus the training targets derived from
//! them: retained trajectories and the Q-hat state/edge estimates.
//!
//! The file format is line-delimited JSON, one record per node in fixed field
//! order, with a trailing manifest record carrying the config hash, the seed
//! and record counts. Utterance text is opaque and is not persisted; loading
//! reconstructs canonical path placeholders.

use crate::model::{
    extract_trajectories, state_value_qhat, NodeId, NodeStats, Role, StateKey, Strategy,
    Trajectory, TrajectoryTree, TreeId, TreeNode, TurnScores, NUM_STRATEGIES,
};
use crate::policy::{ActionMask, StateFeatures};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Parameters governing trajectory retention and flow flooring. Loading a
/// corpus requires the same values it was built with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusParams {
    /// Keep root-to-leaf paths with strictly more than this many nodes.
    pub min_nodes: usize,
    /// Floor applied to every Q-hat before logarithms.
    pub eps_flow: f64,
    /// Depth limit the trees were built with.
    pub depth_limit: u32,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            min_nodes: 3,
            eps_flow: 1e-6,
            depth_limit: 10,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
    #[error("corpus inconsistent: {0}")]
    Inconsistent(String),
    #[error("missing Q-hat entry for {0}")]
    MissingQhat(String),
}

/// Forest of trees plus extracted trajectories and search-derived targets.
#[derive(Debug, Clone)]
pub struct TreeCorpus {
    pub trees: BTreeMap<TreeId, TrajectoryTree>,
    pub trajectories: Vec<Trajectory>,
    pub qhat_state: BTreeMap<StateKey, f64>,
    pub qhat_edge: BTreeMap<(StateKey, Strategy), f64>,
    pub config_hash: String,
    pub seed: u64,
    pub params: CorpusParams,
}

impl TreeCorpus {
    /// Derive a corpus from finished trees. Retained trajectories are the
    /// root-to-leaf paths above the node threshold that end at a terminal
    /// leaf (only those carry a value estimate at every state). Q-hat entries
    /// cover every visited state and edge plus every terminal state.
    pub fn from_trees(
        trees: Vec<TrajectoryTree>,
        params: CorpusParams,
        config_hash: String,
        seed: u64,
    ) -> Result<Self, CorpusError> {
        let mut tree_map = BTreeMap::new();
        let mut trajectories = Vec::new();
        let mut qhat_state = BTreeMap::new();
        let mut qhat_edge = BTreeMap::new();

        for tree in trees {
            tree.validate()?;
            for (id, node) in &tree.nodes {
                let key = StateKey::new(tree.tree_id, *id);
                if node.state.terminal || node.stats.total_visits() > 0 {
                    qhat_state.insert(key, state_value_qhat(&tree, *id, params.eps_flow)?);
                }
                for a in 0..NUM_STRATEGIES {
                    if node.stats.visits[a] > 0 {
                        qhat_edge.insert(
                            (key, Strategy::ALL[a]),
                            node.stats.values[a].max(params.eps_flow),
                        );
                    }
                }
            }
            for traj in extract_trajectories(&tree, params.min_nodes) {
                let leaf = *traj.states.last().expect("non-empty trajectory");
                if tree.nodes[&leaf].state.terminal {
                    trajectories.push(traj);
                }
            }
            tree_map.insert(tree.tree_id, tree);
        }
        trajectories.sort_by(|a, b| (a.tree_id, &a.states).cmp(&(b.tree_id, &b.states)));

        let corpus = TreeCorpus {
            trees: tree_map,
            trajectories,
            qhat_state,
            qhat_edge,
            config_hash,
            seed,
            params,
        };
        corpus.check_coverage()?;
        Ok(corpus)
    }

    /// Every state and edge referenced by a trajectory must have a Q-hat.
    fn check_coverage(&self) -> Result<(), CorpusError> {
        for traj in &self.trajectories {
            for (i, node) in traj.states.iter().enumerate() {
                let key = StateKey::new(traj.tree_id, *node);
                if !self.qhat_state.contains_key(&key) {
                    return Err(CorpusError::MissingQhat(key.to_string()));
                }
                if i < traj.actions.len() {
                    let edge = (key, traj.actions[i]);
                    if !self.qhat_edge.contains_key(&edge) {
                        return Err(CorpusError::MissingQhat(format!(
                            "{key} action {}",
                            traj.actions[i]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn tree(&self, id: TreeId) -> Option<&TrajectoryTree> {
        self.trees.get(&id)
    }

    pub fn node(&self, key: &StateKey) -> Option<&TreeNode> {
        self.trees.get(&key.tree)?.nodes.get(&key.node)
    }

    /// Policy conditioning inputs for a corpus state.
    pub fn state_features(&self, key: &StateKey) -> Option<StateFeatures> {
        let node = self.node(key)?;
        Some(StateFeatures {
            key: *key,
            turn: node.state.turn,
            last_action: node.state.action_from_parent,
        })
    }

    /// Materialized action set at a corpus state.
    pub fn support_mask(&self, key: &StateKey) -> ActionMask {
        match self.trees.get(&key.tree) {
            Some(tree) => {
                let actions = Strategy::ALL
                    .iter()
                    .copied()
                    .filter(|a| tree.edges.contains_key(&(key.node, *a)));
                let mask = ActionMask::from_actions(actions);
                if mask.is_empty() {
                    ActionMask::FULL
                } else {
                    mask
                }
            }
            None => ActionMask::FULL,
        }
    }

    pub fn qhat_state(&self, key: &StateKey) -> Result<f64, CorpusError> {
        self.qhat_state
            .get(key)
            .copied()
            .ok_or_else(|| CorpusError::MissingQhat(key.to_string()))
    }

    /// Structural identity: same trees (ids, topology, numeric fields
    /// bit-for-bit), trajectories, targets, seed and config hash. Utterance
    /// text is not part of the persisted structure and is ignored.
    pub fn structurally_equal(&self, other: &TreeCorpus) -> bool {
        if self.config_hash != other.config_hash
            || self.seed != other.seed
            || self.trees.len() != other.trees.len()
            || self.trajectories != other.trajectories
        {
            return false;
        }
        let bits = |m: &BTreeMap<StateKey, f64>| -> Vec<(StateKey, u64)> {
            m.iter().map(|(k, v)| (*k, v.to_bits())).collect()
        };
        if bits(&self.qhat_state) != bits(&other.qhat_state) {
            return false;
        }
        let ebits = |m: &BTreeMap<(StateKey, Strategy), f64>| -> Vec<((StateKey, Strategy), u64)> {
            m.iter().map(|(k, v)| (*k, v.to_bits())).collect()
        };
        if ebits(&self.qhat_edge) != ebits(&other.qhat_edge) {
            return false;
        }
        for (id, tree) in &self.trees {
            let Some(other_tree) = other.trees.get(id) else {
                return false;
            };
            if tree.edges != other_tree.edges || tree.nodes.len() != other_tree.nodes.len() {
                return false;
            }
            for (nid, node) in &tree.nodes {
                let Some(o) = other_tree.nodes.get(nid) else {
                    return false;
                };
                let s = &node.state;
                let os = &o.state;
                if s.parent_id != os.parent_id
                    || s.turn != os.turn
                    || s.action_from_parent != os.action_from_parent
                    || s.terminal != os.terminal
                    || s.terminal_reward.map(f64::to_bits) != os.terminal_reward.map(f64::to_bits)
                    || node.stats.visits != o.stats.visits
                {
                    return false;
                }
                let vbits = |v: &[f64; NUM_STRATEGIES]| v.map(f64::to_bits);
                if vbits(&node.stats.values) != vbits(&o.stats.values) {
                    return false;
                }
                let sbits = |sc: &Option<TurnScores>| {
                    sc.map(|t| {
                        [
                            t.empathy.to_bits(),
                            t.info_quality.to_bits(),
                            t.naturalness.to_bits(),
                            t.strategic_efficacy.to_bits(),
                        ]
                    })
                };
                if sbits(&s.scores) != sbits(&os.scores) {
                    return false;
                }
            }
        }
        true
    }

    /// Write the corpus in the line-delimited node-record format.
    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let file = std::fs::File::create(path)?;
        let mut out = BufWriter::new(file);
        let mut nodes = 0usize;
        for tree in self.trees.values() {
            for (id, node) in &tree.nodes {
                let record = NodeRecord {
                    tree_id: tree.tree_id.0,
                    node_id: id.0,
                    parent_id: node.state.parent_id.map(|p| p.0),
                    action_index: node.state.action_from_parent.map(|a| a.index()),
                    turn: node.state.turn,
                    terminal: node.state.terminal,
                    terminal_reward: node.state.terminal_reward,
                    visits: node.stats.visits,
                    values: node.stats.values,
                    scores: node.state.scores,
                };
                serde_json::to_writer(&mut out, &record)
                    .map_err(|source| CorpusError::Parse { line: nodes, source })?;
                out.write_all(b"\n")?;
                nodes += 1;
            }
        }
        let manifest = ManifestRecord {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            counts: Counts {
                trees: self.trees.len(),
                nodes,
                trajectories: self.trajectories.len(),
            },
        };
        serde_json::to_writer(&mut out, &manifest)
            .map_err(|source| CorpusError::Parse { line: nodes, source })?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    /// Read a corpus written by [`TreeCorpus::write`], rebuilding trees,
    /// trajectories and Q-hat targets under `params`. Counts recorded in the
    /// manifest must match the rebuild.
    pub fn read(path: &Path, params: &CorpusParams) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut node_records: Vec<NodeRecord> = Vec::new();
        let mut manifest: Option<ManifestRecord> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if manifest.is_some() {
                return Err(CorpusError::Inconsistent(
                    "records found after the manifest".into(),
                ));
            }
            match serde_json::from_str::<NodeRecord>(&line) {
                Ok(rec) => node_records.push(rec),
                Err(_) => {
                    let m = serde_json::from_str::<ManifestRecord>(&line)
                        .map_err(|source| CorpusError::Parse { line: idx, source })?;
                    manifest = Some(m);
                }
            }
        }
        let manifest = manifest
            .ok_or_else(|| CorpusError::Inconsistent("missing trailing manifest".into()))?;

        let mut grouped: BTreeMap<u64, Vec<NodeRecord>> = BTreeMap::new();
        for rec in node_records {
            grouped.entry(rec.tree_id).or_default().push(rec);
        }
        let mut trees = Vec::new();
        for (tree_id, records) in grouped {
            trees.push(rebuild_tree(TreeId(tree_id), records, params.depth_limit)?);
        }
        let total_nodes: usize = trees.iter().map(|t| t.nodes.len()).sum();
        if manifest.counts.trees != trees.len() || manifest.counts.nodes != total_nodes {
            return Err(CorpusError::Inconsistent(format!(
                "manifest counts {}/{} do not match records {}/{}",
                manifest.counts.trees,
                manifest.counts.nodes,
                trees.len(),
                total_nodes
            )));
        }
        let corpus = TreeCorpus::from_trees(
            trees,
            params.clone(),
            manifest.config_hash,
            manifest.seed,
        )?;
        if corpus.trajectories.len() != manifest.counts.trajectories {
            return Err(CorpusError::Inconsistent(format!(
                "manifest records {} trajectories but extraction under min_nodes={} yields {}",
                manifest.counts.trajectories,
                params.min_nodes,
                corpus.trajectories.len()
            )));
        }
        Ok(corpus)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    tree_id: u64,
    node_id: u64,
    parent_id: Option<u64>,
    action_index: Option<usize>,
    turn: u32,
    terminal: bool,
    terminal_reward: Option<f64>,
    visits: [u64; NUM_STRATEGIES],
    values: [f64; NUM_STRATEGIES],
    scores: Option<TurnScores>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    config_hash: String,
    seed: u64,
    counts: Counts,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Counts {
    trees: usize,
    nodes: usize,
    trajectories: usize,
}

/// Canonical placeholder history for a node reached via `path` actions.
fn placeholder_history(path: &[usize]) -> Vec<(Role, String)> {
    let mut utterances = vec![(Role::Seeker, "seeker[]".to_string())];
    for depth in 1..=path.len() {
        let key = path[..depth]
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(".");
        utterances.push((Role::Supporter, format!("supporter[{key}]")));
        utterances.push((Role::Seeker, format!("seeker[{key}]")));
    }
    utterances
}

fn rebuild_tree(
    tree_id: TreeId,
    records: Vec<NodeRecord>,
    depth_limit: u32,
) -> Result<TrajectoryTree, CorpusError> {
    let mut nodes = BTreeMap::new();
    let mut edges = BTreeMap::new();
    let mut parents: BTreeMap<u64, (Option<u64>, Option<usize>)> = BTreeMap::new();
    for rec in &records {
        parents.insert(rec.node_id, (rec.parent_id, rec.action_index));
    }
    let action_path = |mut id: u64| -> Result<Vec<usize>, CorpusError> {
        let mut path = Vec::new();
        loop {
            match parents.get(&id) {
                Some((Some(parent), Some(action))) => {
                    path.push(*action);
                    id = *parent;
                }
                Some((None, None)) => break,
                _ => {
                    return Err(CorpusError::Inconsistent(format!(
                        "node n{id} has a parent without an action (or vice versa)"
                    )))
                }
            }
        }
        path.reverse();
        Ok(path)
    };

    for rec in records {
        let id = NodeId(rec.node_id);
        let action = match rec.action_index {
            Some(i) => Some(Strategy::from_index(i).ok_or_else(|| {
                CorpusError::Inconsistent(format!("bad action index {i} at node n{}", rec.node_id))
            })?),
            None => None,
        };
        if let (Some(parent), Some(a)) = (rec.parent_id, action) {
            edges.insert((NodeId(parent), a), id);
        }
        let path = action_path(rec.node_id)?;
        nodes.insert(
            id,
            TreeNode {
                state: crate::model::DialogueState {
                    node_id: id,
                    parent_id: rec.parent_id.map(NodeId),
                    turn: rec.turn,
                    action_from_parent: action,
                    utterances: placeholder_history(&path),
                    terminal: rec.terminal,
                    terminal_reward: rec.terminal_reward,
                    scores: rec.scores,
                },
                stats: NodeStats {
                    visits: rec.visits,
                    values: rec.values,
                },
            },
        );
    }
    Ok(TrajectoryTree::from_parts(tree_id, depth_limit, nodes, edges)?)
}
