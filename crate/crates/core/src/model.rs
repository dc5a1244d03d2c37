//! Shared domain types: strategies, turn scores, dialogue states, search
//! statistics, trajectory trees and extracted trajectories.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Number of supporter strategies in the action set.
pub const NUM_STRATEGIES: usize = 8;

/// The eight supporter strategy categories. Each has a stable integer
/// index 0..7 used everywhere in serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    ReflectiveStatements,
    Clarification,
    EmotionalValidation,
    EmpatheticStatements,
    Affirmation,
    CollaborativePlanning,
    SuggestOptions,
    ShareInformation,
}

impl Strategy {
    pub const ALL: [Strategy; NUM_STRATEGIES] = [
        Strategy::ReflectiveStatements,
        Strategy::Clarification,
        Strategy::EmotionalValidation,
        Strategy::EmpatheticStatements,
        Strategy::Affirmation,
        Strategy::CollaborativePlanning,
        Strategy::SuggestOptions,
        Strategy::ShareInformation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Strategy> {
        Strategy::ALL.get(idx).copied()
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            Strategy::ReflectiveStatements => "RS",
            Strategy::Clarification => "Cla",
            Strategy::EmotionalValidation => "EV",
            Strategy::EmpatheticStatements => "ES",
            Strategy::Affirmation => "Aff",
            Strategy::CollaborativePlanning => "CP",
            Strategy::SuggestOptions => "SO",
            Strategy::ShareInformation => "SI",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ReflectiveStatements => "ReflectiveStatements",
            Strategy::Clarification => "Clarification",
            Strategy::EmotionalValidation => "EmotionalValidation",
            Strategy::EmpatheticStatements => "EmpatheticStatements",
            Strategy::Affirmation => "Affirmation",
            Strategy::CollaborativePlanning => "CollaborativePlanning",
            Strategy::SuggestOptions => "SuggestOptions",
            Strategy::ShareInformation => "ShareInformation",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-turn rater scores, each in [0, 5].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnScores {
    #[serde(rename = "E")]
    pub empathy: f64,
    #[serde(rename = "I")]
    pub info_quality: f64,
    #[serde(rename = "H")]
    pub naturalness: f64,
    #[serde(rename = "S")]
    pub strategic_efficacy: f64,
}

impl TurnScores {
    pub fn new(empathy: f64, info_quality: f64, naturalness: f64, strategic_efficacy: f64) -> Self {
        TurnScores {
            empathy,
            info_quality,
            naturalness,
            strategic_efficacy,
        }
    }

    /// All four components finite and within [0, 5].
    pub fn in_range(&self) -> bool {
        [
            self.empathy,
            self.info_quality,
            self.naturalness,
            self.strategic_efficacy,
        ]
        .iter()
        .all(|v| v.is_finite() && (0.0..=5.0).contains(v))
    }
}

/// Identifier of a node within one tree. The root is always node 0.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Identifier of a tree within a corpus.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct TreeId(pub u64);

impl fmt::Display for TreeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Corpus-wide state identity: a node within a specific tree. Two nodes with
/// identical dialogue histories in different trees are distinct states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateKey {
    pub tree: TreeId,
    pub node: NodeId,
}

impl StateKey {
    pub fn new(tree: TreeId, node: NodeId) -> Self {
        StateKey { tree, node }
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.tree, self.node)
    }
}

impl std::str::FromStr for StateKey {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = || -> Option<StateKey> {
            let (t, n) = s.split_once(':')?;
            let tree = t.strip_prefix('t')?.parse().ok()?;
            let node = n.strip_prefix('n')?.parse().ok()?;
            Some(StateKey::new(TreeId(tree), NodeId(node)))
        };
        parse().ok_or_else(|| ModelError::BadStateKey(s.to_string()))
    }
}

/// Speaker role for one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Seeker,
    Supporter,
}

/// A node in a trajectory tree: a dialogue prefix plus terminal bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueState {
    pub node_id: NodeId,
    pub parent_id: Option<NodeId>,
    /// Turn index t; root has turn 0, children have parent turn + 1.
    pub turn: u32,
    pub action_from_parent: Option<Strategy>,
    /// Full dialogue history up to this node. Opaque placeholder text.
    pub utterances: Vec<(Role, String)>,
    pub terminal: bool,
    /// Present iff `terminal`; always >= 0.
    pub terminal_reward: Option<f64>,
    /// Rater scores for the step that created this node (None at the root).
    pub scores: Option<TurnScores>,
}

/// Per-state search statistics: visit counts N(s,a) and running means Q(s,a)
/// indexed by strategy. Q is 0 wherever N is 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeStats {
    pub visits: [u64; NUM_STRATEGIES],
    pub values: [f64; NUM_STRATEGIES],
}

impl NodeStats {
    pub fn zeroed() -> Self {
        NodeStats::default()
    }

    /// State visit count N(s) = sum over actions of N(s,a).
    pub fn total_visits(&self) -> u64 {
        self.visits.iter().sum()
    }

    pub fn visited_actions(&self) -> impl Iterator<Item = Strategy> + '_ {
        Strategy::ALL
            .iter()
            .copied()
            .filter(|a| self.visits[a.index()] > 0)
    }
}

/// One tree node: dialogue state plus its search statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub state: DialogueState,
    pub stats: NodeStats,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown node {0} in tree")]
    UnknownNode(NodeId),
    #[error("state {0} is non-terminal and unvisited; no value estimate")]
    UnvisitedState(NodeId),
    #[error("malformed state key `{0}` (expected t<k>:n<k>)")]
    BadStateKey(String),
    #[error("tree invariant violated: {0}")]
    InvalidTree(String),
}

/// A search tree of dialogue prefixes rooted at node 0.
#[derive(Debug, Clone)]
pub struct TrajectoryTree {
    pub tree_id: TreeId,
    pub root_id: NodeId,
    pub nodes: BTreeMap<NodeId, TreeNode>,
    /// Materialized edges (parent, action) -> child.
    pub edges: BTreeMap<(NodeId, Strategy), NodeId>,
    /// Maximum permitted node depth D.
    pub depth_limit: u32,
    next_id: u64,
}

impl TrajectoryTree {
    /// Create a tree containing only a root at turn 0.
    pub fn new(tree_id: TreeId, depth_limit: u32, root_utterances: Vec<(Role, String)>) -> Self {
        let root = TreeNode {
            state: DialogueState {
                node_id: NodeId(0),
                parent_id: None,
                turn: 0,
                action_from_parent: None,
                utterances: root_utterances,
                terminal: false,
                terminal_reward: None,
                scores: None,
            },
            stats: NodeStats::zeroed(),
        };
        let mut nodes = BTreeMap::new();
        nodes.insert(NodeId(0), root);
        TrajectoryTree {
            tree_id,
            root_id: NodeId(0),
            nodes,
            edges: BTreeMap::new(),
            depth_limit,
            next_id: 1,
        }
    }

    pub fn node(&self, id: NodeId) -> Result<&TreeNode, ModelError> {
        self.nodes.get(&id).ok_or(ModelError::UnknownNode(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut TreeNode, ModelError> {
        self.nodes.get_mut(&id).ok_or(ModelError::UnknownNode(id))
    }

    pub fn child(&self, parent: NodeId, action: Strategy) -> Option<NodeId> {
        self.edges.get(&(parent, action)).copied()
    }

    /// Append a child under `parent` via `action`, assigning the next node id.
    pub fn push_child(
        &mut self,
        parent: NodeId,
        action: Strategy,
        utterances: Vec<(Role, String)>,
        scores: TurnScores,
        terminal: bool,
        terminal_reward: Option<f64>,
    ) -> Result<NodeId, ModelError> {
        let parent_turn = self.node(parent)?.state.turn;
        if self.edges.contains_key(&(parent, action)) {
            return Err(ModelError::InvalidTree(format!(
                "edge ({parent}, {action}) already materialized"
            )));
        }
        let id = NodeId(self.next_id);
        self.next_id += 1;
        let node = TreeNode {
            state: DialogueState {
                node_id: id,
                parent_id: Some(parent),
                turn: parent_turn + 1,
                action_from_parent: Some(action),
                utterances,
                terminal,
                terminal_reward,
                scores: Some(scores),
            },
            stats: NodeStats::zeroed(),
        };
        self.nodes.insert(id, node);
        self.edges.insert((parent, action), id);
        Ok(id)
    }

    /// Reassemble a tree from persisted parts. The id counter resumes past
    /// the highest node id so later growth cannot collide.
    pub fn from_parts(
        tree_id: TreeId,
        depth_limit: u32,
        nodes: BTreeMap<NodeId, TreeNode>,
        edges: BTreeMap<(NodeId, Strategy), NodeId>,
    ) -> Result<Self, ModelError> {
        let next_id = nodes.keys().map(|id| id.0 + 1).max().unwrap_or(1);
        let tree = TrajectoryTree {
            tree_id,
            root_id: NodeId(0),
            nodes,
            edges,
            depth_limit,
            next_id,
        };
        tree.validate()?;
        Ok(tree)
    }

    /// Node ids with no materialized outgoing edge, ascending.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut has_child: BTreeMap<NodeId, bool> = BTreeMap::new();
        for (parent, _) in self.edges.keys() {
            has_child.insert(*parent, true);
        }
        self.nodes
            .keys()
            .copied()
            .filter(|id| !has_child.contains_key(id))
            .collect()
    }

    /// Root-to-node chain of node ids, root first.
    pub fn path_to(&self, id: NodeId) -> Result<Vec<NodeId>, ModelError> {
        let mut path = Vec::new();
        let mut cur = id;
        loop {
            let node = self.node(cur)?;
            path.push(cur);
            match node.state.parent_id {
                Some(p) => cur = p,
                None => break,
            }
        }
        path.reverse();
        Ok(path)
    }

    /// Immediate rewards along the root-to-node chain (the root has none).
    pub fn path_rewards(&self, id: NodeId) -> Result<Vec<f64>, ModelError> {
        let path = self.path_to(id)?;
        Ok(path
            .iter()
            .filter_map(|nid| self.nodes[nid].state.scores.as_ref())
            .map(crate::env::immediate_reward)
            .collect())
    }

    /// One-pass structural check: unique parents, consistent turn numbering,
    /// depth <= D, terminal_reward present iff terminal and >= 0, Q zero
    /// wherever N is zero.
    pub fn validate(&self) -> Result<(), ModelError> {
        let root = self.node(self.root_id)?;
        if root.state.parent_id.is_some() || root.state.turn != 0 {
            return Err(ModelError::InvalidTree(
                "root must have no parent and turn 0".into(),
            ));
        }
        for (id, node) in &self.nodes {
            let st = &node.state;
            if st.node_id != *id {
                return Err(ModelError::InvalidTree(format!("node id mismatch at {id}")));
            }
            if st.turn > self.depth_limit {
                return Err(ModelError::InvalidTree(format!(
                    "node {id} exceeds depth limit {}",
                    self.depth_limit
                )));
            }
            match (st.terminal, st.terminal_reward) {
                (true, Some(r)) if r >= 0.0 => {}
                (false, None) => {}
                (true, Some(_)) => {
                    return Err(ModelError::InvalidTree(format!(
                        "node {id} has negative terminal reward"
                    )))
                }
                (true, None) => {
                    return Err(ModelError::InvalidTree(format!(
                        "terminal node {id} lacks a reward"
                    )))
                }
                (false, Some(_)) => {
                    return Err(ModelError::InvalidTree(format!(
                        "non-terminal node {id} carries a terminal reward"
                    )))
                }
            }
            if *id != self.root_id {
                let parent = st
                    .parent_id
                    .ok_or_else(|| ModelError::InvalidTree(format!("node {id} has no parent")))?;
                let action = st.action_from_parent.ok_or_else(|| {
                    ModelError::InvalidTree(format!("node {id} has no incoming action"))
                })?;
                let pnode = self.node(parent)?;
                if pnode.state.turn + 1 != st.turn {
                    return Err(ModelError::InvalidTree(format!(
                        "node {id} turn is not parent turn + 1"
                    )));
                }
                if self.edges.get(&(parent, action)) != Some(id) {
                    return Err(ModelError::InvalidTree(format!(
                        "edge map does not record ({parent}, {action}) -> {id}"
                    )));
                }
            }
            for a in 0..NUM_STRATEGIES {
                if node.stats.visits[a] == 0 && node.stats.values[a] != 0.0 {
                    return Err(ModelError::InvalidTree(format!(
                        "node {id} has Q != 0 for unvisited action {a}"
                    )));
                }
            }
        }
        for ((parent, action), child) in &self.edges {
            let cnode = self.node(*child)?;
            if cnode.state.parent_id != Some(*parent)
                || cnode.state.action_from_parent != Some(*action)
            {
                return Err(ModelError::InvalidTree(format!(
                    "edge ({parent}, {action}) -> {child} inconsistent with child fields"
                )));
            }
        }
        Ok(())
    }
}

/// A root-to-leaf path through one tree: states interleaved with the
/// strategies taken between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tree_id: TreeId,
    /// Visited node ids, root first; one more entry than `actions`.
    pub states: Vec<NodeId>,
    pub actions: Vec<Strategy>,
}

impl Trajectory {
    /// Horizon T = number of actions taken.
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn node_count(&self) -> usize {
        self.states.len()
    }

    /// Dialogue turns (utterances) accumulated along the path: the root
    /// contributes its own history, every further node adds a supporter and
    /// a seeker turn.
    pub fn dialogue_turns(&self, tree: &TrajectoryTree) -> usize {
        let root_turns = tree
            .nodes
            .get(&self.states[0])
            .map(|n| n.state.utterances.len())
            .unwrap_or(0);
        root_turns + 2 * self.horizon()
    }
}

/// MCTS-derived state value estimate.
///
/// Non-terminal states use the visit-weighted mean of Q(s,a); terminal states
/// anchor to the recorded terminal reward. Both are floored at `eps_flow` so
/// downstream logarithms stay finite.
pub fn state_value_qhat(
    tree: &TrajectoryTree,
    state_id: NodeId,
    eps_flow: f64,
) -> Result<f64, ModelError> {
    let node = tree.node(state_id)?;
    if node.state.terminal {
        let r = node.state.terminal_reward.unwrap_or(0.0);
        return Ok(r.max(eps_flow));
    }
    let n_total = node.stats.total_visits();
    if n_total == 0 {
        return Err(ModelError::UnvisitedState(state_id));
    }
    let weighted: f64 = (0..NUM_STRATEGIES)
        .map(|a| node.stats.visits[a] as f64 * node.stats.values[a])
        .sum();
    Ok((weighted / n_total as f64).max(eps_flow))
}

/// Every root-to-leaf path with more than `min_nodes` nodes, ordered
/// lexicographically by node-id sequence.
pub fn extract_trajectories(tree: &TrajectoryTree, min_nodes: usize) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for leaf in tree.leaves() {
        let path = match tree.path_to(leaf) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if path.len() <= min_nodes {
            continue;
        }
        let actions = path[1..]
            .iter()
            .map(|id| {
                tree.nodes[id]
                    .state
                    .action_from_parent
                    .expect("non-root node has an incoming action")
            })
            .collect();
        out.push(Trajectory {
            tree_id: tree.tree_id,
            states: path,
            actions,
        });
    }
    out.sort_by(|a, b| a.states.cmp(&b.states));
    out
}
