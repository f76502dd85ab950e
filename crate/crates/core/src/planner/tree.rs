use std::collections::HashMap;

use crate::belief::InfoBelief;
use crate::error::{Error, Result};
use crate::models::RobotPose;
use crate::scenario::{PoseKey, Quantization};

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub id: NodeId,
    pub robot: usize,
    pub pose: RobotPose,
    pub belief: InfoBelief,
    /// `belief` pushed one step through the target models.
    pub predicted: InfoBelief,
    /// One node id per neighbor (in ascending neighbor order) that fed the fusion
    /// step. Empty at the root.
    pub s_set: Vec<NodeId>,
    pub parent: Option<NodeId>,
    /// Index into the scenario's primitive list.
    pub control: Option<usize>,
    pub depth: u32,
    pub cost: f64,
    /// ln(cost), accumulated with log-add-exp.
    pub log_cost: f64,
    pub assigned: Option<usize>,
    pub goal: bool,
    pub children: Vec<NodeId>,
}

/// Nodes sharing a quantized pose.
#[derive(Debug, Clone)]
pub struct Group {
    pub key: PoseKey,
    /// Pose of the first node that landed in the group; expansions step from here.
    pub pose: RobotPose,
    pub members: Vec<NodeId>,
    pub max_depth: u32,
    /// Deepest member, lowest id on ties.
    pub deepest: NodeId,
}

#[derive(Debug, Clone)]
pub struct Tree {
    robot: usize,
    quantization: Quantization,
    nodes: Vec<TreeNode>,
    groups: Vec<Group>,
    group_of: HashMap<PoseKey, usize>,
    goal_set: Vec<NodeId>,
    max_depth: u32,
}

impl Tree {
    /// Tree holding only `root`, whose id, parent and children are overwritten.
    pub fn new(quantization: Quantization, mut root: TreeNode) -> Self {
        root.id = 0;
        root.parent = None;
        root.children.clear();
        let mut tree = Self {
            robot: root.robot,
            quantization,
            nodes: Vec::new(),
            groups: Vec::new(),
            group_of: HashMap::new(),
            goal_set: Vec::new(),
            max_depth: 0,
        };
        tree.insert(root);
        tree
    }

    pub fn robot(&self) -> usize {
        self.robot
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn get(&self, id: NodeId) -> Result<&TreeNode> {
        self.nodes.get(id).ok_or_else(|| {
            Error::InternalConsistency(format!("robot {} has no node {id}", self.robot))
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn goal_set(&self) -> &[NodeId] {
        &self.goal_set
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn quantization(&self) -> &Quantization {
        &self.quantization
    }

    /// Append a node, assigning its id and linking it to its parent and group.
    pub fn insert(&mut self, mut node: TreeNode) -> NodeId {
        let id = self.nodes.len();
        node.id = id;
        node.children.clear();
        if let Some(p) = node.parent {
            self.nodes[p].children.push(id);
        }
        let key = self.quantization.key(&node.pose);
        match self.group_of.get(&key) {
            Some(&g) => {
                let group = &mut self.groups[g];
                group.members.push(id);
                if node.depth > group.max_depth {
                    group.max_depth = node.depth;
                    group.deepest = id;
                }
            }
            None => {
                self.group_of.insert(key, self.groups.len());
                self.groups.push(Group {
                    key,
                    pose: node.pose,
                    members: vec![id],
                    max_depth: node.depth,
                    deepest: id,
                });
            }
        }
        self.max_depth = self.max_depth.max(node.depth);
        if node.goal {
            self.goal_set.push(id);
        }
        self.nodes.push(node);
        id
    }

    /// Node ids from the root down to `id`.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Child of `id` with the smallest accumulated cost (lowest id on ties).
    pub fn min_cost_child(&self, id: NodeId) -> Option<NodeId> {
        let mut best: Option<NodeId> = None;
        for &c in &self.nodes[id].children {
            if best.is_none_or(|b| self.nodes[c].cost < self.nodes[b].cost) {
                best = Some(c);
            }
        }
        best
    }

    /// Structural checks: parent links, depths, group partition, goal membership and
    /// the cost recursion. `log_deltas` are the per-target thresholds in log space.
    pub fn check_invariants(&self, log_deltas: &[f64], n_neighbors: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InternalConsistency(format!("robot {}: {msg}", self.robot)));
        let mut grouped = vec![0u32; self.nodes.len()];
        for g in &self.groups {
            for &m in &g.members {
                grouped[m] += 1;
                if self.quantization.key(&self.nodes[m].pose) != g.key {
                    return bad(format!("node {m} sits in a group with a different pose"));
                }
            }
        }
        if grouped.iter().any(|&c| c != 1) {
            return bad("groups do not partition the nodes".into());
        }
        for n in &self.nodes {
            let satisfied = (0..n.belief.len()).all(|l| n.belief.block_log_det(l) <= log_deltas[l]);
            if satisfied != n.goal || n.goal != self.goal_set.contains(&n.id) {
                return bad(format!("goal flag of node {} disagrees with the thresholds", n.id));
            }
            match n.parent {
                None => {
                    if n.id != 0 || n.depth != 0 || !n.s_set.is_empty() {
                        return bad(format!("node {} is a malformed root", n.id));
                    }
                    if n.cost != n.belief.full_det() {
                        return bad("root cost differs from the prior determinant".into());
                    }
                }
                Some(p) => {
                    let parent = &self.nodes[p];
                    if n.depth != parent.depth + 1 || !parent.children.contains(&n.id) {
                        return bad(format!("node {} is not linked one level below {p}", n.id));
                    }
                    if n.s_set.len() != n_neighbors {
                        return bad(format!("node {} has {} neighbor references", n.id, n.s_set.len()));
                    }
                    let step = n.cost - parent.cost;
                    let want = n.belief.full_det();
                    if (step - want).abs() > 1e-12 * want.max(n.cost) {
                        return bad(format!("node {} breaks the cost recursion", n.id));
                    }
                }
            }
        }
        Ok(())
    }
}

/// ln(e^a + e^b) without overflow.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
