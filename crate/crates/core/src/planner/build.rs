use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{log_add_exp, NodeId, Tree, TreeNode};
use super::Problem;
use crate::belief::{dkf_predict, dkf_update, InfoBelief};
use crate::bias::{self, BiasParams};
use crate::env::{DistanceField, Position, Workspace};
use crate::error::{Error, Result};
use crate::models::{observe, step_pose, RobotPose};

/// Work counters. `belief_ops` counts information terms folded into a fused belief:
/// every own or neighbor information matrix and every measurement model is one term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub iterations: u64,
    /// Nodes whose belief was computed.
    pub expansions: u64,
    pub nodes_added: u64,
    pub rejected_samples: u64,
    pub duplicate_children: u64,
    pub capped_nodes: u64,
    pub belief_ops: u64,
    pub pose_ops: u64,
    pub neighbor_fetches: u64,
}

impl OpCounters {
    pub fn add(&mut self, other: &OpCounters) {
        self.iterations += other.iterations;
        self.expansions += other.expansions;
        self.nodes_added += other.nodes_added;
        self.rejected_samples += other.rejected_samples;
        self.duplicate_children += other.duplicate_children;
        self.capped_nodes += other.capped_nodes;
        self.belief_ops += other.belief_ops;
        self.pose_ops += other.pose_ops;
        self.neighbor_fetches += other.neighbor_fetches;
    }

    /// Belief operations per computed node.
    pub fn ops_per_expansion(&self) -> f64 {
        if self.expansions == 0 {
            0.0
        } else {
            self.belief_ops as f64 / self.expansions as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub nodes_added: u64,
    pub belief_ops: u64,
    pub seconds: f64,
}

/// Geodesic fields keyed by the grid cell of their source.
#[derive(Debug, Default)]
pub struct FieldCache {
    fields: HashMap<(usize, usize), DistanceField>,
}

const FIELD_CACHE_LIMIT: usize = 256;

impl FieldCache {
    /// Field sourced at `target`, clamped into the workspace.
    pub fn field(&mut self, ws: &Workspace, target: &Position) -> &DistanceField {
        let (nx, ny) = ws.grid_shape();
        let res = ws.resolution();
        let clamp = |v: f64, n: usize| ((v / res).floor().max(0.0) as usize).min(n - 1);
        let cell = (clamp(target.x, nx), clamp(target.y, ny));
        if !self.fields.contains_key(&cell) && self.fields.len() >= FIELD_CACHE_LIMIT {
            self.fields.clear();
        }
        self.fields
            .entry(cell)
            .or_insert_with(|| ws.field_from_cell(cell.0, cell.1, *target))
    }
}

/// Per-robot mutable state for tree growth.
#[derive(Debug)]
pub struct RobotState {
    pub rng: ChaCha8Rng,
    pub fields: FieldCache,
}

impl RobotState {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            fields: FieldCache::default(),
        }
    }
}

/// Independent per-robot seeds derived from one run seed.
pub fn robot_seeds(seed: u64, n: usize) -> Vec<u64> {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

pub(crate) fn mean_position(b: &InfoBelief, target: usize) -> Position {
    let m = b.block(target).mean();
    Position::new(m[0], m[1])
}

/// Greedy target choice for a node at `pos`.
pub(crate) fn assignment(
    problem: &Problem,
    fields: &mut FieldCache,
    pos: &Position,
    belief: &InfoBelief,
    predicted: &InfoBelief,
    occupied: &[usize],
    parent: Option<usize>,
) -> Option<usize> {
    let ws = &problem.scenario.workspace;
    let distances: Vec<f64> = (0..belief.len())
        .map(|l| fields.field(ws, &mean_position(predicted, l)).distance_or_inf(pos))
        .collect();
    let sorted = bias::sort_targets(&distances);
    let satisfied: Vec<bool> = (0..belief.len())
        .map(|l| belief.block_log_det(l) <= problem.log_deltas[l])
        .collect();
    match parent {
        Some(p) => Some(bias::assign_target(&sorted, &satisfied, occupied, p)),
        None => sorted
            .iter()
            .copied()
            .filter(|&l| !satisfied[l])
            .find(|l| !occupied.contains(l))
            .or_else(|| sorted.iter().copied().find(|&l| !satisfied[l])),
    }
}

pub(crate) fn is_goal(problem: &Problem, b: &InfoBelief) -> bool {
    (0..b.len()).all(|l| b.block_log_det(l) <= problem.log_deltas[l])
}

/// Root tree for `robot` at its initial pose with the prior belief.
pub fn init_tree(problem: &Problem, robot: usize, fields: &mut FieldCache) -> Result<Tree> {
    let s = problem.scenario;
    let pose = s.robots[robot];
    if !s.workspace.is_free(&pose.position()) {
        return Err(Error::InvalidArgument(format!(
            "robot {robot} starts in collision at ({}, {})",
            pose.x, pose.y
        )));
    }
    let belief = InfoBelief::from_priors(&s.targets)?;
    let predicted = dkf_predict(&belief, &s.targets)?;
    let assigned = match s.bias {
        Some(_) => assignment(problem, fields, &pose.position(), &belief, &predicted, &[], None),
        None => None,
    };
    let root = TreeNode {
        id: 0,
        robot,
        pose,
        goal: is_goal(problem, &belief),
        cost: belief.full_det(),
        log_cost: belief.full_log_det(),
        belief,
        predicted,
        s_set: Vec::new(),
        parent: None,
        control: None,
        depth: 0,
        assigned,
        children: Vec::new(),
    };
    Ok(Tree::new(s.quantization, root))
}

pub fn sample_group(tree: &Tree, bias: Option<&BiasParams>, rng: &mut ChaCha8Rng) -> usize {
    let masses = group_distribution(tree, bias);
    bias::sample_index(&masses, rng)
}

pub fn group_distribution(tree: &Tree, bias: Option<&BiasParams>) -> Vec<f64> {
    match bias {
        Some(p) => {
            let depths: Vec<u32> = tree.groups().iter().map(|g| g.max_depth).collect();
            bias::group_masses(&depths, tree.max_depth(), p.p_v)
        }
        None => bias::uniform(tree.group_count()),
    }
}

/// Control distribution for expanding group `k`, steering toward the target assigned
/// to the group's deepest node when biased.
pub fn control_distribution(problem: &Problem, tree: &Tree, k: usize, fields: &mut FieldCache) -> Vec<f64> {
    let s = problem.scenario;
    let n = s.primitives.len();
    let Some(params) = s.bias else {
        return bias::uniform(n);
    };
    let group = &tree.groups()[k];
    let rep = tree.node(group.deepest);
    let Some(target) = rep.assigned else {
        return bias::uniform(n);
    };
    let field = fields.field(&s.workspace, &mean_position(&rep.predicted, target));
    bias::control_masses(&group.pose, &s.primitives, field, s.sensor.range, params.p_u, s.dt)
}

pub fn sample_control(problem: &Problem, tree: &Tree, k: usize, state: &mut RobotState) -> usize {
    let masses = control_distribution(problem, tree, k, &mut state.fields);
    bias::sample_index(&masses, &mut state.rng)
}

/// Candidate nodes of `neighbor_tree` for the neighbor in position `slot` of the
/// expanding node's neighbor list.
pub fn admissible_neighbor_nodes(own: &TreeNode, neighbor_tree: &Tree, slot: usize) -> Result<Vec<NodeId>> {
    if own.s_set.is_empty() {
        return Ok(vec![neighbor_tree.root().id]);
    }
    let reference = *own.s_set.get(slot).ok_or_else(|| {
        Error::InternalConsistency(format!("node {} has no reference in slot {slot}", own.id))
    })?;
    let node = neighbor_tree.get(reference)?;
    if node.children.is_empty() {
        Ok(vec![reference])
    } else {
        Ok(node.children.clone())
    }
}

pub fn candidate_distribution(neighbor_tree: &Tree, candidates: &[NodeId], bias: Option<&BiasParams>) -> Vec<f64> {
    match bias {
        Some(p) => {
            let log_dets: Vec<f64> = candidates
                .iter()
                .map(|&c| neighbor_tree.node(c).belief.full_log_det())
                .collect();
            bias::candidate_masses(&log_dets, p.p_s)
        }
        None => bias::uniform(candidates.len()),
    }
}

/// New nodes produced by one expansion, not yet inserted.
#[derive(Debug, Default)]
pub struct Expansion {
    pub nodes: Vec<TreeNode>,
    pub counters: OpCounters,
}

/// Expand every node of group `k` of `trees[robot]` with primitive `u`, reading the
/// neighbor trees in `trees` as frozen snapshots.
pub fn extend(
    problem: &Problem,
    trees: &[Tree],
    robot: usize,
    k: usize,
    u: usize,
    state: &mut RobotState,
) -> Result<Expansion> {
    let s = problem.scenario;
    let tree = &trees[robot];
    let group = &tree.groups()[k];
    let mut out = Expansion::default();
    let p_new = step_pose(&group.pose, &s.primitives[u], s.dt);
    out.counters.pose_ops += 1;
    if !s.workspace.is_free(&p_new.position()) {
        out.counters.rejected_samples += 1;
        return Ok(out);
    }
    let neighbors = &problem.neighbors[robot];
    let eligible: Vec<NodeId> = group
        .members
        .iter()
        .copied()
        .filter(|&m| s.max_depth.is_none_or(|cap| tree.node(m).depth < cap))
        .collect();
    out.counters.capped_nodes += (group.members.len() - eligible.len()) as u64;
    for m in expansion_subset(eligible, s.group_cap, &mut state.rng) {
        let q = tree.node(m);
        let mut s_new = Vec::with_capacity(neighbors.len());
        for (slot, &j) in neighbors.iter().enumerate() {
            let candidates = admissible_neighbor_nodes(q, &trees[j], slot)?;
            let masses = candidate_distribution(&trees[j], &candidates, s.bias.as_ref());
            s_new.push(candidates[bias::sample_index(&masses, &mut state.rng)]);
        }
        if q
            .children
            .iter()
            .any(|&c| tree.node(c).control == Some(u) && tree.node(c).s_set == s_new)
        {
            out.counters.duplicate_children += 1;
            continue;
        }
        out.nodes.push(fuse_child(problem, trees, robot, q, &p_new, u, s_new, state)?);
        out.counters.expansions += 1;
        out.counters.belief_ops += neighbors.len() as u64 + 2;
        out.counters.neighbor_fetches += neighbors.len() as u64;
    }
    Ok(out)
}

/// `members` itself, or a uniform subset of `cap` of them in ascending order.
pub(crate) fn expansion_subset<R: rand::Rng + ?Sized>(members: Vec<usize>, cap: Option<usize>, rng: &mut R) -> Vec<usize> {
    match cap {
        Some(c) if members.len() > c => {
            let mut picked = rand::seq::index::sample(rng, members.len(), c).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| members[i]).collect()
        }
        _ => members,
    }
}

#[allow(clippy::too_many_arguments)]
fn fuse_child(
    problem: &Problem,
    trees: &[Tree],
    robot: usize,
    q: &TreeNode,
    p_new: &RobotPose,
    u: usize,
    s_new: Vec<NodeId>,
    state: &mut RobotState,
) -> Result<TreeNode> {
    let s = problem.scenario;
    let neighbors = &problem.neighbors[robot];
    let inputs: Vec<&TreeNode> = s_new
        .iter()
        .zip(neighbors)
        .map(|(&id, &j)| trees[j].node(id))
        .collect();
    let inputs_pred: Vec<&InfoBelief> = inputs.iter().map(|n| &n.predicted).collect();
    let weights = s.weights.weights(&q.predicted, &inputs_pred)?;
    let measurements: Vec<_> = (0..s.targets.len())
        .map(|l| {
            observe(
                &s.sensor,
                &s.workspace,
                p_new,
                &mean_position(&q.predicted, l),
                s.targets[l].dim(),
            )
        })
        .collect();
    let belief = dkf_update(&q.predicted, &inputs_pred, &weights, &measurements)?;
    let predicted = dkf_predict(&belief, &s.targets)?;
    let assigned = match s.bias {
        Some(_) => {
            let occupied: Vec<usize> = inputs.iter().filter_map(|n| n.assigned).collect();
            assignment(
                problem,
                &mut state.fields,
                &p_new.position(),
                &belief,
                &predicted,
                &occupied,
                q.assigned,
            )
        }
        None => None,
    };
    let log_det = belief.full_log_det();
    Ok(TreeNode {
        id: 0,
        robot,
        pose: *p_new,
        goal: is_goal(problem, &belief),
        cost: q.cost + belief.full_det(),
        log_cost: log_add_exp(q.log_cost, log_det),
        belief,
        predicted,
        s_set: s_new,
        parent: Some(q.id),
        control: Some(u),
        depth: q.depth + 1,
        assigned,
        children: Vec::new(),
    })
}

/// One robot's share of an iteration: sample a group and a control, then extend.
pub fn iterate_robot(problem: &Problem, trees: &[Tree], robot: usize, state: &mut RobotState) -> Result<Expansion> {
    let tree = &trees[robot];
    let k = sample_group(tree, problem.scenario.bias.as_ref(), &mut state.rng);
    let u = sample_control(problem, tree, k, state);
    extend(problem, trees, robot, k, u, state)
}

#[derive(Debug)]
pub struct BuildOutput {
    pub trees: Vec<Tree>,
    pub counters: OpCounters,
    pub per_robot: Vec<OpCounters>,
    pub iterations: Vec<IterationStats>,
}

/// Grow all trees for `n_max` lockstep iterations. Within an iteration every robot
/// reads the trees as they stood at the end of the previous one, so the result does
/// not depend on how the robots are scheduled across threads.
pub fn build_trees(problem: &Problem, seeds: &[u64], n_max: u32) -> Result<BuildOutput> {
    let n = problem.scenario.n_robots();
    if seeds.len() != n {
        return Err(Error::InvalidArgument(format!("{} seeds for {n} robots", seeds.len())));
    }
    let mut states: Vec<RobotState> = seeds.iter().map(|&s| RobotState::new(s)).collect();
    let mut trees = states
        .iter_mut()
        .enumerate()
        .map(|(i, st)| init_tree(problem, i, &mut st.fields))
        .collect::<Result<Vec<_>>>()?;
    let mut per_robot = vec![OpCounters::default(); n];
    let mut iterations = Vec::with_capacity(n_max as usize);
    for _ in 0..n_max {
        let start = Instant::now();
        let snapshot = &trees;
        let expansions = states
            .par_iter_mut()
            .enumerate()
            .map(|(i, st)| iterate_robot(problem, snapshot, i, st))
            .collect::<Result<Vec<_>>>()?;
        let mut stats = IterationStats {
            nodes_added: 0,
            belief_ops: 0,
            seconds: 0.0,
        };
        for (i, mut e) in expansions.into_iter().enumerate() {
            e.counters.iterations = 1;
            e.counters.nodes_added = e.nodes.len() as u64;
            stats.nodes_added += e.counters.nodes_added;
            stats.belief_ops += e.counters.belief_ops;
            per_robot[i].add(&e.counters);
            for node in e.nodes {
                trees[i].insert(node);
            }
        }
        stats.seconds = start.elapsed().as_secs_f64();
        iterations.push(stats);
    }
    let mut counters = OpCounters::default();
    for c in &per_robot {
        counters.add(c);
    }
    counters.iterations = n_max as u64;
    Ok(BuildOutput {
        trees,
        counters,
        per_robot,
        iterations,
    })
}
