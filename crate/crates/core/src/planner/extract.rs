use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::build::OpCounters;
use super::tree::{NodeId, Tree};
use crate::commgraph::CommGraph;
use crate::error::{Error, Result};
use crate::models::RobotPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Distributed,
    Central,
}

/// One robot's share of a team plan. All vectors indexed by time step have `F + 1`
/// entries except `controls`, which has `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotPath {
    pub robot: usize,
    pub nodes: Vec<NodeId>,
    pub poses: Vec<RobotPose>,
    /// Primitive index per step; `None` where the path holds its last node.
    pub controls: Vec<Option<usize>>,
    /// Per-step, per-target covariance determinants.
    pub dets: Vec<Vec<f64>>,
    pub cost: f64,
}

/// Tree node needed to recompute the beliefs along a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub pose: RobotPose,
    pub s_set: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub planner: PlannerKind,
    pub horizon: u32,
    /// Robot owning the selected goal node, one per communication component.
    pub initiators: Vec<usize>,
    pub total_cost: f64,
    pub robots: Vec<RobotPath>,
    pub counters: OpCounters,
    pub candidates: u64,
    pub skipped_candidates: u64,
    /// Per robot, every node the plan's beliefs depend on, by ascending id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<Vec<ProvenanceNode>>,
}

/// Node chain robot `from` imposes on its neighbor in slot `slot`: the neighbor
/// references stored along `path[1..]`.
fn imposed_chain(tree: &Tree, path: &[NodeId], slot: usize, steps: usize) -> Result<Vec<NodeId>> {
    (1..=steps)
        .map(|t| {
            let node = tree.get(path[t])?;
            if node.s_set.is_empty() {
                Ok(0)
            } else {
                node.s_set.get(slot).copied().ok_or_else(|| {
                    Error::InternalConsistency(format!("node {} lacks neighbor slot {slot}", node.id))
                })
            }
        })
        .collect()
}

/// Per-robot node paths of length `depth(goal) + 1` for the component of `initiator`,
/// built by walking the communication graph outward from the initiator. Robots outside
/// the component get `None`.
pub fn resolve_team_path(
    initiator: usize,
    goal: NodeId,
    trees: &[Tree],
    graph: &CommGraph,
) -> Result<Vec<Option<Vec<NodeId>>>> {
    let n = trees.len();
    let t_k = trees[initiator].get(goal)?.depth as usize;
    let mut paths: Vec<Option<Vec<NodeId>>> = vec![None; n];
    paths[initiator] = Some(trees[initiator].path_to(goal));

    let mut layer = vec![usize::MAX; n];
    layer[initiator] = 0;
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([initiator]);
    while let Some(r) = queue.pop_front() {
        order.push(r);
        for &j in graph.neighbors(r)? {
            if layer[j] == usize::MAX {
                layer[j] = layer[r] + 1;
                queue.push_back(j);
            }
        }
    }

    for &j in order.iter().skip(1) {
        let mut chain: Option<Vec<NodeId>> = None;
        for &i in graph.neighbors(j)? {
            if layer[i] >= layer[j] {
                continue;
            }
            let path_i = paths[i].as_ref().expect("earlier layers are resolved first");
            let slot = graph.neighbors(i)?.binary_search(&j).expect("graph is symmetric");
            let imposed = imposed_chain(&trees[i], path_i, slot, t_k)?;
            match &chain {
                Some(c) if *c != imposed => {
                    return Err(Error::UnresolvableCandidate(format!(
                        "robots disagree on the path of robot {j}"
                    )))
                }
                _ => chain = Some(imposed),
            }
        }
        let mut path = chain.expect("every later robot has an earlier neighbor");
        match path.last() {
            None => path.push(trees[j].root().id),
            Some(&last) => path.push(trees[j].min_cost_child(last).unwrap_or(last)),
        }
        paths[j] = Some(path);
    }
    Ok(paths)
}

fn path_cost(tree: &Tree, path: &[NodeId]) -> f64 {
    path.iter().map(|&id| tree.node(id).belief.full_det()).sum()
}

struct Candidate {
    cost: f64,
    initiator: usize,
    paths: Vec<Option<Vec<NodeId>>>,
}

/// Minimum-cost team plan over every goal node of every robot, or `None` when some
/// communication component has no goal node.
pub fn extract_team_plan(trees: &[Tree], graph: &CommGraph, counters: OpCounters) -> Result<Option<PlanResult>> {
    let n = trees.len();
    let mut evaluated = 0u64;
    let mut skipped = 0u64;
    let mut chosen: Vec<Candidate> = Vec::new();
    for component in graph.components() {
        let mut best: Option<Candidate> = None;
        for &r in &component {
            for &g in trees[r].goal_set() {
                // the initiator's own cost bounds the team cost from below
                if best.as_ref().is_some_and(|b| trees[r].node(g).cost >= b.cost) {
                    continue;
                }
                evaluated += 1;
                let paths = match resolve_team_path(r, g, trees, graph) {
                    Ok(p) => p,
                    Err(Error::UnresolvableCandidate(_)) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let cost: f64 = component
                    .iter()
                    .map(|&j| path_cost(&trees[j], paths[j].as_ref().unwrap()))
                    .sum();
                if best.as_ref().is_none_or(|b| cost < b.cost) {
                    best = Some(Candidate {
                        cost,
                        initiator: r,
                        paths,
                    });
                }
            }
        }
        match best {
            Some(b) => chosen.push(b),
            None => return Ok(None),
        }
    }

    let mut paths: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for c in &chosen {
        for (j, p) in c.paths.iter().enumerate() {
            if let Some(p) = p {
                paths[j] = p.clone();
            }
        }
    }
    let horizon = paths.iter().map(|p| p.len() - 1).max().unwrap_or(0);
    for p in &mut paths {
        let last = *p.last().unwrap();
        p.resize(horizon + 1, last);
    }

    let robots: Vec<RobotPath> = paths
        .iter()
        .enumerate()
        .map(|(j, p)| robot_path(&trees[j], j, p))
        .collect();
    let total_cost = robots.iter().map(|r| r.cost).sum();
    let provenance = provenance(trees, graph, &paths)?;
    Ok(Some(PlanResult {
        planner: PlannerKind::Distributed,
        horizon: horizon as u32,
        initiators: chosen.iter().map(|c| c.initiator).collect(),
        total_cost,
        robots,
        counters,
        candidates: evaluated,
        skipped_candidates: skipped,
        provenance,
    }))
}

fn robot_path(tree: &Tree, robot: usize, path: &[NodeId]) -> RobotPath {
    let nodes: Vec<_> = path.iter().map(|&id| tree.node(id)).collect();
    let controls = nodes
        .windows(2)
        .map(|w| if w[0].id == w[1].id { None } else { w[1].control })
        .collect();
    RobotPath {
        robot,
        nodes: path.to_vec(),
        poses: nodes.iter().map(|n| n.pose).collect(),
        controls,
        dets: nodes
            .iter()
            .map(|n| (0..n.belief.len()).map(|l| n.belief.block_det(l)).collect())
            .collect(),
        cost: path_cost(tree, path),
    }
}

/// Closure of the path nodes under parent and neighbor references.
fn provenance(trees: &[Tree], graph: &CommGraph, paths: &[Vec<NodeId>]) -> Result<Vec<Vec<ProvenanceNode>>> {
    let mut seen: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); trees.len()];
    let mut stack: Vec<(usize, NodeId)> = paths
        .iter()
        .enumerate()
        .flat_map(|(r, p)| p.iter().map(move |&id| (r, id)))
        .collect();
    while let Some((r, id)) = stack.pop() {
        if !seen[r].insert(id) {
            continue;
        }
        let node = trees[r].get(id)?;
        if let Some(p) = node.parent {
            stack.push((r, p));
        }
        for (&j, &s) in graph.neighbors(r)?.iter().zip(&node.s_set) {
            stack.push((j, s));
        }
    }
    Ok(seen
        .iter()
        .enumerate()
        .map(|(r, ids)| {
            ids.iter()
                .map(|&id| {
                    let n = trees[r].node(id);
                    ProvenanceNode {
                        id,
                        parent: n.parent,
                        pose: n.pose,
                        s_set: n.s_set.clone(),
                    }
                })
                .collect()
        })
        .collect())
}
