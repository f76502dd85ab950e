//! Distributed tree planner: every robot grows a tree over (pose, belief) states,
//! fusing the beliefs of sampled nodes from its neighbors' trees, and a team plan is
//! assembled from the neighbor references once some robot reaches the goal set.

mod build;
mod extract;
mod replay;
mod tree;

#[cfg(test)]
mod tests;

pub use build::{
    admissible_neighbor_nodes, build_trees, candidate_distribution, control_distribution, extend,
    group_distribution, init_tree, iterate_robot, robot_seeds, sample_control, sample_group, BuildOutput,
    Expansion, FieldCache, IterationStats, OpCounters, RobotState,
};
pub use extract::{extract_team_plan, resolve_team_path, PlanResult, PlannerKind, ProvenanceNode, RobotPath};
pub use replay::{replay_cost_oracle, simulate_central_kf, simulate_team_dkf, Replay};
pub use tree::{Group, NodeId, Tree, TreeNode};

pub(crate) use build::{expansion_subset, is_goal, mean_position};
pub(crate) use tree::log_add_exp;

use crate::commgraph::CommGraph;
use crate::error::Result;
use crate::scenario::Scenario;

/// A scenario with its communication graph materialized.
#[derive(Debug)]
pub struct Problem<'a> {
    pub scenario: &'a Scenario,
    pub graph: CommGraph,
    pub neighbors: Vec<Vec<usize>>,
    pub log_deltas: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        let graph = scenario.graph.build(scenario.n_robots())?;
        let neighbors = (0..scenario.n_robots())
            .map(|i| graph.neighbors(i).map(<[usize]>::to_vec))
            .collect::<Result<_>>()?;
        Ok(Self {
            scenario,
            graph,
            neighbors,
            log_deltas: scenario.log_deltas(),
        })
    }
}

/// Everything a planning run produces.
#[derive(Debug)]
pub struct RunOutput {
    pub plan: Option<PlanResult>,
    pub counters: OpCounters,
    pub per_robot: Vec<OpCounters>,
    pub iterations: Vec<IterationStats>,
    pub tree_sizes: Vec<usize>,
}

/// Build the trees for `n_max` iterations and extract the cheapest team plan.
pub fn run_distributed(scenario: &Scenario, seed: u64, n_max: u32) -> Result<RunOutput> {
    let problem = Problem::new(scenario)?;
    let seeds = robot_seeds(seed, scenario.n_robots());
    let out = build_trees(&problem, &seeds, n_max)?;
    let plan = extract_team_plan(&out.trees, &problem.graph, out.counters)?;
    Ok(RunOutput {
        plan,
        counters: out.counters,
        per_robot: out.per_robot,
        iterations: out.iterations,
        tree_sizes: out.trees.iter().map(Tree::len).collect(),
    })
}
