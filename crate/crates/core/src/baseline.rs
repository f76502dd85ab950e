//! Centralized counterpart: one tree over the joint team pose, with a single shared
//! belief updated by every robot's measurements.

use std::collections::HashMap;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::belief::{dkf_predict, information_update, InfoBelief};
use crate::bias;
use crate::error::Result;
use crate::models::{observe, step_pose, Measurement, RobotPose};
use crate::planner::{
    expansion_subset, is_goal, log_add_exp, mean_position, robot_seeds, FieldCache, IterationStats, OpCounters, PlanResult,
    PlannerKind, Problem, RobotPath, RunOutput,
};
use crate::scenario::{PoseKey, Scenario};
use crate::models::TargetModel;

/// Kalman step fusing the measurements of all robots: predict, then add every
/// measurement's information. `measurements[l]` lists the rows for target `l`.
pub fn centralized_kf_update(
    belief: &InfoBelief,
    targets: &[TargetModel],
    measurements: &[Vec<Measurement>],
) -> Result<InfoBelief> {
    information_update(&dkf_predict(belief, targets)?, measurements)
}

#[derive(Debug, Clone)]
pub struct JointNode {
    pub id: usize,
    pub poses: Vec<RobotPose>,
    pub belief: InfoBelief,
    pub predicted: InfoBelief,
    pub parent: Option<usize>,
    pub controls: Vec<usize>,
    pub depth: u32,
    pub cost: f64,
    pub log_cost: f64,
    pub goal: bool,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct JointGroup {
    pub poses: Vec<RobotPose>,
    pub members: Vec<usize>,
    pub max_depth: u32,
    pub deepest: usize,
}

#[derive(Debug, Clone, Default)]
pub struct CentralTree {
    nodes: Vec<JointNode>,
    groups: Vec<JointGroup>,
    group_of: HashMap<Vec<PoseKey>, usize>,
    goal_set: Vec<usize>,
    max_depth: u32,
}

impl CentralTree {
    pub fn nodes(&self) -> &[JointNode] {
        &self.nodes
    }

    pub fn groups(&self) -> &[JointGroup] {
        &self.groups
    }

    pub fn goal_set(&self) -> &[usize] {
        &self.goal_set
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn insert(&mut self, scenario: &Scenario, mut node: JointNode) -> usize {
        let id = self.nodes.len();
        node.id = id;
        if let Some(p) = node.parent {
            self.nodes[p].children.push(id);
        }
        let key: Vec<PoseKey> = node.poses.iter().map(|p| scenario.quantization.key(p)).collect();
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
                self.groups.push(JointGroup {
                    poses: node.poses.clone(),
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

    fn path_to(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        while let Some(p) = self.nodes[*path.last().unwrap()].parent {
            path.push(p);
        }
        path.reverse();
        path
    }
}

/// Control distribution for robot `r` when expanding joint group `k`: steer toward
/// the robot's nearest unsatisfied target.
fn robot_control_distribution(
    problem: &Problem,
    tree: &CentralTree,
    k: usize,
    r: usize,
    fields: &mut FieldCache,
) -> Vec<f64> {
    let s = problem.scenario;
    let Some(params) = s.bias else {
        return bias::uniform(s.primitives.len());
    };
    let group = &tree.groups[k];
    let rep = &tree.nodes[group.deepest];
    let pose = group.poses[r];
    let nearest = (0..s.targets.len())
        .filter(|&l| rep.belief.block_log_det(l) > problem.log_deltas[l])
        .map(|l| {
            let d = fields
                .field(&s.workspace, &mean_position(&rep.predicted, l))
                .distance_or_inf(&pose.position());
            (l, d)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    match nearest {
        Some((l, _)) => {
            let field = fields.field(&s.workspace, &mean_position(&rep.predicted, l));
            bias::control_masses(&pose, &s.primitives, field, s.sensor.range, params.p_u, s.dt)
        }
        None => bias::uniform(s.primitives.len()),
    }
}

fn joint_measurements(s: &Scenario, poses: &[RobotPose], predicted: &InfoBelief) -> Vec<Vec<Measurement>> {
    (0..s.targets.len())
        .map(|l| {
            let target = mean_position(predicted, l);
            poses
                .iter()
                .filter_map(|p| observe(&s.sensor, &s.workspace, p, &target, s.targets[l].dim()))
                .collect()
        })
        .collect()
}

#[derive(Debug)]
pub struct CentralBuild {
    pub tree: CentralTree,
    pub counters: OpCounters,
    pub iterations: Vec<IterationStats>,
}

/// Grow the joint tree for `n_max` iterations from one seed.
pub fn build_central_tree(scenario: &Scenario, n_max: u32, seed: u64) -> Result<CentralBuild> {
    let problem = Problem::new(scenario)?;
    let s = scenario;
    let n = s.n_robots();
    let mut rng = ChaCha8Rng::seed_from_u64(robot_seeds(seed, 1)[0]);
    let mut fields = FieldCache::default();

    for (i, p) in s.robots.iter().enumerate() {
        if !s.workspace.is_free(&p.position()) {
            return Err(crate::Error::InvalidArgument(format!("robot {i} starts in collision")));
        }
    }
    let belief = InfoBelief::from_priors(&s.targets)?;
    let predicted = dkf_predict(&belief, &s.targets)?;
    let mut tree = CentralTree::default();
    tree.insert(
        s,
        JointNode {
            id: 0,
            poses: s.robots.clone(),
            goal: is_goal(&problem, &belief),
            cost: belief.full_det(),
            log_cost: belief.full_log_det(),
            belief,
            predicted,
            parent: None,
            controls: Vec::new(),
            depth: 0,
            children: Vec::new(),
        },
    );

    let mut counters = OpCounters::default();
    let mut iterations = Vec::with_capacity(n_max as usize);
    for _ in 0..n_max {
        let start = Instant::now();
        let mut step = OpCounters {
            iterations: 1,
            ..OpCounters::default()
        };
        let group_masses = match &s.bias {
            Some(p) => {
                let depths: Vec<u32> = tree.groups.iter().map(|g| g.max_depth).collect();
                bias::group_masses(&depths, tree.max_depth, p.p_v)
            }
            None => bias::uniform(tree.groups.len()),
        };
        let k = bias::sample_index(&group_masses, &mut rng);
        let controls: Vec<usize> = (0..n)
            .map(|r| {
                let masses = robot_control_distribution(&problem, &tree, k, r, &mut fields);
                bias::sample_index(&masses, &mut rng)
            })
            .collect();
        let poses: Vec<RobotPose> = tree.groups[k]
            .poses
            .iter()
            .zip(&controls)
            .map(|(p, &u)| step_pose(p, &s.primitives[u], s.dt))
            .collect();
        step.pose_ops += n as u64;

        let mut new_nodes = Vec::new();
        if poses.iter().all(|p| s.workspace.is_free(&p.position())) {
            let members = &tree.groups[k].members;
            let eligible: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&m| s.max_depth.is_none_or(|cap| tree.nodes[m].depth < cap))
                .collect();
            step.capped_nodes += (members.len() - eligible.len()) as u64;
            for m in expansion_subset(eligible, s.group_cap, &mut rng) {
                let q = &tree.nodes[m];
                if q.children.iter().any(|&c| tree.nodes[c].controls == controls) {
                    step.duplicate_children += 1;
                    continue;
                }
                let meas = joint_measurements(s, &poses, &q.predicted);
                let belief = information_update(&q.predicted, &meas)?;
                let predicted = dkf_predict(&belief, &s.targets)?;
                let log_det = belief.full_log_det();
                new_nodes.push(JointNode {
                    id: 0,
                    poses: poses.clone(),
                    goal: is_goal(&problem, &belief),
                    cost: q.cost + belief.full_det(),
                    log_cost: log_add_exp(q.log_cost, log_det),
                    belief,
                    predicted,
                    parent: Some(m),
                    controls: controls.clone(),
                    depth: q.depth + 1,
                    children: Vec::new(),
                });
                step.expansions += 1;
                step.belief_ops += 1 + n as u64;
            }
        } else {
            step.rejected_samples += 1;
        }
        step.nodes_added = new_nodes.len() as u64;
        for node in new_nodes {
            tree.insert(s, node);
        }
        counters.add(&step);
        iterations.push(IterationStats {
            nodes_added: step.nodes_added,
            belief_ops: step.belief_ops,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(CentralBuild {
        tree,
        counters,
        iterations,
    })
}

/// Minimum-cost goal path of the joint tree as a team plan.
pub fn extract_central_plan(scenario: &Scenario, tree: &CentralTree, counters: OpCounters) -> Option<PlanResult> {
    let best = tree
        .goal_set
        .iter()
        .copied()
        .min_by(|&a, &b| tree.nodes[a].cost.total_cmp(&tree.nodes[b].cost).then(a.cmp(&b)))?;
    let path = tree.path_to(best);
    let nodes: Vec<&JointNode> = path.iter().map(|&id| &tree.nodes[id]).collect();
    let dets: Vec<Vec<f64>> = nodes
        .iter()
        .map(|n| (0..n.belief.len()).map(|l| n.belief.block_det(l)).collect())
        .collect();
    let shared_cost: f64 = nodes.iter().map(|n| n.belief.full_det()).sum();
    let robots: Vec<RobotPath> = (0..scenario.n_robots())
        .map(|r| RobotPath {
            robot: r,
            nodes: path.clone(),
            poses: nodes.iter().map(|n| n.poses[r]).collect(),
            controls: nodes.iter().skip(1).map(|n| Some(n.controls[r])).collect(),
            dets: dets.clone(),
            cost: shared_cost,
        })
        .collect();
    Some(PlanResult {
        planner: PlannerKind::Central,
        horizon: nodes.last().unwrap().depth,
        initiators: Vec::new(),
        total_cost: shared_cost * scenario.n_robots() as f64,
        robots,
        counters,
        candidates: tree.goal_set.len() as u64,
        skipped_candidates: 0,
        provenance: Vec::new(),
    })
}

pub fn run_central(scenario: &Scenario, seed: u64, n_max: u32) -> Result<RunOutput> {
    let build = build_central_tree(scenario, n_max, seed)?;
    let plan = extract_central_plan(scenario, &build.tree, build.counters);
    Ok(RunOutput {
        plan,
        counters: build.counters,
        per_robot: vec![build.counters],
        iterations: build.iterations,
        tree_sizes: vec![build.tree.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::InfoBlock;
    use crate::planner::{build_trees, replay_cost_oracle, simulate_central_kf, simulate_team_dkf};
    use crate::scenario::tests::minimal_spec;
    use crate::scenario::RobotSpec;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn scalar(omega: f64) -> InfoBelief {
        InfoBelief::new(vec![InfoBlock::new(DMatrix::from_element(1, 1, omega), DVector::zeros(1)).unwrap()])
    }

    fn unit_row(variance: f64) -> Measurement {
        Measurement {
            jacobian: DVector::from_element(1, 1.0),
            variance,
            innovation: 0.0,
        }
    }

    #[test]
    fn kf_update_examples() {
        let b = scalar(2.0);
        let two = information_update(&b, &[vec![unit_row(0.5), unit_row(0.5)]]).unwrap();
        assert_relative_eq!(two.block(0).omega()[(0, 0)], 6.0, epsilon = 1e-12);
        let none = information_update(&b, &[vec![]]).unwrap();
        assert_eq!(none.block(0).omega()[(0, 0)], 2.0);
        let one = information_update(&b, &[vec![unit_row(0.5)]]).unwrap();
        let dkf = crate::belief::dkf_update(
            &b,
            &[],
            &[crate::belief::DkfWeights::isolated()],
            &[Some(unit_row(0.5))],
        )
        .unwrap();
        assert_eq!(one, dkf);
    }

    #[test]
    fn root_only_without_iterations() {
        let s = Scenario::from_spec(minimal_spec()).unwrap();
        let b = build_central_tree(&s, 0, 1).unwrap();
        assert_eq!(b.tree.len(), 1);
    }

    #[test]
    fn single_robot_matches_distributed_first_expansion() {
        let s = Scenario::from_spec(minimal_spec()).unwrap();
        for seed in 0..20 {
            let central = build_central_tree(&s, 1, seed).unwrap();
            let problem = Problem::new(&s).unwrap();
            let dist = build_trees(&problem, &robot_seeds(seed, 1), 1).unwrap();
            let c: Vec<RobotPose> = central.tree.nodes().iter().skip(1).map(|n| n.poses[0]).collect();
            let d: Vec<RobotPose> = dist.trees[0].nodes().iter().skip(1).map(|n| n.pose).collect();
            assert_eq!(c, d, "seed {seed}");
        }
    }

    #[test]
    fn central_plans_replay() {
        let mut spec = minimal_spec();
        spec.robots.push(RobotSpec { pose: [2.0, 2.5, 0.0] });
        spec.bias.enabled = true;
        let s = Scenario::from_spec(spec).unwrap();
        let out = run_central(&s, 3, 400).unwrap();
        let plan = out.plan.expect("plan");
        let replay = replay_cost_oracle(&plan, &s).unwrap();
        assert_relative_eq!(replay.total_cost, plan.total_cost, max_relative = 1e-9);
    }

    #[test]
    fn central_filter_dominates_dkf_on_fixed_paths() {
        let mut spec = minimal_spec();
        spec.robots = vec![
            RobotSpec { pose: [2.0, 2.0, 0.3] },
            RobotSpec { pose: [3.0, 3.0, 2.0] },
            RobotSpec { pose: [2.5, 1.5, -1.0] },
        ];
        let s = Scenario::from_spec(spec).unwrap();
        let graph = crate::commgraph::CommGraph::complete(3);
        let paths: Vec<Vec<RobotPose>> = s
            .robots
            .iter()
            .enumerate()
            .map(|(i, p0)| {
                let mut p = *p0;
                let mut path = vec![p];
                for t in 0..12 {
                    p = step_pose(&p, &s.primitives[(i * 5 + t * 7) % s.primitives.len()], s.dt);
                    path.push(p);
                }
                path
            })
            .collect();
        let team = simulate_team_dkf(&s, &graph, &paths).unwrap();
        let joint: Vec<Vec<RobotPose>> = (0..paths[0].len())
            .map(|t| paths.iter().map(|p| p[t]).collect())
            .collect();
        let central = simulate_central_kf(&s, &joint).unwrap();
        for robot in &team {
            for (t, dets) in robot.iter().enumerate() {
                for (l, d) in dets.iter().enumerate() {
                    assert!(central[t][l] <= d * (1.0 + 1e-12), "t={t} l={l}");
                }
            }
        }
    }
}
