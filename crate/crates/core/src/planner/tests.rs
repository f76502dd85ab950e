use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::belief::InfoBelief;
use crate::commgraph::{CommGraph, GraphSpec};
use crate::env::Rect;
use crate::models::{RobotPose, TargetModel};
use crate::belief::WeightScheme;
use crate::scenario::tests::minimal_spec;
use crate::scenario::{Quantization, RobotSpec, Scenario, ScenarioSpec};

fn scenario(spec: ScenarioSpec) -> Scenario {
    Scenario::from_spec(spec).unwrap()
}

fn quant() -> Quantization {
    Quantization {
        position: 0.05,
        heading: 1f64.to_radians(),
    }
}

/// Bare node for hand-built fixture trees.
fn fixture_node(robot: usize, x: f64, parent: Option<NodeId>, depth: u32, s_set: Vec<NodeId>, cost: f64) -> TreeNode {
    let belief = InfoBelief::from_priors(&[TargetModel::static_position([1.0, 1.0], 0.1, 0.0)]).unwrap();
    TreeNode {
        id: 0,
        robot,
        pose: RobotPose::new(x, 0.5, 0.0),
        predicted: belief.clone(),
        belief,
        s_set,
        parent,
        control: parent.map(|_| 0),
        depth,
        cost,
        log_cost: cost.ln(),
        assigned: None,
        goal: false,
        children: Vec::new(),
    }
}

fn chain_tree(robot: usize, s_sets: &[Vec<NodeId>]) -> Tree {
    let mut t = Tree::new(quant(), fixture_node(robot, 0.0, None, 0, vec![], 1.0));
    for (d, s) in s_sets.iter().enumerate() {
        t.insert(fixture_node(robot, d as f64 + 1.0, Some(d), d as u32 + 1, s.clone(), 1.0));
    }
    t
}

#[test]
fn init_tree_is_a_single_root() {
    let s = scenario(minimal_spec());
    let p = Problem::new(&s).unwrap();
    let t = init_tree(&p, 0, &mut FieldCache::default()).unwrap();
    assert_eq!(t.len(), 1);
    assert_eq!(t.group_count(), 1);
    assert!(t.goal_set().is_empty());
    assert_eq!(t.root().cost, t.root().belief.full_det());

    let mut spec = minimal_spec();
    spec.targets[0].delta = Some(1.0);
    let s = scenario(spec);
    let p = Problem::new(&s).unwrap();
    let t = init_tree(&p, 0, &mut FieldCache::default()).unwrap();
    assert_eq!(t.goal_set(), &[0]);
}

#[test]
fn zero_iterations_leave_roots() {
    let mut spec = minimal_spec();
    spec.robots.push(RobotSpec { pose: [1.0, 1.0, 0.0] });
    let s = scenario(spec);
    let out = run_distributed(&s, 4, 0).unwrap();
    assert_eq!(out.tree_sizes, vec![1, 1]);
    assert!(out.plan.is_none());
}

#[test]
fn uniform_group_sampling_frequencies() {
    let s = scenario(minimal_spec());
    let p = Problem::new(&s).unwrap();
    let mut tree = init_tree(&p, 0, &mut FieldCache::default()).unwrap();
    for k in 1..5 {
        tree.insert(fixture_like(&tree, k as f64 * 0.3));
    }
    assert_eq!(tree.group_count(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let mut counts = [0usize; 5];
    for _ in 0..n {
        counts[sample_group(&tree, None, &mut rng)] += 1;
    }
    let p = 0.2;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
    }
}

fn fixture_like(tree: &Tree, dx: f64) -> TreeNode {
    let root = tree.root();
    let mut n = root.clone();
    n.pose = RobotPose::new(root.pose.x + dx, root.pose.y, root.pose.theta);
    n.parent = Some(0);
    n.depth = 1;
    n.control = Some(0);
    n.cost = root.cost + n.belief.full_det();
    n
}

#[test]
fn admissible_nodes_follow_references() {
    // neighbor tree: root 0 with children 1, 2, 3; node 1 has child 4
    let mut nb = Tree::new(quant(), fixture_node(1, 0.0, None, 0, vec![], 1.0));
    for x in [1.0, 2.0, 3.0] {
        nb.insert(fixture_node(1, x, Some(0), 1, vec![0], 1.0));
    }
    nb.insert(fixture_node(1, 4.0, Some(1), 2, vec![1], 1.0));

    let root = fixture_node(0, 0.0, None, 0, vec![], 1.0);
    assert_eq!(admissible_neighbor_nodes(&root, &nb, 0).unwrap(), vec![0]);

    let refs_root = fixture_node(0, 1.0, Some(0), 1, vec![0], 1.0);
    assert_eq!(admissible_neighbor_nodes(&refs_root, &nb, 0).unwrap(), vec![1, 2, 3]);

    let refs_leaf = fixture_node(0, 1.0, Some(0), 1, vec![2], 1.0);
    assert_eq!(admissible_neighbor_nodes(&refs_leaf, &nb, 0).unwrap(), vec![2]);

    let dangling = fixture_node(0, 1.0, Some(0), 1, vec![9], 1.0);
    assert!(matches!(
        admissible_neighbor_nodes(&dangling, &nb, 0),
        Err(crate::Error::InternalConsistency(_))
    ));
}

#[test]
fn extension_rejects_collisions_and_expands_whole_groups() {
    let mut spec = minimal_spec();
    spec.workspace.obstacles = vec![Rect::new([2.9, 2.0], [3.2, 3.0])];
    spec.targets[0].prior_mean = vec![2.0, 2.0];
    spec.motion.primitives = vec![[0.0, 0.0]];
    let s = scenario(spec);
    let p = Problem::new(&s).unwrap();
    let trees = vec![init_tree(&p, 0, &mut FieldCache::default()).unwrap()];
    let mut st = RobotState::new(1);
    // primitive (1.0, 0) ends at (3.5, 2.5), clear; (0.2, 0) at 2.7 clear
    let fast = s.primitives.iter().position(|u| u.v == 1.0 && u.omega == 0.0).unwrap();
    let out = extend(&p, &trees, 0, 0, fast, &mut st).unwrap();
    assert_eq!(out.nodes.len(), 1);

    let mut spec = minimal_spec();
    spec.workspace.obstacles = vec![Rect::new([3.4, 2.0], [3.6, 3.0])];
    let s = scenario(spec);
    let p = Problem::new(&s).unwrap();
    let trees = vec![init_tree(&p, 0, &mut FieldCache::default()).unwrap()];
    let out = extend(&p, &trees, 0, 0, fast, &mut st).unwrap();
    assert!(out.nodes.is_empty());
    assert_eq!(out.counters.rejected_samples, 1);

    // stay-in-place primitive keeps the child in the root's group
    let s = scenario(minimal_spec());
    let p = Problem::new(&s).unwrap();
    let mut trees = vec![init_tree(&p, 0, &mut FieldCache::default()).unwrap()];
    let stay = s.primitives.iter().position(|u| u.v == 0.0 && u.omega == 0.0).unwrap();
    let out = extend(&p, &trees, 0, 0, stay, &mut st).unwrap();
    for n in out.nodes {
        trees[0].insert(n);
    }
    assert_eq!(trees[0].len(), 2);
    assert_eq!(trees[0].group_count(), 1);
    // the group now has two members; another primitive gives one child per member
    let out = extend(&p, &trees, 0, 0, fast, &mut st).unwrap();
    assert_eq!(out.nodes.len(), 2);
    assert_eq!(out.nodes[0].parent, Some(0));
    assert_eq!(out.nodes[1].parent, Some(1));
    // repeating the stay primitive on the root is a duplicate
    let out = extend(&p, &trees, 0, 0, stay, &mut st).unwrap();
    assert_eq!(out.counters.duplicate_children, 1);
    assert_eq!(out.nodes.len(), 1);
}

#[test]
fn single_robot_plan_is_its_cheapest_goal_path() {
    let mut spec = minimal_spec();
    spec.bias.enabled = true;
    let s = scenario(spec);
    let problem = Problem::new(&s).unwrap();
    let out = build_trees(&problem, &robot_seeds(5, 1), 300).unwrap();
    let plan = extract_team_plan(&out.trees, &problem.graph, out.counters).unwrap().expect("plan");
    let tree = &out.trees[0];
    let best = tree
        .goal_set()
        .iter()
        .map(|&g| tree.node(g).cost)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(plan.total_cost, plan.robots[0].cost);
    assert_relative_eq!(plan.total_cost, best, max_relative = 1e-12);
    let goal = *plan.robots[0].nodes.last().unwrap();
    assert_eq!(plan.horizon, tree.node(goal).depth);
    assert_eq!(plan.robots[0].nodes, tree.path_to(goal));
}

#[test]
fn team_path_follows_neighbor_references() {
    // robot 0: chain 0-1-2-3 referencing robot 1 nodes 0, 1, 2
    let t0 = chain_tree(0, &[vec![0], vec![1], vec![2]]);
    // robot 1: chain 0-1-2 plus two children of 2 with different costs
    let mut t1 = chain_tree(1, &[vec![0], vec![1]]);
    let mut cheap = fixture_node(1, 7.0, Some(2), 3, vec![2], 0.5);
    cheap.cost = 0.5;
    t1.insert(fixture_node(1, 6.0, Some(2), 3, vec![2], 2.0));
    t1.insert(cheap);
    let trees = vec![t0, t1];
    let g = CommGraph::path(2);
    let paths = resolve_team_path(0, 3, &trees, &g).unwrap();
    assert_eq!(paths[0].as_deref(), Some(&[0, 1, 2, 3][..]));
    assert_eq!(paths[1].as_deref(), Some(&[0, 1, 2, 4][..]));

    // leaf at the end of the imposed chain is repeated
    let t0 = chain_tree(0, &[vec![0], vec![1]]);
    let t1 = chain_tree(1, &[vec![0]]);
    let paths = resolve_team_path(0, 2, &[t0, t1], &g).unwrap();
    assert_eq!(paths[1].as_deref(), Some(&[0, 1, 1][..]));
}

#[test]
fn three_robot_chain_and_conflicts() {
    // green(0) - blue(1) - red(2) on a path graph; blue references red
    let green = chain_tree(0, &[vec![0], vec![1]]);
    let blue = chain_tree(1, &[vec![0, 0], vec![1, 1]]);
    let red = chain_tree(2, &[vec![0], vec![1]]);
    let g = CommGraph::path(3);
    let trees = vec![green, blue, red];
    let paths = resolve_team_path(0, 2, &trees, &g).unwrap();
    assert_eq!(paths[1].as_deref(), Some(&[0, 1, 2][..]));
    assert_eq!(paths[2].as_deref(), Some(&[0, 1, 2][..]));

    // 4-cycle 0-1-3-2-0: robots 1 and 2 both impose on robot 3, but disagree
    let cycle = CommGraph::new(4, [(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
    let t0 = chain_tree(0, &[vec![0, 0], vec![1, 1]]);
    let t1 = chain_tree(1, &[vec![0, 0], vec![1, 1]]);
    let t2 = chain_tree(2, &[vec![0, 0], vec![1, 2]]);
    let mut t3 = chain_tree(3, &[vec![0, 0]]);
    t3.insert(fixture_node(3, 9.0, Some(0), 1, vec![0, 0], 1.0));
    let err = resolve_team_path(0, 2, &[t0, t1, t2, t3], &cycle).unwrap_err();
    assert!(matches!(err, crate::Error::UnresolvableCandidate(_)));
}

fn team_spec(n: usize, graph: GraphSpec) -> ScenarioSpec {
    let mut spec = minimal_spec();
    spec.robots = (0..n)
        .map(|i| RobotSpec {
            pose: [1.5 + 0.6 * i as f64, 1.5 + 0.4 * (i % 2) as f64, 0.3 * i as f64],
        })
        .collect();
    spec.targets.push(spec.targets[0].clone());
    spec.targets[1].prior_mean = vec![1.8, 3.2];
    spec.motion.turn_rates_deg = vec![-60.0, -45.0, -30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0, 45.0, 60.0];
    spec.graph = graph;
    spec.bias.enabled = true;
    spec
}

#[test]
fn plans_replay_to_their_cost() {
    for (graph, seed) in [(GraphSpec::Full, 1), (GraphSpec::None, 2), (GraphSpec::Random { avg_degree: 2.0, seed: 3 }, 3)] {
        let s = scenario(team_spec(3, graph.clone()));
        let out = run_distributed(&s, seed, 800).unwrap();
        let plan = out.plan.unwrap_or_else(|| panic!("no plan for {graph}"));
        let replay = replay_cost_oracle(&plan, &s).unwrap();
        assert_relative_eq!(replay.total_cost, plan.total_cost, max_relative = 1e-9);
        let total: f64 = plan.robots.iter().map(|r| r.cost).sum();
        assert_relative_eq!(total, plan.total_cost, max_relative = 1e-12);
        assert!(plan.robots.iter().all(|r| r.nodes.len() == plan.horizon as usize + 1));
    }
}

#[test]
fn pairwise_plans_replay_to_their_cost() {
    let mut spec = team_spec(3, GraphSpec::Full);
    spec.dkf = WeightScheme::Pairwise { confident: 0.75 };
    let s = scenario(spec);
    let plan = run_distributed(&s, 4, 800).unwrap().plan.expect("a plan");
    let replay = replay_cost_oracle(&plan, &s).unwrap();
    assert_relative_eq!(replay.total_cost, plan.total_cost, max_relative = 1e-9);
}

#[test]
fn root_only_plan_replays_to_prior_dets() {
    let mut spec = team_spec(2, GraphSpec::Full);
    for t in &mut spec.targets {
        t.delta = Some(1.0);
    }
    let s = scenario(spec);
    let plan = run_distributed(&s, 0, 0).unwrap().plan.unwrap();
    assert_eq!(plan.horizon, 0);
    let prior = InfoBelief::from_priors(&s.targets).unwrap().full_det();
    assert_relative_eq!(plan.total_cost, 2.0 * prior, max_relative = 1e-12);
    let replay = replay_cost_oracle(&plan, &s).unwrap();
    assert_relative_eq!(replay.total_cost, 2.0 * prior, max_relative = 1e-12);
}

fn fingerprint(trees: &[Tree]) -> Vec<(usize, u64, u64, u64, Vec<NodeId>)> {
    trees
        .iter()
        .flat_map(|t| {
            t.nodes()
                .iter()
                .map(|n| (n.robot, n.pose.x.to_bits(), n.pose.y.to_bits(), n.cost.to_bits(), n.s_set.clone()))
        })
        .collect()
}

#[test]
fn thread_count_does_not_change_trees() {
    let s = scenario(team_spec(4, GraphSpec::Full));
    let problem = Problem::new(&s).unwrap();
    let seeds = robot_seeds(17, 4);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| build_trees(&problem, &seeds, 150).unwrap())
    };
    let a = fingerprint(&run(1).trees);
    let b = fingerprint(&run(4).trees);
    assert_eq!(a, b);
}

fn check_reference_depths(trees: &[Tree], problem: &Problem) -> std::result::Result<(), String> {
    for (i, t) in trees.iter().enumerate() {
        for n in t.nodes() {
            for (&j, &r) in problem.neighbors[i].iter().zip(&n.s_set) {
                let refd = trees[j].nodes().get(r).ok_or("dangling reference")?;
                if refd.depth + 1 > n.depth {
                    return Err(format!("robot {i} node {} references depth {}", n.id, refd.depth));
                }
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tree_invariants_hold(n in 1usize..4, seed in 0u64..1000, biased in any::<bool>(), iters in 5u32..60) {
        let graph = if n > 1 { GraphSpec::Random { avg_degree: 2.0 * (n as f64 - 1.0) / n as f64, seed } } else { GraphSpec::Full };
        let mut spec = team_spec(n, graph);
        spec.bias.enabled = biased;
        spec.targets[0].delta = Some(1e-3);
        let s = scenario(spec);
        let problem = Problem::new(&s).unwrap();
        let out = build_trees(&problem, &robot_seeds(seed, n), iters).unwrap();
        for (i, t) in out.trees.iter().enumerate() {
            t.check_invariants(&problem.log_deltas, problem.neighbors[i].len()).unwrap();
            // cost recursion from the root reproduces the stored cost
            for node in t.nodes() {
                let acc: f64 = t.path_to(node.id).iter().map(|&id| t.node(id).belief.full_det()).sum();
                prop_assert!((acc - node.cost).abs() <= 1e-12 * node.cost.max(1e-300));
                prop_assert!((node.log_cost - node.cost.ln()).abs() < 1e-9);
            }
        }
        prop_assert!(check_reference_depths(&out.trees, &problem).is_ok());
    }
}
