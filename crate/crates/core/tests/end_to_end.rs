use approx::assert_relative_eq;

use dsaia::baseline::run_central;
use dsaia::belief::WeightScheme;
use dsaia::commgraph::GraphSpec;
use dsaia::planner::{replay_cost_oracle, run_distributed};
use dsaia::scenario::{
    BiasSpec, MotionSpec, PlannerSpec, QuantizationSpec, RobotSpec, Scenario, ScenarioSpec, SensorSpec, TargetSpec,
    WorkspaceSpec,
};

fn target(x: f64, y: f64) -> TargetSpec {
    TargetSpec {
        prior_mean: vec![x, y],
        prior_cov: vec![vec![0.05, 0.0], vec![0.0, 0.05]],
        transition: None,
        drift: None,
        process_noise: None,
        delta: None,
    }
}

fn two_robots() -> Scenario {
    Scenario::from_spec(ScenarioSpec {
        name: "pair".into(),
        workspace: WorkspaceSpec {
            width: 5.0,
            height: 5.0,
            resolution: 0.05,
            obstacles: vec![],
        },
        robots: vec![RobotSpec { pose: [1.5, 2.5, 0.0] }, RobotSpec { pose: [3.5, 2.5, 3.1416] }],
        motion: MotionSpec {
            dt: 1.0,
            speeds: vec![0.0, 0.2, 1.0],
            turn_rates_deg: vec![-60.0, -30.0, 0.0, 30.0, 60.0],
            primitives: vec![],
        },
        sensor: SensorSpec {
            range: 1.0,
            noise_coeff: 0.25,
            min_distance: 1e-3,
        },
        thresholds: None,
        targets: vec![target(1.9, 2.5), target(3.1, 2.5)],
        graph: GraphSpec::Full,
        dkf: WeightScheme::default(),
        bias: BiasSpec::default(),
        quantization: QuantizationSpec::default(),
        planner: PlannerSpec::default(),
    })
    .unwrap()
}

#[test]
fn both_planners_reach_the_goal_and_replay() {
    let s = two_robots();
    for out in [run_distributed(&s, 7, 600).unwrap(), run_central(&s, 7, 600).unwrap()] {
        let plan = out.plan.expect("plan");
        let replay = replay_cost_oracle(&plan, &s).unwrap();
        assert_relative_eq!(replay.total_cost, plan.total_cost, max_relative = 1e-9);
        assert_eq!(plan.robots.len(), 2);
    }
}

#[test]
fn same_seed_same_plan() {
    let s = two_robots();
    let a = run_distributed(&s, 11, 300).unwrap();
    let b = run_distributed(&s, 11, 300).unwrap();
    assert_eq!(a.plan, b.plan);
    assert_eq!(a.tree_sizes, b.tree_sizes);
}
