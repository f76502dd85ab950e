//! Scenario loading, experiment drivers and the files they write.
//!
//! The binary in `main.rs` is a thin argument parser over these functions, so tests
//! and other programs can run the same experiments without spawning a process.

pub mod canonical;

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dsaia::baseline::run_central;
use dsaia::commgraph::GraphSpec;
use dsaia::planner::{replay_cost_oracle, robot_seeds, run_distributed, OpCounters, PlanResult, PlannerKind, RunOutput};
use dsaia::scenario::{Scenario, ScenarioSpec};

/// Bumped whenever a column or field of the written files changes.
pub const FORMAT_VERSION: u32 = 1;

/// Relative tolerance between a plan's cost and its replay.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0:#}")]
    Usage(#[from] anyhow::Error),
    #[error("no plan found: {0}")]
    NoPlan(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::NoPlan(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<dsaia::Error> for CliError {
    fn from(e: dsaia::Error) -> Self {
        CliError::Usage(e.into())
    }
}

pub fn parse_scenario(text: &str, origin: &str) -> anyhow::Result<Scenario> {
    let spec: ScenarioSpec = toml::from_str(text).map_err(|e| anyhow!("{origin}: {e}"))?;
    Scenario::from_spec(spec).map_err(|e| anyhow!("{origin}: {e}"))
}

pub fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenario(&text, &path.display().to_string())
}

/// Directory holding the scenarios shipped with the crate.
pub fn bundled_scenario_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios"))
}

pub fn load_bundled(name: &str) -> anyhow::Result<Scenario> {
    load_scenario(&bundled_scenario_dir().join(format!("{name}.toml")))
}

pub fn scenario_hash(scenario: &Scenario) -> String {
    canonical::canonical_hash(scenario.spec()).expect("scenario specs serialize to JSON")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    NoPlan,
}

/// Contents of `plan.json`. Deterministic for a given scenario and seed, so it holds no
/// timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub n_max: u32,
    pub planner: PlannerKind,
    pub graph: String,
    pub status: RunStatus,
    pub counters: OpCounters,
    /// Neighbor tree nodes read while fusing beliefs.
    pub message_count: u64,
    pub tree_sizes: Vec<usize>,
    pub replay_cost: Option<f64>,
    pub plan: Option<PlanResult>,
}

/// Contents of `run_meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub format_version: u32,
    pub scenario_hash: String,
    pub seed: u64,
    pub robot_seeds: Vec<u64>,
    pub planner: PlannerKind,
    pub threads: usize,
    pub wall_seconds: f64,
    pub mean_iteration_seconds: f64,
    pub iteration_seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PlanRun {
    pub record: RunRecord,
    pub meta: RunMeta,
}

pub fn run_planner(scenario: &Scenario, planner: PlannerKind, seed: u64, n_max: u32) -> dsaia::Result<RunOutput> {
    match planner {
        PlannerKind::Distributed => run_distributed(scenario, seed, n_max),
        PlannerKind::Central => run_central(scenario, seed, n_max),
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Plan once, check the result against the replay oracle and package the artifacts.
/// A run without a plan is still `Ok`; its status says so.
pub fn cmd_plan(scenario: &Scenario, planner: PlannerKind, seed: u64, n_max: u32) -> Result<PlanRun, CliError> {
    let start = Instant::now();
    let out = run_planner(scenario, planner, seed, n_max)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let replay_cost = match &out.plan {
        Some(plan) => {
            let replay = replay_cost_oracle(plan, scenario)
                .map_err(|e| CliError::Internal(format!("replay failed: {e}")))?;
            let err = relative_error(replay.total_cost, plan.total_cost);
            if !(err <= REPLAY_TOLERANCE) {
                return Err(CliError::Internal(format!(
                    "replayed cost {} differs from planned cost {} (relative error {err:e})",
                    replay.total_cost, plan.total_cost
                )));
            }
            Some(replay.total_cost)
        }
        None => None,
    };
    let hash = scenario_hash(scenario);
    let iteration_seconds: Vec<f64> = out.iterations.iter().map(|s| s.seconds).collect();
    let mean_iteration_seconds = if iteration_seconds.is_empty() {
        0.0
    } else {
        iteration_seconds.iter().sum::<f64>() / iteration_seconds.len() as f64
    };
    let record = RunRecord {
        format_version: FORMAT_VERSION,
        scenario: scenario.name.clone(),
        scenario_hash: hash.clone(),
        seed,
        n_max,
        planner,
        graph: scenario.graph.to_string(),
        status: if out.plan.is_some() { RunStatus::Ok } else { RunStatus::NoPlan },
        counters: out.counters,
        message_count: out.counters.neighbor_fetches,
        tree_sizes: out.tree_sizes,
        replay_cost,
        plan: out.plan,
    };
    let seeds = match planner {
        PlannerKind::Distributed => robot_seeds(seed, scenario.n_robots()),
        PlannerKind::Central => robot_seeds(seed, 1),
    };
    let meta = RunMeta {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        format_version: FORMAT_VERSION,
        scenario_hash: hash,
        seed,
        robot_seeds: seeds,
        planner,
        threads: rayon::current_num_threads(),
        wall_seconds,
        mean_iteration_seconds,
        iteration_seconds,
    };
    Ok(PlanRun { record, meta })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records serialize to JSON");
    s.push('\n');
    s
}

/// One row of `uncertainty.csv`: a covariance determinant along a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub graph: String,
    pub seed: u64,
    pub robot: usize,
    pub target: usize,
    pub t: usize,
    pub det: f64,
    pub delta: f64,
}

pub fn uncertainty_rows(plan: &PlanResult, scenario: &Scenario, graph: &str, seed: u64) -> Vec<UncertaintyRow> {
    let mut rows = Vec::new();
    for path in &plan.robots {
        for target in 0..scenario.n_targets() {
            for (t, dets) in path.dets.iter().enumerate() {
                rows.push(UncertaintyRow {
                    graph: graph.to_string(),
                    seed,
                    robot: path.robot,
                    target,
                    t,
                    det: dets[target],
                    delta: scenario.deltas[target],
                });
            }
        }
    }
    rows
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Outcome of one seeded trial in a benchmark or comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub n_robots: usize,
    pub n_targets: usize,
    pub graph: String,
    pub planner: PlannerKind,
    pub seed: u64,
    pub error: Option<String>,
    pub horizon: Option<u32>,
    pub cost: Option<f64>,
    pub counters: OpCounters,
    pub avg_degree: f64,
    pub max_degree: usize,
    pub seconds: f64,
    pub mean_iteration_seconds: f64,
}

impl TrialResult {
    pub fn succeeded(&self) -> bool {
        self.horizon.is_some()
    }

    pub fn belief_ops_per_iteration(&self) -> f64 {
        per(self.counters.belief_ops, self.counters.iterations)
    }
}

fn per(count: u64, over: u64) -> f64 {
    if over == 0 {
        0.0
    } else {
        count as f64 / over as f64
    }
}

/// Run `planner` on `scenario` once and summarize; failures are recorded, not returned.
pub fn run_trial(scenario: &Scenario, planner: PlannerKind, seed: u64, n_max: u32) -> TrialResult {
    trial_with_plan(scenario, planner, seed, n_max).0
}

fn trial_with_plan(
    scenario: &Scenario,
    planner: PlannerKind,
    seed: u64,
    n_max: u32,
) -> (TrialResult, Option<PlanResult>) {
    let (avg_degree, max_degree) = match scenario.graph.build(scenario.n_robots()) {
        Ok(g) => (g.average_degree(), g.max_degree()),
        Err(_) => (f64::NAN, 0),
    };
    let mut result = TrialResult {
        n_robots: scenario.n_robots(),
        n_targets: scenario.n_targets(),
        graph: scenario.graph.to_string(),
        planner,
        seed,
        error: None,
        horizon: None,
        cost: None,
        counters: OpCounters::default(),
        avg_degree,
        max_degree,
        seconds: 0.0,
        mean_iteration_seconds: 0.0,
    };
    let start = Instant::now();
    let mut plan = None;
    match run_planner(scenario, planner, seed, n_max) {
        Ok(out) => {
            result.counters = out.counters;
            result.horizon = out.plan.as_ref().map(|p| p.horizon);
            result.cost = out.plan.as_ref().map(|p| p.total_cost);
            if out.plan.is_none() {
                result.error = Some("no plan".into());
            }
            let n = out.iterations.len().max(1) as f64;
            result.mean_iteration_seconds = out.iterations.iter().map(|s| s.seconds).sum::<f64>() / n;
            plan = out.plan;
        }
        Err(e) => result.error = Some(e.to_string()),
    }
    result.seconds = start.elapsed().as_secs_f64();
    (result, plan)
}

/// One configuration of the scalability table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub n_robots: usize,
    pub n_targets: usize,
    pub graph: GraphSpec,
}

/// One row of `bench.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_robots: usize,
    pub n_targets: usize,
    pub graph: String,
    pub planner: PlannerKind,
    pub trials: usize,
    pub successes: usize,
    pub mean_horizon: Option<f64>,
    pub mean_cost: Option<f64>,
    pub belief_ops_per_iteration: f64,
    pub belief_ops_per_expansion: f64,
    pub pose_ops_per_iteration: f64,
    pub messages_per_iteration: f64,
    pub avg_degree: f64,
    pub max_degree: usize,
    pub mean_runtime_s: f64,
    pub mean_iteration_s: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(trials: &[TrialResult]) -> Option<BenchRow> {
    let first = trials.first()?;
    let mut total = OpCounters::default();
    for t in trials {
        total.add(&t.counters);
    }
    Some(BenchRow {
        n_robots: first.n_robots,
        n_targets: first.n_targets,
        graph: first.graph.clone(),
        planner: first.planner,
        trials: trials.len(),
        successes: trials.iter().filter(|t| t.succeeded()).count(),
        mean_horizon: mean(trials.iter().filter_map(|t| t.horizon.map(f64::from))),
        mean_cost: mean(trials.iter().filter_map(|t| t.cost)),
        belief_ops_per_iteration: per(total.belief_ops, total.iterations),
        belief_ops_per_expansion: total.ops_per_expansion(),
        pose_ops_per_iteration: per(total.pose_ops, total.iterations),
        messages_per_iteration: per(total.neighbor_fetches, total.iterations),
        avg_degree: mean(trials.iter().map(|t| t.avg_degree)).unwrap_or(0.0),
        max_degree: trials.iter().map(|t| t.max_degree).max().unwrap_or(0),
        mean_runtime_s: mean(trials.iter().map(|t| t.seconds)).unwrap_or(0.0),
        mean_iteration_s: mean(trials.iter().map(|t| t.mean_iteration_seconds)).unwrap_or(0.0),
    })
}

/// Scalability benchmark: every cell × planner gets `trials` seeded runs on random
/// placements drawn from `template`. Trial `k` uses seed `base_seed + k` for both the
/// placement and the planner. Rows come back sorted by cell, then planner.
pub fn cmd_bench(
    template: &Scenario,
    cells: &[BenchCell],
    planners: &[PlannerKind],
    trials: u32,
    base_seed: u64,
    n_max: u32,
) -> anyhow::Result<(Vec<BenchRow>, Vec<TrialResult>)> {
    let mut jobs = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        for (p, &planner) in planners.iter().enumerate() {
            for k in 0..trials as u64 {
                jobs.push((c, p, cell, planner, base_seed + k));
            }
        }
    }
    let results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(_, _, cell, planner, seed)| {
            let scenario = template
                .with_team(cell.n_robots, cell.n_targets, seed)
                .and_then(|s| s.with_graph(cell.graph.clone()));
            match scenario {
                Ok(s) => run_trial(&s, planner, seed, n_max),
                Err(e) => TrialResult {
                    n_robots: cell.n_robots,
                    n_targets: cell.n_targets,
                    graph: cell.graph.to_string(),
                    planner,
                    seed,
                    error: Some(e.to_string()),
                    horizon: None,
                    cost: None,
                    counters: OpCounters::default(),
                    avg_degree: f64::NAN,
                    max_degree: 0,
                    seconds: 0.0,
                    mean_iteration_seconds: 0.0,
                },
            }
        })
        .collect();
    let rows = results
        .chunks(trials.max(1) as usize)
        .filter_map(summarize)
        .collect();
    Ok((rows, results))
}

/// One row of `compare.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub graph: String,
    pub trials: usize,
    pub successes: usize,
    pub mean_horizon: Option<f64>,
    pub mean_cost: Option<f64>,
    pub avg_degree: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub summary: Vec<GraphSummary>,
    pub trials: Vec<TrialResult>,
    pub uncertainty: Vec<UncertaintyRow>,
}

/// `graph` with its generator seed shifted by `offset`; fixed graphs are returned as is.
pub fn reseeded(graph: &GraphSpec, offset: u64) -> GraphSpec {
    match graph.clone() {
        GraphSpec::Random { avg_degree, seed } => GraphSpec::Random {
            avg_degree,
            seed: seed.wrapping_add(offset),
        },
        GraphSpec::Bounded { max_degree, seed } => GraphSpec::Bounded {
            max_degree,
            seed: seed.wrapping_add(offset),
        },
        g => g,
    }
}

/// Plan `scenario` under each communication graph with seeds `base_seed..base_seed+trials`.
/// With `vary_graphs`, trial `k` also draws a fresh random graph (generator seed shifted
/// by `k`); summary rows keep the graph spec as given.
pub fn cmd_compare_graphs(
    scenario: &Scenario,
    graphs: &[GraphSpec],
    trials: u32,
    base_seed: u64,
    n_max: u32,
    vary_graphs: bool,
) -> anyhow::Result<Comparison> {
    let mut jobs = Vec::new();
    for g in graphs {
        for k in 0..trials as u64 {
            let graph = if vary_graphs { reseeded(g, k) } else { g.clone() };
            let s = scenario.with_graph(graph).map_err(|e| anyhow!("graph {g}: {e}"))?;
            jobs.push((g.to_string(), s, base_seed + k));
        }
    }
    let runs: Vec<(TrialResult, Vec<UncertaintyRow>)> = jobs
        .par_iter()
        .map(|(label, s, seed)| {
            let (mut trial, plan) = trial_with_plan(s, PlannerKind::Distributed, *seed, n_max);
            let rows = plan.map_or_else(Vec::new, |p| uncertainty_rows(&p, s, &s.graph.to_string(), *seed));
            trial.graph = label.clone();
            (trial, rows)
        })
        .collect();
    let mut summary = Vec::new();
    let mut trials_out = Vec::new();
    let mut uncertainty = Vec::new();
    for chunk in runs.chunks(trials.max(1) as usize) {
        let results: Vec<TrialResult> = chunk.iter().map(|(t, _)| t.clone()).collect();
        if let Some(row) = summarize(&results) {
            summary.push(GraphSummary {
                graph: row.graph,
                trials: row.trials,
                successes: row.successes,
                mean_horizon: row.mean_horizon,
                mean_cost: row.mean_cost,
                avg_degree: row.avg_degree,
            });
        }
        for (_, rows) in chunk {
            uncertainty.extend(rows.iter().cloned());
        }
        trials_out.extend(results);
    }
    Ok(Comparison {
        summary,
        trials: trials_out,
        uncertainty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub scenario_hash: String,
    pub planned_cost: f64,
    pub replay_cost: f64,
    pub relative_error: f64,
    pub costs: Vec<f64>,
}

/// Recompute a recorded plan from the scenario it was made for.
pub fn cmd_replay(record: &RunRecord, scenario: &Scenario) -> Result<(ReplayReport, Vec<UncertaintyRow>), CliError> {
    let graph: GraphSpec = record
        .graph
        .parse()
        .map_err(|e| CliError::Usage(anyhow!("plan file graph `{}`: {e}", record.graph)))?;
    let scenario = scenario.with_graph(graph)?;
    let hash = scenario_hash(&scenario);
    if hash != record.scenario_hash {
        return Err(CliError::Usage(anyhow!(
            "scenario hash {hash} does not match the plan's {}",
            record.scenario_hash
        )));
    }
    let plan = record
        .plan
        .as_ref()
        .ok_or_else(|| CliError::NoPlan("the plan file records a failed run".into()))?;
    let replay = replay_cost_oracle(plan, &scenario).map_err(|e| CliError::Internal(format!("replay failed: {e}")))?;
    let err = relative_error(replay.total_cost, plan.total_cost);
    if !(err <= REPLAY_TOLERANCE) {
        return Err(CliError::Internal(format!(
            "replayed cost {} differs from planned cost {} (relative error {err:e})",
            replay.total_cost, plan.total_cost
        )));
    }
    let mut rows = Vec::new();
    for (robot, steps) in replay.dets.iter().enumerate() {
        for target in 0..scenario.n_targets() {
            for (t, dets) in steps.iter().enumerate() {
                rows.push(UncertaintyRow {
                    graph: record.graph.clone(),
                    seed: record.seed,
                    robot,
                    target,
                    t,
                    det: dets[target],
                    delta: scenario.deltas[target],
                });
            }
        }
    }
    Ok((
        ReplayReport {
            scenario_hash: hash,
            planned_cost: plan.total_cost,
            replay_cost: replay.total_cost,
            relative_error: err,
            costs: replay.costs,
        },
        rows,
    ))
}
