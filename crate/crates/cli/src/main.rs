use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dsaia::commgraph::GraphSpec;
use dsaia::planner::PlannerKind;
use dsaia::scenario::Scenario;
use dsaia_cli::{
    cmd_bench, cmd_compare_graphs, cmd_plan, cmd_replay, load_scenario, to_csv, to_json, uncertainty_rows, write_file,
    BenchCell, CliError, RunRecord, RunStatus,
};

#[derive(Parser)]
#[command(name = "dsaia", version, about = "Distributed sampling-based active information acquisition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build trees, extract a team plan and write plan.json, run_meta.json and uncertainty.csv.
    Plan(PlanArgs),
    /// Scalability table over team sizes and graphs, written to bench.csv.
    Bench(BenchArgs),
    /// Mean horizon per communication graph plus the determinant time series.
    CompareGraphs(CompareArgs),
    /// Recompute the cost of a plan.json against its scenario.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Iterations; the scenario's value when omitted.
    #[arg(long)]
    n_max: Option<u32>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads; rayon's default when omitted.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = Planner::Distributed)]
    planner: Planner,
    /// full, none, random:<avg_deg>:<seed>, bounded:<max_deg>:<seed> or edges:0-1,1-2
    #[arg(long)]
    graph: Option<GraphSpec>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Team sizes as ROBOTSxTARGETS.
    #[arg(long, value_delimiter = ',', default_value = "4x4,8x8")]
    cells: Vec<String>,
    /// Repeat for several graphs.
    #[arg(long, default_values = ["full", "random:2:1"])]
    graph: Vec<GraphSpec>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "distributed,central")]
    planner: Vec<Planner>,
    #[arg(long, default_value_t = 10)]
    trials: u32,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_values = ["full", "random:2:1", "none"])]
    graph: Vec<GraphSpec>,
    #[arg(long, default_value_t = 20)]
    trials: u32,
    /// Draw a fresh random graph per trial by shifting the graph seed.
    #[arg(long)]
    vary_graph_seed: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Planner {
    Distributed,
    Central,
}

impl From<Planner> for PlannerKind {
    fn from(p: Planner) -> Self {
        match p {
            Planner::Distributed => PlannerKind::Distributed,
            Planner::Central => PlannerKind::Central,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn parse_cell(s: &str) -> anyhow::Result<(usize, usize)> {
    let (n, m) = s
        .split_once('x')
        .ok_or_else(|| anyhow!("team size `{s}` is not ROBOTSxTARGETS"))?;
    Ok((n.trim().parse()?, m.trim().parse()?))
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("starting the worker pool")?;
            Ok(pool.install(f))
        }
    }
}

fn load(path: &Path, n_max: Option<u32>) -> anyhow::Result<(Scenario, u32)> {
    let s = load_scenario(path)?;
    let n = n_max.unwrap_or(s.n_max);
    Ok((s, n))
}

fn print_summary<T: serde::Serialize>(format: Format, value: &T) -> anyhow::Result<()> {
    match format {
        Format::Json => print!("{}", to_json(value)),
        Format::Csv => print!("{}", to_csv(std::slice::from_ref(value))?),
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct PlanSummary {
    status: RunStatus,
    horizon: Option<u32>,
    total_cost: Option<f64>,
    replay_cost: Option<f64>,
    iterations: u64,
    belief_ops: u64,
}

fn plan(args: PlanArgs) -> Result<(), CliError> {
    let c = &args.common;
    let (mut scenario, n_max) = load(&c.scenario, c.n_max)?;
    if let Some(g) = args.graph {
        scenario = scenario.with_graph(g)?;
    }
    let planner = args.planner.into();
    let run = with_threads(c.threads, || cmd_plan(&scenario, planner, c.seed, n_max))??;
    write_file(&c.out, "plan.json", &to_json(&run.record))?;
    write_file(&c.out, "run_meta.json", &to_json(&run.meta))?;
    let rows = run
        .record
        .plan
        .as_ref()
        .map(|p| uncertainty_rows(p, &scenario, &run.record.graph, c.seed))
        .unwrap_or_default();
    write_file(&c.out, "uncertainty.csv", &to_csv(&rows)?)?;
    let plan = run.record.plan.as_ref();
    print_summary(
        c.format,
        &PlanSummary {
            status: run.record.status,
            horizon: plan.map(|p| p.horizon),
            total_cost: plan.map(|p| p.total_cost),
            replay_cost: run.record.replay_cost,
            iterations: run.record.counters.iterations,
            belief_ops: run.record.counters.belief_ops,
        },
    )?;
    match run.record.status {
        RunStatus::Ok => Ok(()),
        RunStatus::NoPlan => Err(CliError::NoPlan(format!("no goal node after {n_max} iterations"))),
    }
}

fn bench(args: BenchArgs) -> Result<(), CliError> {
    let c = &args.common;
    let (template, n_max) = load(&c.scenario, c.n_max)?;
    let mut cells = Vec::new();
    for cell in &args.cells {
        let (n, m) = parse_cell(cell)?;
        for g in &args.graph {
            cells.push(BenchCell {
                n_robots: n,
                n_targets: m,
                graph: g.clone(),
            });
        }
    }
    let planners: Vec<PlannerKind> = args.planner.iter().map(|&p| p.into()).collect();
    let (rows, trials) = with_threads(c.threads, || cmd_bench(&template, &cells, &planners, args.trials, c.seed, n_max))??;
    write_file(&c.out, "bench.csv", &to_csv(&rows)?)?;
    write_file(&c.out, "bench_trials.json", &to_json(&trials))?;
    match c.format {
        Format::Json => print!("{}", to_json(&rows)),
        Format::Csv => print!("{}", to_csv(&rows)?),
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), CliError> {
    let c = &args.common;
    let (scenario, n_max) = load(&c.scenario, c.n_max)?;
    let cmp = with_threads(c.threads, || cmd_compare_graphs(&scenario, &args.graph, args.trials, c.seed, n_max, args.vary_graph_seed))??;
    write_file(&c.out, "compare.csv", &to_csv(&cmp.summary)?)?;
    write_file(&c.out, "uncertainty.csv", &to_csv(&cmp.uncertainty)?)?;
    match c.format {
        Format::Json => print!("{}", to_json(&cmp.summary)),
        Format::Csv => print!("{}", to_csv(&cmp.summary)?),
    }
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let text = std::fs::read_to_string(&args.plan)
        .with_context(|| format!("reading {}", args.plan.display()))?;
    let record: RunRecord =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.plan.display()))?;
    let (report, rows) = cmd_replay(&record, &scenario)?;
    write_file(&args.out, "uncertainty.csv", &to_csv(&rows)?)?;
    match args.format {
        Format::Json => print!("{}", to_json(&report)),
        Format::Csv => print!(
            "{}",
            to_csv(&[(&report.scenario_hash, report.planned_cost, report.replay_cost, report.relative_error)])?
        ),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => plan(a),
        Command::Bench(a) => bench(a),
        Command::CompareGraphs(a) => compare(a),
        Command::Replay(a) => replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
