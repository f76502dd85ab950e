use std::path::{Path, PathBuf};
use std::process::Command;

use dsaia::commgraph::GraphSpec;
use dsaia::planner::PlannerKind;
use dsaia_cli::{
    bundled_scenario_dir, cmd_bench, cmd_plan, cmd_replay, load_bundled, parse_scenario, scenario_hash, to_csv,
    to_json, uncertainty_rows, BenchCell, CliError, RunRecord, RunStatus,
};

const DESK: &str = include_str!("../scenarios/desk.toml");

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dsaia"))
}

fn scenario_path(name: &str) -> PathBuf {
    bundled_scenario_dir().join(format!("{name}.toml"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dsaia-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

#[test]
fn bundled_scenarios_load() {
    let big = load_bundled("warehouse_6robots_10targets").unwrap();
    assert_eq!(big.robots.len(), 6);
    assert_eq!(big.n_targets(), 10);
    for name in ["desk", "desk_team", "enumeration"] {
        load_bundled(name).unwrap();
    }
}

#[test]
fn threshold_table_requires_delta() {
    let text = DESK.replace("delta = 1.8e-5", "");
    let err = parse_scenario(&text, "x.toml").unwrap_err().to_string();
    assert!(err.contains("delta"), "{err}");
}

#[test]
fn missing_thresholds_use_default_delta() {
    let text = DESK.replace("[thresholds]\ndelta = 1.8e-5\n", "");
    assert!(!text.contains("[thresholds]"));
    let s = parse_scenario(&text, "x.toml").unwrap();
    assert_eq!(s.deltas, vec![1.8e-5]);
}

#[test]
fn scenario_hash_ignores_comments_and_key_order() {
    let a = parse_scenario(DESK, "a").unwrap();
    let reordered = DESK.replace(
        "range = 1.0\nnoise_coeff = 0.25",
        "noise_coeff = 0.25 # per metre\nrange = 1.0",
    );
    let b = parse_scenario(&reordered, "b").unwrap();
    assert_eq!(scenario_hash(&a), scenario_hash(&b));
    assert_eq!(scenario_hash(&a).len(), 64);
    let c = parse_scenario(&DESK.replace("delta = 1.8e-5", "delta = 2e-5"), "c").unwrap();
    assert_ne!(scenario_hash(&a), scenario_hash(&c));
}

#[test]
fn plan_record_is_reproducible_and_replays() {
    let s = load_bundled("desk").unwrap();
    let a = cmd_plan(&s, PlannerKind::Distributed, 3, 2000).unwrap();
    let b = cmd_plan(&s, PlannerKind::Distributed, 3, 2000).unwrap();
    assert_eq!(to_json(&a.record), to_json(&b.record));
    assert_eq!(a.record.status, RunStatus::Ok);

    let parsed: RunRecord = serde_json::from_str(&to_json(&a.record)).unwrap();
    let (report, rows) = cmd_replay(&parsed, &s).unwrap();
    assert!(report.relative_error <= 1e-9, "{report:?}");

    let plan = a.record.plan.as_ref().unwrap();
    let horizon = plan.horizon as usize;
    assert_eq!(rows.len(), s.n_targets() * (horizon + 1));
    let csv = to_csv(&uncertainty_rows(plan, &s, &a.record.graph, 3)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("graph,seed,robot,target,t,det,delta"));
    assert_eq!(lines.count(), s.robots.len() * s.n_targets() * (horizon + 1));
}

#[test]
fn replay_rejects_other_scenarios() {
    let s = load_bundled("desk").unwrap();
    let run = cmd_plan(&s, PlannerKind::Distributed, 0, 2000).unwrap();
    let other = parse_scenario(&DESK.replace("delta = 1.8e-5", "delta = 2e-5"), "other").unwrap();
    let err = cmd_replay(&run.record, &other).unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn bench_has_one_row_per_cell_and_planner() {
    let s = load_bundled("desk_team").unwrap();
    let cells: Vec<BenchCell> = [(2, 2), (3, 3)]
        .into_iter()
        .map(|(n, m)| BenchCell {
            n_robots: n,
            n_targets: m,
            graph: GraphSpec::Full,
        })
        .collect();
    let planners = [PlannerKind::Distributed, PlannerKind::Central];
    let (rows, trials) = cmd_bench(&s, &cells, &planners, 2, 0, 30).unwrap();
    assert_eq!(rows.len(), cells.len() * planners.len());
    assert_eq!(trials.len(), cells.len() * planners.len() * 2);
}

#[test]
fn binary_writes_outputs() {
    let out = scratch("plan");
    let status = bin()
        .args(["plan", "--seed", "1", "--scenario"])
        .arg(scenario_path("desk"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let record: RunRecord = serde_json::from_str(&read(&out, "plan.json")).unwrap();
    assert_eq!(record.status, RunStatus::Ok);
    let meta: serde_json::Value = serde_json::from_str(&read(&out, "run_meta.json")).unwrap();
    assert!(meta["wall_seconds"].as_f64().unwrap() >= 0.0);
    assert!(read(&out, "uncertainty.csv").starts_with("graph,seed,robot,target,t,det,delta"));

    let replay = bin()
        .args(["replay", "--scenario"])
        .arg(scenario_path("desk"))
        .arg("--plan")
        .arg(out.join("plan.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
}

#[test]
fn binary_exit_codes() {
    let out = scratch("codes");
    let starved = bin()
        .args(["plan", "--n-max", "2", "--scenario"])
        .arg(scenario_path("desk"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(starved.status.code(), Some(2));
    let record: RunRecord = serde_json::from_str(&read(&out, "plan.json")).unwrap();
    assert_eq!(record.status, RunStatus::NoPlan);

    let missing = bin()
        .args(["plan", "--scenario", "/nonexistent.toml", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));

    let replay = bin()
        .args(["replay", "--scenario"])
        .arg(scenario_path("enumeration"))
        .arg("--plan")
        .arg(out.join("plan.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(replay.status.code(), Some(1));
}
