//! Experiment description: the serializable schema and its validated form.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::WeightScheme;
use crate::bias::BiasParams;
use crate::commgraph::GraphSpec;
use crate::env::{Position, Rect, Workspace};
use crate::error::{Error, Result};
use crate::models::{MotionPrimitive, RobotPose, SensorModel, TargetModel};

/// Uncertainty threshold used when a scenario does not set one.
pub const DEFAULT_DELTA: f64 = 1.8e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    pub workspace: WorkspaceSpec,
    pub robots: Vec<RobotSpec>,
    pub motion: MotionSpec,
    pub sensor: SensorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdSpec>,
    pub targets: Vec<TargetSpec>,
    #[serde(default = "default_graph")]
    pub graph: GraphSpec,
    #[serde(default)]
    pub dkf: WeightScheme,
    #[serde(default)]
    pub bias: BiasSpec,
    #[serde(default)]
    pub quantization: QuantizationSpec,
    #[serde(default)]
    pub planner: PlannerSpec,
}

fn default_graph() -> GraphSpec {
    GraphSpec::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSpec {
    pub width: f64,
    pub height: f64,
    pub resolution: f64,
    #[serde(default)]
    pub obstacles: Vec<Rect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    /// x, y in meters and heading in radians.
    pub pose: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Linear speeds (m/s), crossed with `turn_rates_deg`.
    #[serde(default)]
    pub speeds: Vec<f64>,
    /// Turn rates in degrees per second.
    #[serde(default)]
    pub turn_rates_deg: Vec<f64>,
    /// Explicit (v, omega in rad/s) pairs, appended after the grid.
    #[serde(default)]
    pub primitives: Vec<[f64; 2]>,
}

fn default_dt() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub range: f64,
    pub noise_coeff: f64,
    #[serde(default = "default_min_distance")]
    pub min_distance: f64,
}

fn default_min_distance() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub prior_mean: Vec<f64>,
    pub prior_cov: Vec<Vec<f64>>,
    /// State transition, identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
    /// Mean of the process noise per step, zero when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<f64>>,
    /// Process noise covariance, zero when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_noise: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSpec {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_p_v")]
    pub p_v: f64,
    #[serde(default = "default_p_u")]
    pub p_u: f64,
    #[serde(default = "default_p_s")]
    pub p_s: f64,
}

fn default_p_v() -> f64 {
    BiasParams::default().p_v
}

fn default_p_u() -> f64 {
    BiasParams::default().p_u
}

fn default_p_s() -> f64 {
    BiasParams::default().p_s
}

impl Default for BiasSpec {
    fn default() -> Self {
        let p = BiasParams::default();
        Self {
            enabled: false,
            p_v: p.p_v,
            p_u: p.p_u,
            p_s: p.p_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizationSpec {
    /// Position cell for pose grouping; the workspace resolution when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<f64>,
    #[serde(default = "default_heading_deg")]
    pub heading_deg: f64,
}

fn default_heading_deg() -> f64 {
    1.0
}

impl Default for QuantizationSpec {
    fn default() -> Self {
        Self {
            position: None,
            heading_deg: default_heading_deg(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSpec {
    #[serde(default = "default_n_max")]
    pub n_max: u32,
    /// Nodes at this depth are never expanded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<u32>,
    /// Most group members expanded in one iteration, drawn uniformly when the group is
    /// larger; 0 expands every member.
    #[serde(default = "default_group_cap")]
    pub max_group_expansion: u32,
}

fn default_group_cap() -> u32 {
    32
}

fn default_n_max() -> u32 {
    2000
}

impl Default for PlannerSpec {
    fn default() -> Self {
        Self {
            n_max: default_n_max(),
            max_depth: None,
            max_group_expansion: default_group_cap(),
        }
    }
}

/// Tolerances for grouping poses: positions are rounded to `position` meters and
/// headings to `heading` radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantization {
    pub position: f64,
    pub heading: f64,
}

pub type PoseKey = (i64, i64, i64);

impl Quantization {
    pub fn key(&self, p: &RobotPose) -> PoseKey {
        let turns = (2.0 * std::f64::consts::PI / self.heading).round() as i64;
        let h = (p.theta / self.heading).round() as i64;
        (
            (p.x / self.position).round() as i64,
            (p.y / self.position).round() as i64,
            h.rem_euclid(turns.max(1)),
        )
    }
}

/// Validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub workspace: Workspace,
    pub robots: Vec<RobotPose>,
    pub primitives: Vec<MotionPrimitive>,
    pub dt: f64,
    pub sensor: SensorModel,
    pub targets: Vec<TargetModel>,
    /// Per-target determinant thresholds.
    pub deltas: Vec<f64>,
    pub graph: GraphSpec,
    pub weights: WeightScheme,
    pub bias: Option<BiasParams>,
    pub quantization: Quantization,
    pub n_max: u32,
    pub max_depth: Option<u32>,
    pub group_cap: Option<usize>,
    spec: ScenarioSpec,
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument(format!("{field} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied()))
}

impl Scenario {
    pub fn from_spec(spec: ScenarioSpec) -> Result<Self> {
        let ws_spec = &spec.workspace;
        let workspace = Workspace::new(
            ws_spec.width,
            ws_spec.height,
            ws_spec.resolution,
            ws_spec.obstacles.clone(),
        )
        .map_err(|e| field_error("workspace", e))?;

        if spec.robots.is_empty() {
            return Err(Error::InvalidArgument("robots: at least one robot is required".into()));
        }
        let robots: Vec<RobotPose> = spec
            .robots
            .iter()
            .map(|r| RobotPose::new(r.pose[0], r.pose[1], r.pose[2]))
            .collect();
        for (i, r) in robots.iter().enumerate() {
            if !workspace.is_free(&r.position()) {
                return Err(Error::InvalidArgument(format!(
                    "robots[{i}].pose: ({}, {}) is not in free space",
                    r.x, r.y
                )));
            }
        }

        let motion = &spec.motion;
        if !(motion.dt > 0.0) {
            return Err(Error::InvalidArgument("motion.dt must be positive".into()));
        }
        let turn_rates: Vec<f64> = motion.turn_rates_deg.iter().map(|d| d.to_radians()).collect();
        let mut primitives = crate::models::primitive_grid(&motion.speeds, &turn_rates);
        primitives.extend(motion.primitives.iter().map(|p| MotionPrimitive::new(p[0], p[1])));
        if primitives.is_empty() {
            return Err(Error::InvalidArgument(
                "motion: the primitive set is empty (give speeds and turn_rates_deg, or primitives)".into(),
            ));
        }

        let sensor = SensorModel::new(spec.sensor.range, spec.sensor.noise_coeff, spec.sensor.min_distance)
            .map_err(|e| field_error("sensor", e))?;

        if spec.targets.is_empty() {
            return Err(Error::InvalidArgument("targets: at least one target is required".into()));
        }
        let default_delta = match &spec.thresholds {
            Some(t) => t.delta,
            None => DEFAULT_DELTA,
        };
        let mut targets = Vec::with_capacity(spec.targets.len());
        let mut deltas = Vec::with_capacity(spec.targets.len());
        for (l, t) in spec.targets.iter().enumerate() {
            let field = |name: &str| format!("targets[{l}].{name}");
            let dim = t.prior_mean.len();
            if dim < 2 {
                return Err(Error::InvalidArgument(format!(
                    "{}: target state must hold at least a 2-D position",
                    field("prior_mean")
                )));
            }
            let pos = Position::new(t.prior_mean[0], t.prior_mean[1]);
            if !workspace.in_bounds(&pos) {
                return Err(Error::InvalidArgument(format!(
                    "{}: target prior lies outside the workspace",
                    field("prior_mean")
                )));
            }
            let transition = match &t.transition {
                Some(rows) => matrix(rows, &field("transition"))?,
                None => DMatrix::identity(dim, dim),
            };
            let drift = match &t.drift {
                Some(d) => DVector::from_column_slice(d),
                None => DVector::zeros(dim),
            };
            let process_noise = match &t.process_noise {
                Some(rows) => matrix(rows, &field("process_noise"))?,
                None => DMatrix::zeros(dim, dim),
            };
            let prior_cov = matrix(&t.prior_cov, &field("prior_cov"))?;
            let model = TargetModel::new(
                transition,
                drift,
                process_noise,
                DVector::from_column_slice(&t.prior_mean),
                prior_cov,
            )
            .map_err(|e| Error::InvalidArgument(format!("targets[{l}]: {e}")))?;
            let delta = t.delta.unwrap_or(default_delta);
            if !(delta > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{}: threshold must be positive, got {delta}",
                    field("delta")
                )));
            }
            targets.push(model);
            deltas.push(delta);
        }
        if spec.thresholds.as_ref().is_some_and(|t| !(t.delta > 0.0)) {
            return Err(Error::InvalidArgument("thresholds.delta: must be positive".into()));
        }

        spec.graph
            .build(robots.len())
            .map_err(|e| field_error("graph", e))?;
        spec.dkf.validate().map_err(|e| field_error("dkf", e))?;
        let bias = if spec.bias.enabled {
            Some(BiasParams::new(spec.bias.p_v, spec.bias.p_u, spec.bias.p_s).map_err(|e| field_error("bias", e))?)
        } else {
            None
        };
        let quantization = Quantization {
            position: spec.quantization.position.unwrap_or(workspace.resolution()),
            heading: spec.quantization.heading_deg.to_radians(),
        };
        if !(quantization.position > 0.0 && quantization.heading > 0.0) {
            return Err(Error::InvalidArgument("quantization: tolerances must be positive".into()));
        }

        Ok(Self {
            name: spec.name.clone(),
            workspace,
            robots,
            primitives,
            dt: motion.dt,
            sensor,
            targets,
            deltas,
            graph: spec.graph.clone(),
            weights: spec.dkf,
            bias,
            quantization,
            n_max: spec.planner.n_max,
            max_depth: spec.planner.max_depth,
            group_cap: match spec.planner.max_group_expansion {
                0 => None,
                c => Some(c as usize),
            },
            spec,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn log_deltas(&self) -> Vec<f64> {
        self.deltas.iter().map(|d| d.ln()).collect()
    }

    pub fn with_graph(&self, graph: GraphSpec) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.graph = graph;
        Self::from_spec(spec)
    }

    pub fn with_bias(&self, enabled: bool) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.bias.enabled = enabled;
        Self::from_spec(spec)
    }

    /// Copy of this scenario with `n_robots` robots and `n_targets` targets placed
    /// uniformly at random in free space. Robot and target models are cloned from the
    /// first entries of the template.
    pub fn with_team(&self, n_robots: usize, n_targets: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = self.spec.clone();
        let margin = self.workspace.resolution();
        let free_point = |rng: &mut ChaCha8Rng| -> Result<Position> {
            for _ in 0..10_000 {
                let p = Position::new(
                    rng.random_range(margin..self.workspace.width() - margin),
                    rng.random_range(margin..self.workspace.height() - margin),
                );
                if self.workspace.is_free(&p) {
                    return Ok(p);
                }
            }
            Err(Error::InvalidArgument("could not sample a free position".into()))
        };
        let robot_template = spec.robots[0].clone();
        spec.robots = (0..n_robots)
            .map(|_| {
                let p = free_point(&mut rng)?;
                let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let mut r = robot_template.clone();
                r.pose = [p.x, p.y, theta];
                Ok(r)
            })
            .collect::<Result<_>>()?;
        let target_template = spec.targets[0].clone();
        spec.targets = (0..n_targets)
            .map(|_| {
                let p = free_point(&mut rng)?;
                let mut t = target_template.clone();
                t.prior_mean[0] = p.x;
                t.prior_mean[1] = p.y;
                Ok(t)
            })
            .collect::<Result<_>>()?;
        Self::from_spec(spec)
    }
}

fn field_error(field: &str, e: Error) -> Error {
    Error::InvalidArgument(format!("{field}: {e}"))
}
