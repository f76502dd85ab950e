//! Target-tracking mass functions for group, control and neighbor-node sampling,
//! plus greedy on-the-fly target assignment.
//!
//! Every distribution here keeps a strictly positive floor on each admissible
//! outcome, which is what the completeness argument needs from the samplers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::DistanceField;
use crate::error::{Error, Result};
use crate::models::{step_pose, MotionPrimitive, RobotPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasParams {
    pub p_v: f64,
    pub p_u: f64,
    pub p_s: f64,
}

impl Default for BiasParams {
    fn default() -> Self {
        Self {
            p_v: 0.7,
            p_u: 0.6,
            p_s: 0.8,
        }
    }
}

impl BiasParams {
    pub fn new(p_v: f64, p_u: f64, p_s: f64) -> Result<Self> {
        let p = Self { p_v, p_u, p_s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_v", self.p_v), ("p_u", self.p_u), ("p_s", self.p_s)] {
            if !(v > 0.5 && v < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "bias parameter {name} must lie in (0.5, 1), got {v}"
                )));
            }
        }
        Ok(())
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Group masses favouring groups that hold a node at the deepest tree level.
///
/// `group_max_depth[k]` is the deepest node of group `k`; `tree_depth` the deepest
/// node overall. When every group is at the deepest level the masses are uniform.
pub fn group_masses(group_max_depth: &[u32], tree_depth: u32, p_v: f64) -> Vec<f64> {
    let k = group_max_depth.len();
    let deepest = group_max_depth.iter().filter(|&&d| d == tree_depth).count();
    if deepest == 0 || deepest == k {
        return uniform(k);
    }
    let on = p_v / deepest as f64;
    let off = (1.0 - p_v) / (k - deepest) as f64;
    group_max_depth
        .iter()
        .map(|&d| if d == tree_depth { on } else { off })
        .collect()
}

/// Preferred outcome gets `p + (1 - p) / n`, every other outcome `(1 - p) / n`.
pub fn preferred_masses(n: usize, preferred: usize, p: f64) -> Vec<f64> {
    let floor = (1.0 - p) / n as f64;
    let mut masses = vec![floor; n];
    masses[preferred] += p;
    masses
}

/// Index of the primitive whose successor lies closest (geodesically) to the
/// field's source, with the distance. Ties go to the lowest index.
pub fn closest_primitive(
    pose: &RobotPose,
    primitives: &[MotionPrimitive],
    field: &DistanceField,
    dt: f64,
) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (idx, u) in primitives.iter().enumerate() {
        let d = field.distance_or_inf(&step_pose(pose, u, dt).position());
        if d < best.1 {
            best = (idx, d);
        }
    }
    best
}

/// Control masses steering toward a target whose predicted position sources `field`.
///
/// Uniform once the best reachable distance is within `sensing_range`, or when no
/// successor can reach the target at all.
pub fn control_masses(
    pose: &RobotPose,
    primitives: &[MotionPrimitive],
    field: &DistanceField,
    sensing_range: f64,
    p_u: f64,
    dt: f64,
) -> Vec<f64> {
    let (best, distance) = closest_primitive(pose, primitives, field, dt);
    if distance.is_finite() && distance > sensing_range {
        preferred_masses(primitives.len(), best, p_u)
    } else {
        uniform(primitives.len())
    }
}

/// Candidate masses favouring the smallest covariance determinant. Candidates are in
/// ascending node-id order, so ties resolve to the lowest id.
pub fn candidate_masses(candidate_log_dets: &[f64], p_s: f64) -> Vec<f64> {
    let best = argmin(candidate_log_dets);
    preferred_masses(candidate_log_dets.len(), best, p_s)
}

pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Target indices ordered by increasing distance, ties by index.
pub fn sort_targets(distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    order
}

/// Greedy target assignment: the nearest target that is neither satisfied nor taken
/// by a sampled neighbor node, falling back to the parent's assignment.
pub fn assign_target(sorted: &[usize], satisfied: &[bool], occupied: &[usize], parent_assignment: usize) -> usize {
    sorted
        .iter()
        .copied()
        .filter(|&l| !satisfied[l])
        .find(|l| !occupied.contains(l))
        .unwrap_or(parent_assignment)
}

/// Draw an index from a discrete distribution with one uniform variate.
pub fn sample_index<R: Rng + ?Sized>(masses: &[f64], rng: &mut R) -> usize {
    debug_assert!(!masses.is_empty());
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, m) in masses.iter().enumerate() {
        acc += m;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum
    masses.iter().rposition(|&m| m > 0.0).unwrap_or(0)
}
