//! Covariance-form re-simulation of plans, independent of the information-form
//! arithmetic used while planning.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::extract::{PlanResult, PlannerKind, ProvenanceNode};
use super::tree::NodeId;
use crate::belief::{more_certain, WeightScheme};
use crate::commgraph::CommGraph;
use crate::env::Position;
use crate::error::{Error, Result};
use crate::models::{observe, RobotPose};
use crate::scenario::Scenario;

#[derive(Debug, Clone)]
struct Gauss {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

type Belief = Vec<Gauss>;

fn prior(s: &Scenario) -> Belief {
    s.targets
        .iter()
        .map(|t| Gauss {
            mean: t.prior_mean.clone(),
            cov: t.prior_cov.clone(),
        })
        .collect()
}

fn predict(s: &Scenario, b: &Belief) -> Belief {
    b.iter()
        .zip(&s.targets)
        .map(|(g, t)| {
            let a = &t.transition;
            let cov = a * &g.cov * a.transpose() + &t.process_noise;
            Gauss {
                mean: a * &g.mean + &t.drift,
                cov: (&cov + cov.transpose()) * 0.5,
            }
        })
        .collect()
}

fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalDomain("singular matrix during replay".into()))
}

fn det(g: &Gauss) -> f64 {
    g.cov.determinant()
}

fn log_det(g: &Gauss) -> f64 {
    det(g).ln()
}

fn position(g: &Gauss) -> Position {
    Position::new(g.mean[0], g.mean[1])
}

/// Fusion weights (own, per neighbor) for one target block.
fn block_weights(scheme: &WeightScheme, own: &Gauss, neighbors: &[&Gauss]) -> (f64, Vec<f64>) {
    let n = neighbors.len();
    if n == 0 {
        return (1.0, Vec::new());
    }
    let mine = log_det(own);
    let beaten = neighbors.iter().any(|g| more_certain(log_det(g), mine));
    match *scheme {
        WeightScheme::Fixed { self_weight } => (self_weight, vec![(1.0 - self_weight) / n as f64; n]),
        WeightScheme::Adaptive { confident } => {
            let w = if beaten { 1.0 - confident } else { confident };
            (w, vec![(1.0 - w) / n as f64; n])
        }
        WeightScheme::Pairwise { confident } => {
            let low = (1.0 - confident) / n as f64;
            let raw: Vec<f64> = neighbors
                .iter()
                .map(|g| if more_certain(log_det(g), mine) { confident } else { low })
                .collect();
            let own_raw = if beaten { low } else { confident };
            let total = own_raw + raw.iter().sum::<f64>();
            (own_raw / total, raw.iter().map(|k| k / total).collect())
        }
    }
}

/// One DKF step in covariance form from already predicted inputs.
fn dkf_step(s: &Scenario, own: &Belief, neighbors: &[&Belief], pose: &RobotPose) -> Result<Belief> {
    let mut out = Vec::with_capacity(own.len());
    for l in 0..own.len() {
        let nb: Vec<&Gauss> = neighbors.iter().map(|b| &b[l]).collect();
        let (w_own, w_nb) = block_weights(&s.weights, &own[l], &nb);
        let own_info = inverse(&own[l].cov)?;
        let mut info = &own_info * w_own;
        let mut vec = &own_info * &own[l].mean * w_own;
        for (g, w) in nb.iter().zip(w_nb) {
            let i = inverse(&g.cov)?;
            vec += &i * &g.mean * w;
            info += i * w;
        }
        let dim = own[l].mean.len();
        if let Some(m) = observe(&s.sensor, &s.workspace, pose, &position(&own[l]), dim) {
            let h = &m.jacobian;
            info += h * h.transpose() / m.variance;
            vec += h * (h.dot(&own[l].mean) + m.innovation) / m.variance;
        }
        let cov = inverse(&info)?;
        let mean = &cov * vec;
        out.push(Gauss {
            mean,
            cov: (&cov + cov.transpose()) * 0.5,
        });
    }
    Ok(out)
}

/// Centralized KF step: prediction already applied, measurements of every robot added.
fn central_step(s: &Scenario, pred: &Belief, poses: &[RobotPose]) -> Result<Belief> {
    let mut out = Vec::with_capacity(pred.len());
    for g in pred {
        let mut info = inverse(&g.cov)?;
        let mut vec = &info * &g.mean;
        for p in poses {
            if let Some(m) = observe(&s.sensor, &s.workspace, p, &position(g), g.mean.len()) {
                let h = &m.jacobian;
                info += h * h.transpose() / m.variance;
                vec += h * (h.dot(&g.mean) + m.innovation) / m.variance;
            }
        }
        let cov = inverse(&info)?;
        out.push(Gauss {
            mean: &cov * vec,
            cov: (&cov + cov.transpose()) * 0.5,
        });
    }
    Ok(out)
}

fn block_dets(b: &Belief) -> Vec<f64> {
    b.iter().map(det).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub total_cost: f64,
    /// Per robot path cost.
    pub costs: Vec<f64>,
    /// `[robot][t][target]` covariance determinants.
    pub dets: Vec<Vec<Vec<f64>>>,
}

struct Recompute<'a> {
    scenario: &'a Scenario,
    graph: CommGraph,
    index: Vec<HashMap<NodeId, &'a ProvenanceNode>>,
    memo: HashMap<(usize, NodeId), Belief>,
}

impl Recompute<'_> {
    fn posterior(&mut self, robot: usize, id: NodeId) -> Result<Belief> {
        if let Some(b) = self.memo.get(&(robot, id)) {
            return Ok(b.clone());
        }
        let node = *self.index[robot].get(&id).ok_or_else(|| {
            Error::InvalidArgument(format!("plan provenance lacks node {id} of robot {robot}"))
        })?;
        let belief = match node.parent {
            None => prior(self.scenario),
            Some(parent) => {
                let own = predict(self.scenario, &self.posterior(robot, parent)?);
                let neighbors = self.graph.neighbors(robot)?.to_vec();
                if node.s_set.len() != neighbors.len() {
                    return Err(Error::InvalidArgument(format!(
                        "node {id} of robot {robot} references {} neighbors, the graph has {}",
                        node.s_set.len(),
                        neighbors.len()
                    )));
                }
                let mut inputs = Vec::with_capacity(neighbors.len());
                for (&j, &r) in neighbors.iter().zip(&node.s_set) {
                    inputs.push(predict(self.scenario, &self.posterior(j, r)?));
                }
                let refs: Vec<&Belief> = inputs.iter().collect();
                dkf_step(self.scenario, &own, &refs, &node.pose)?
            }
        };
        self.memo.insert((robot, id), belief.clone());
        Ok(belief)
    }
}

/// Recompute every robot's per-step determinants and the team cost of `plan` from the
/// priors.
pub fn replay_cost_oracle(plan: &PlanResult, scenario: &Scenario) -> Result<Replay> {
    let n = scenario.n_robots();
    if plan.robots.len() != n {
        return Err(Error::InvalidArgument(format!(
            "plan covers {} robots, scenario has {n}",
            plan.robots.len()
        )));
    }
    let dets: Vec<Vec<Vec<f64>>> = match plan.planner {
        PlannerKind::Distributed => {
            if plan.provenance.len() != n {
                return Err(Error::InvalidArgument("plan carries no provenance".into()));
            }
            let mut r = Recompute {
                scenario,
                graph: scenario.graph.build(n)?,
                index: plan
                    .provenance
                    .iter()
                    .map(|nodes| nodes.iter().map(|p| (p.id, p)).collect())
                    .collect(),
                memo: HashMap::new(),
            };
            plan.robots
                .iter()
                .map(|path| {
                    path.nodes
                        .iter()
                        .map(|&id| Ok(block_dets(&r.posterior(path.robot, id)?)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?
        }
        PlannerKind::Central => {
            let steps = plan.horizon as usize + 1;
            let joint: Vec<Vec<RobotPose>> = (0..steps)
                .map(|t| plan.robots.iter().map(|r| r.poses[t]).collect())
                .collect();
            let shared = simulate_central_kf(scenario, &joint)?;
            vec![shared; n]
        }
    };
    let costs: Vec<f64> = dets
        .iter()
        .map(|steps| steps.iter().map(|d| d.iter().product::<f64>()).sum())
        .collect();
    Ok(Replay {
        total_cost: costs.iter().sum(),
        costs,
        dets,
    })
}

/// Centralized KF along a joint pose sequence `[t][robot]`; entry 0 is the prior.
/// Returns `[t][target]` determinants.
pub fn simulate_central_kf(scenario: &Scenario, joint: &[Vec<RobotPose>]) -> Result<Vec<Vec<f64>>> {
    let mut b = prior(scenario);
    let mut out = vec![block_dets(&b)];
    for poses in joint.iter().skip(1) {
        b = central_step(scenario, &predict(scenario, &b), poses)?;
        out.push(block_dets(&b));
    }
    Ok(out)
}

/// DKF along fixed per-robot pose sequences `[robot][t]`, every robot fusing its
/// graph neighbors' beliefs from the previous step. Returns `[robot][t][target]`.
pub fn simulate_team_dkf(
    scenario: &Scenario,
    graph: &CommGraph,
    paths: &[Vec<RobotPose>],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = paths.len();
    let steps = paths.first().map_or(0, |p| p.len());
    let mut beliefs: Vec<Belief> = vec![prior(scenario); n];
    let mut out: Vec<Vec<Vec<f64>>> = beliefs.iter().map(|b| vec![block_dets(b)]).collect();
    for t in 1..steps {
        let predicted: Vec<Belief> = beliefs.iter().map(|b| predict(scenario, b)).collect();
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let nb: Vec<&Belief> = graph.neighbors(i)?.iter().map(|&j| &predicted[j]).collect();
            next.push(dkf_step(scenario, &predicted[i], &nb, &paths[i][t])?);
        }
        beliefs = next;
        for (i, b) in beliefs.iter().enumerate() {
            out[i].push(block_dets(b));
        }
    }
    Ok(out)
}
