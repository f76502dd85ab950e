//! Robot, target and sensor models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{Position, Workspace};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, is_symmetric, symmetrize};

/// Wrap an angle into (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl RobotPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Position {
        Position::new(self.x, self.y)
    }
}

/// Constant (linear, angular) velocity applied for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionPrimitive {
    pub v: f64,
    pub omega: f64,
}

impl MotionPrimitive {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

/// Cartesian product of linear speeds and turn rates (rad/s), speed-major.
pub fn primitive_grid(speeds: &[f64], turn_rates: &[f64]) -> Vec<MotionPrimitive> {
    speeds
        .iter()
        .flat_map(|&v| turn_rates.iter().map(move |&w| MotionPrimitive::new(v, w)))
        .collect()
}

/// Unicycle step: translate along the current heading, then turn.
pub fn step_pose(p: &RobotPose, u: &MotionPrimitive, dt: f64) -> RobotPose {
    RobotPose {
        x: p.x + u.v * dt * p.theta.cos(),
        y: p.y + u.v * dt * p.theta.sin(),
        theta: normalize_angle(p.theta + u.omega * dt),
    }
}

/// Linear Gaussian target: `x' = A x + w`, `w ~ N(d, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    pub transition: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub process_noise: DMatrix<f64>,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
}

impl TargetModel {
    pub fn new(
        transition: DMatrix<f64>,
        drift: DVector<f64>,
        process_noise: DMatrix<f64>,
        prior_mean: DVector<f64>,
        prior_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let n = transition.nrows();
        if !transition.is_square()
            || drift.len() != n
            || process_noise.shape() != (n, n)
            || prior_mean.len() != n
            || prior_cov.shape() != (n, n)
        {
            return Err(Error::InvalidArgument(format!(
                "target model dimensions disagree (state dimension {n})"
            )));
        }
        if !is_symmetric(&process_noise, 1e-12) {
            return Err(Error::InvalidArgument("process noise must be symmetric".into()));
        }
        // PSD check: Q + tiny * I must factor
        let jitter = DMatrix::identity(n, n) * 1e-12 * (1.0 + process_noise.amax());
        cholesky(&(&process_noise + jitter), "process noise")
            .map_err(|_| Error::InvalidArgument("process noise must be positive semidefinite".into()))?;
        if !is_symmetric(&prior_cov, 1e-12) {
            return Err(Error::InvalidArgument("prior covariance must be symmetric".into()));
        }
        cholesky(&prior_cov, "prior covariance")
            .map_err(|_| Error::InvalidArgument("prior covariance must be positive definite".into()))?;
        Ok(Self {
            transition,
            drift,
            process_noise,
            prior_mean,
            prior_cov,
        })
    }

    /// Static 2-D target with a small process noise floor.
    pub fn static_position(mean: [f64; 2], prior_var: f64, noise_floor: f64) -> Self {
        Self::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2) * noise_floor,
            DVector::from_row_slice(&mean),
            DMatrix::identity(2, 2) * prior_var,
        )
        .expect("static target model is valid")
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }
}

pub fn predict_target(
    m: &TargetModel,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    cholesky(cov, "covariance before prediction")?;
    let a = &m.transition;
    let mean_next = a * mean + &m.drift;
    let mut cov_next = a * cov * a.transpose() + &m.process_noise;
    symmetrize(&mut cov_next);
    cholesky(&cov_next, "predicted covariance")?;
    Ok((mean_next, cov_next))
}

/// Omnidirectional range-only sensor with distance-proportional noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub range: f64,
    pub noise_coeff: f64,
    pub min_distance: f64,
}

impl SensorModel {
    pub fn new(range: f64, noise_coeff: f64, min_distance: f64) -> Result<Self> {
        if !(range > 0.0 && noise_coeff > 0.0 && min_distance > 0.0) {
            return Err(Error::InvalidArgument(
                "sensor range, noise coefficient and min distance must be positive".into(),
            ));
        }
        Ok(Self {
            range,
            noise_coeff,
            min_distance,
        })
    }
}

/// Linearized scalar measurement of one target block.
///
/// `innovation` is `y - jacobian . mean` evaluated at the linearization point; planning
/// uses the expected measurement, so it is zero there.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub jacobian: DVector<f64>,
    pub variance: f64,
    pub innovation: f64,
}

/// Range measurement Jacobian and noise at `pose` for a target predicted at `target_mean`.
///
/// `state_dim` is the dimension of the target block; position is its first two entries.
pub fn observe(
    sensor: &SensorModel,
    ws: &Workspace,
    pose: &RobotPose,
    target_mean: &Position,
    state_dim: usize,
) -> Option<Measurement> {
    let robot = pose.position();
    let offset = target_mean - robot;
    let l = offset.norm().max(sensor.min_distance);
    if l > sensor.range {
        return None;
    }
    if !ws.in_bounds(target_mean) || !ws.segment_clear(&robot, target_mean) {
        return None;
    }
    // unit direction, with an arbitrary fixed direction when the target sits on the robot
    let dir = if offset.norm() > 0.0 {
        offset / offset.norm()
    } else {
        Position::new(1.0, 0.0)
    };
    let mut jacobian = DVector::zeros(state_dim);
    jacobian[0] = dir.x;
    jacobian[1] = dir.y;
    let sigma = sensor.noise_coeff * l;
    Some(Measurement {
        jacobian,
        variance: sigma * sigma,
        innovation: 0.0,
    })
}
