//! Information-form Gaussian beliefs over independent target blocks and the
//! distributed Kalman filter fusion rule.
//!
//! A belief stores, per target, the information matrix `omega = Sigma^-1` and the
//! mean. The full covariance is block diagonal, so its determinant is the product
//! of block determinants; every determinant is carried in log space and only
//! exponentiated on request.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{chol_log_det, cholesky, symmetrize};
use crate::models::{predict_target, Measurement, TargetModel};

/// Tolerance on the unit sum of fusion weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A neighbor counts as more certain only when its block log det is lower by more than
/// this. Fused beliefs are often equal up to rounding, and without a margin the
/// comparison would flip between numerically equivalent filter forms.
pub const CONFIDENCE_MARGIN: f64 = 1e-9;

pub fn more_certain(log_det: f64, own_log_det: f64) -> bool {
    log_det < own_log_det - CONFIDENCE_MARGIN
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoBlock {
    omega: DMatrix<f64>,
    mean: DVector<f64>,
    /// log det of the covariance, i.e. `-log det omega`.
    log_det_cov: f64,
}

impl InfoBlock {
    pub fn new(mut omega: DMatrix<f64>, mean: DVector<f64>) -> Result<Self> {
        if !omega.is_square() || omega.nrows() != mean.len() {
            return Err(Error::InvalidArgument(format!(
                "information matrix {:?} does not match mean of length {}",
                omega.shape(),
                mean.len()
            )));
        }
        symmetrize(&mut omega);
        let chol = cholesky(&omega, "information matrix")?;
        let log_det_cov = -chol_log_det(&chol);
        Ok(Self {
            omega,
            mean,
            log_det_cov,
        })
    }

    pub fn from_covariance(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let mut omega = cholesky(cov, "covariance")?.inverse();
        symmetrize(&mut omega);
        Self::new(omega, mean)
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mut cov = cholesky(&self.omega, "information matrix")
            .expect("block invariant: omega is PD")
            .inverse();
        symmetrize(&mut cov);
        cov
    }

    pub fn log_det_cov(&self) -> f64 {
        self.log_det_cov
    }

    pub fn det_cov(&self) -> f64 {
        self.log_det_cov.exp()
    }
}

/// Belief over all targets, one block per target.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoBelief {
    blocks: Vec<InfoBlock>,
}

impl InfoBelief {
    pub fn new(blocks: Vec<InfoBlock>) -> Self {
        Self { blocks }
    }

    pub fn from_priors(targets: &[TargetModel]) -> Result<Self> {
        targets
            .iter()
            .map(|t| InfoBlock::from_covariance(t.prior_mean.clone(), &t.prior_cov))
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    pub fn blocks(&self) -> &[InfoBlock] {
        &self.blocks
    }

    pub fn block(&self, target: usize) -> &InfoBlock {
        &self.blocks[target]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// det of the covariance block of `target`.
    pub fn block_det(&self, target: usize) -> f64 {
        self.blocks[target].det_cov()
    }

    pub fn block_log_det(&self, target: usize) -> f64 {
        self.blocks[target].log_det_cov
    }

    pub fn full_log_det(&self) -> f64 {
        self.blocks.iter().map(|b| b.log_det_cov).sum()
    }

    /// det of the block-diagonal covariance, `exp(sum of block log dets)`.
    pub fn full_det(&self) -> f64 {
        self.full_log_det().exp()
    }

    fn same_structure(&self, other: &InfoBelief) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.dim() == b.dim())
    }
}

/// Convex fusion weights of one robot for one target block: own weight first,
/// then one weight per neighbor in neighbor order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkfWeights {
    self_weight: f64,
    neighbor_weights: Vec<f64>,
}

impl DkfWeights {
    pub fn new(self_weight: f64, neighbor_weights: Vec<f64>) -> Result<Self> {
        let all_positive = self_weight > 0.0 && neighbor_weights.iter().all(|&w| w > 0.0);
        let sum = self_weight + neighbor_weights.iter().sum::<f64>();
        if !all_positive || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "fusion weights must be positive and sum to one (self {self_weight}, neighbors {neighbor_weights:?})"
            )));
        }
        Ok(Self {
            self_weight,
            neighbor_weights,
        })
    }

    /// Weights for a robot without neighbors.
    pub fn isolated() -> Self {
        Self {
            self_weight: 1.0,
            neighbor_weights: Vec::new(),
        }
    }

    /// `self_weight` for the robot and the rest split evenly across `n` neighbors.
    pub fn uniform_split(self_weight: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Ok(Self::isolated());
        }
        Self::new(self_weight, vec![(1.0 - self_weight) / n as f64; n])
    }

    pub fn self_weight(&self) -> f64 {
        self.self_weight
    }

    pub fn neighbor_weights(&self) -> &[f64] {
        &self.neighbor_weights
    }
}

/// How a robot picks its fusion weights per target block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightScheme {
    /// Self weight `confident` while no neighbor holds a strictly smaller block
    /// determinant; otherwise the robot keeps `1 - confident` and the neighbors share
    /// `confident`.
    Adaptive { confident: f64 },
    /// Pairwise reading: each party (own or neighbor) gets `confident` when its block
    /// determinant is smaller than the robot's own (own: when nobody beats it),
    /// `(1 - confident) / |N|` otherwise; the weights are then normalized.
    Pairwise { confident: f64 },
    /// Fixed self weight, the remainder split evenly over the neighbors.
    Fixed { self_weight: f64 },
}

impl Default for WeightScheme {
    fn default() -> Self {
        WeightScheme::Adaptive { confident: 0.75 }
    }
}

impl WeightScheme {
    pub fn validate(&self) -> Result<()> {
        let w = match *self {
            WeightScheme::Adaptive { confident } | WeightScheme::Pairwise { confident } => confident,
            WeightScheme::Fixed { self_weight } => self_weight,
        };
        if w > 0.0 && w < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "fusion self weight must lie in (0, 1), got {w}"
            )))
        }
    }

    /// Per-block weights for fusing `own` with `neighbors`.
    pub fn weights(&self, own: &InfoBelief, neighbors: &[&InfoBelief]) -> Result<Vec<DkfWeights>> {
        let n = neighbors.len();
        (0..own.len())
            .map(|l| {
                if n == 0 {
                    return Ok(DkfWeights::isolated());
                }
                match *self {
                    WeightScheme::Fixed { self_weight } => DkfWeights::uniform_split(self_weight, n),
                    WeightScheme::Adaptive { confident } => {
                        let mine = own.block_log_det(l);
                        let beaten = neighbors.iter().any(|b| more_certain(b.block_log_det(l), mine));
                        let self_weight = if beaten { 1.0 - confident } else { confident };
                        DkfWeights::uniform_split(self_weight, n)
                    }
                    WeightScheme::Pairwise { confident } => {
                        let mine = own.block_log_det(l);
                        let low = (1.0 - confident) / n as f64;
                        let better: Vec<bool> = neighbors.iter().map(|b| more_certain(b.block_log_det(l), mine)).collect();
                        let own_raw = if better.contains(&true) { low } else { confident };
                        let nb: Vec<f64> = better.iter().map(|&b| if b { confident } else { low }).collect();
                        let total = own_raw + nb.iter().sum::<f64>();
                        DkfWeights::new(own_raw / total, nb.into_iter().map(|k| k / total).collect())
                    }
                }
            })
            .collect()
    }
}

/// Add measurement information to a block: `omega += H^T R^-1 H`, and the matching
/// information vector term `H^T R^-1 (innovation + H mu_lin)`.
fn measurement_terms(
    omega: &mut DMatrix<f64>,
    info_vec: &mut DVector<f64>,
    linearization_mean: &DVector<f64>,
    m: &Measurement,
) -> Result<()> {
    if m.jacobian.len() != omega.nrows() {
        return Err(Error::InvalidArgument(format!(
            "measurement row of length {} for a block of dimension {}",
            m.jacobian.len(),
            omega.nrows()
        )));
    }
    if !(m.variance > 0.0) {
        return Err(Error::NumericalDomain(format!(
            "measurement variance must be positive, got {}",
            m.variance
        )));
    }
    let h = &m.jacobian;
    let inv_r = 1.0 / m.variance;
    omega.ger(inv_r, h, h, 1.0);
    let y = m.innovation + h.dot(linearization_mean);
    info_vec.axpy(inv_r * y, h, 1.0);
    Ok(())
}

/// Distributed Kalman filter update of `own` with neighbor beliefs and local measurements.
///
/// Per block: `omega' = k_ii omega_own + sum_j k_ij omega_j + sum H^T R^-1 H`, with the
/// information vectors fused the same way. Measurements are linearized about the own mean.
pub fn dkf_update(
    own: &InfoBelief,
    neighbors: &[&InfoBelief],
    weights: &[DkfWeights],
    measurements: &[Option<Measurement>],
) -> Result<InfoBelief> {
    if weights.len() != own.len() || measurements.len() != own.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} weight sets and measurement slots, got {} and {}",
            own.len(),
            weights.len(),
            measurements.len()
        )));
    }
    if neighbors.iter().any(|b| !own.same_structure(b)) {
        return Err(Error::InvalidArgument(
            "neighbor belief block structure differs from own".into(),
        ));
    }
    let mut blocks = Vec::with_capacity(own.len());
    for (l, (w, meas)) in weights.iter().zip(measurements).enumerate() {
        if w.neighbor_weights.len() != neighbors.len() {
            return Err(Error::InvalidArgument(format!(
                "block {l}: {} neighbor weights for {} neighbors",
                w.neighbor_weights.len(),
                neighbors.len()
            )));
        }
        let mine = own.block(l);
        let mut omega = mine.omega() * w.self_weight;
        let mut info_vec = (mine.omega() * mine.mean()) * w.self_weight;
        for (nb, &k) in neighbors.iter().zip(&w.neighbor_weights) {
            let b = nb.block(l);
            omega += b.omega() * k;
            info_vec += (b.omega() * b.mean()) * k;
        }
        if let Some(m) = meas {
            measurement_terms(&mut omega, &mut info_vec, mine.mean(), m)?;
        }
        blocks.push(solve_block(omega, info_vec)?);
    }
    Ok(InfoBelief::new(blocks))
}

/// Add every listed measurement to each block (centralized information update).
pub fn information_update(b: &InfoBelief, measurements: &[Vec<Measurement>]) -> Result<InfoBelief> {
    if measurements.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "{} measurement lists for {} blocks",
            measurements.len(),
            b.len()
        )));
    }
    let mut blocks = Vec::with_capacity(b.len());
    for (block, meas) in b.blocks().iter().zip(measurements) {
        if meas.is_empty() {
            blocks.push(block.clone());
            continue;
        }
        let mut omega = block.omega().clone();
        let mut info_vec = block.omega() * block.mean();
        for m in meas {
            measurement_terms(&mut omega, &mut info_vec, block.mean(), m)?;
        }
        blocks.push(solve_block(omega, info_vec)?);
    }
    Ok(InfoBelief::new(blocks))
}

fn solve_block(mut omega: DMatrix<f64>, info_vec: DVector<f64>) -> Result<InfoBlock> {
    symmetrize(&mut omega);
    let chol = cholesky(&omega, "fused information matrix")?;
    let mean = chol.solve(&info_vec);
    let log_det_cov = -chol_log_det(&chol);
    Ok(InfoBlock {
        omega,
        mean,
        log_det_cov,
    })
}

/// Kalman prediction of every block through its target model.
pub fn dkf_predict(b: &InfoBelief, targets: &[TargetModel]) -> Result<InfoBelief> {
    if targets.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "{} target models for {} belief blocks",
            targets.len(),
            b.len()
        )));
    }
    b.blocks()
        .iter()
        .zip(targets)
        .map(|(block, model)| {
            let cov = cholesky(block.omega(), "information matrix before prediction")?.inverse();
            let (mean, cov) = predict_target(model, block.mean(), &cov)?;
            InfoBlock::from_covariance(mean, &cov)
        })
        .collect::<Result<Vec<_>>>()
        .map(InfoBelief::new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(omega: f64) -> InfoBelief {
        InfoBelief::new(vec![InfoBlock::new(
            DMatrix::from_element(1, 1, omega),
            DVector::zeros(1),
        )
        .unwrap()])
    }

    fn scalar_meas(h: f64, r: f64) -> Measurement {
        Measurement {
            jacobian: DVector::from_element(1, h),
            variance: r,
            innovation: 0.0,
        }
    }

    #[test]
    fn update_examples() {
        let b = dkf_update(
            &scalar(2.0),
            &[],
            &[DkfWeights::isolated()],
            &[Some(scalar_meas(1.0, 0.5))],
        )
        .unwrap();
        assert_relative_eq!(b.block(0).omega()[(0, 0)], 4.0);

        let w = DkfWeights::new(0.5, vec![0.25, 0.25]).unwrap();
        let (n1, n2) = (scalar(4.0), scalar(4.0));
        let b = dkf_update(&scalar(2.0), &[&n1, &n2], &[w.clone()], &[None]).unwrap();
        assert_relative_eq!(b.block(0).omega()[(0, 0)], 3.0);

        let same = scalar(7.5);
        let b = dkf_update(&same, &[&same, &same], &[w], &[None]).unwrap();
        assert_relative_eq!(b.block(0).omega()[(0, 0)], 7.5, epsilon = 1e-14);
    }

    #[test]
    fn update_rejects_mismatched_inputs() {
        let two = InfoBelief::new(vec![
            scalar(1.0).block(0).clone(),
            scalar(1.0).block(0).clone(),
        ]);
        let w = DkfWeights::new(0.5, vec![0.5]).unwrap();
        assert!(matches!(
            dkf_update(&scalar(1.0), &[&two], &[w.clone()], &[None]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            dkf_update(&scalar(1.0), &[], &[w], &[None]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn prediction_examples() {
        let static_model = TargetModel::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let b = scalar(3.0);
        let p = dkf_predict(&b, &[static_model]).unwrap();
        assert_relative_eq!(p.block(0).omega()[(0, 0)], 3.0, epsilon = 1e-14);

        let diffusing = TargetModel::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let p = dkf_predict(&scalar(1.0), &[diffusing]).unwrap();
        assert_relative_eq!(p.block(0).omega()[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn determinant_examples() {
        let b = InfoBelief::new(vec![InfoBlock::new(DMatrix::identity(2, 2) * 4.0, DVector::zeros(2)).unwrap()]);
        assert_relative_eq!(b.block_det(0), 0.0625, epsilon = 1e-15);
        assert_relative_eq!(b.full_det(), b.block_det(0));
        let b = InfoBelief::new(vec![InfoBlock::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap()]);
        assert_relative_eq!(b.block_det(0), 1.0);

        let two = InfoBelief::new(vec![
            InfoBlock::new(DMatrix::from_element(1, 1, 10.0), DVector::zeros(1)).unwrap(),
            InfoBlock::new(DMatrix::from_element(1, 1, 5.0), DVector::zeros(1)).unwrap(),
        ]);
        assert_relative_eq!(two.full_det(), 0.02, epsilon = 1e-15);

        let block = InfoBlock::new(DMatrix::from_element(1, 1, 1.0 / 1.8e-5), DVector::zeros(1)).unwrap();
        let ten = InfoBelief::new(vec![block; 10]);
        let d = ten.full_det();
        assert!(d.is_finite() && d > 0.0);
        assert_relative_eq!(d, 1.8e-5f64.powi(10), max_relative = 1e-12);
        assert_relative_eq!(d, 3.57e-48, max_relative = 1e-3);
    }

    #[test]
    fn weight_validation() {
        assert!(DkfWeights::new(0.5, vec![0.5]).is_ok());
        assert!(DkfWeights::new(0.0, vec![1.0]).is_err());
        assert!(DkfWeights::new(0.5, vec![0.6, -0.1]).is_err());
        assert!(DkfWeights::new(0.5, vec![0.4]).is_err());
        assert!(WeightScheme::Adaptive { confident: 1.0 }.validate().is_err());
    }

    #[test]
    fn adaptive_weights_swap_when_beaten() {
        let scheme = WeightScheme::Adaptive { confident: 0.75 };
        let own = scalar(2.0);
        let worse = scalar(1.0);
        let better = scalar(8.0);
        let w = scheme.weights(&own, &[&worse, &worse]).unwrap();
        assert_eq!(w[0].self_weight(), 0.75);
        assert_eq!(w[0].neighbor_weights(), &[0.125, 0.125]);
        let w = scheme.weights(&own, &[&worse, &better]).unwrap();
        assert_eq!(w[0].self_weight(), 0.25);
        assert_eq!(w[0].neighbor_weights(), &[0.375, 0.375]);
        // ties keep the confident weight
        let w = scheme.weights(&own, &[&own]).unwrap();
        assert_eq!(w[0].self_weight(), 0.75);
        let w = scheme.weights(&own, &[]).unwrap();
        assert_eq!(w[0].self_weight(), 1.0);
    }

    #[test]
    fn pairwise_weights_favor_better_neighbors() {
        let scheme = WeightScheme::Pairwise { confident: 0.75 };
        let own = scalar(2.0);
        let worse = scalar(1.0);
        let better = scalar(8.0);
        let w = scheme.weights(&own, &[&worse, &worse]).unwrap();
        assert_eq!(w[0].self_weight(), 0.75);
        assert_eq!(w[0].neighbor_weights(), &[0.125, 0.125]);
        let w = scheme.weights(&own, &[&worse, &better]).unwrap();
        assert_eq!(w[0].self_weight(), 0.125);
        assert_eq!(w[0].neighbor_weights(), &[0.125, 0.75]);
        let w = scheme.weights(&own, &[&better, &worse, &better]).unwrap();
        assert_relative_eq!(w[0].self_weight(), 0.05, epsilon = 1e-15);
        for (got, want) in w[0].neighbor_weights().iter().zip([0.45, 0.05, 0.45]) {
            assert_relative_eq!(*got, want, epsilon = 1e-15);
        }
    }

    fn spd2(a: f64, b: f64, c: f64) -> DMatrix<f64> {
        let l = DMatrix::from_row_slice(2, 2, &[a, 0.0, b, c]);
        &l * l.transpose()
    }

    proptest! {
        #[test]
        fn block_det_matches_closed_form(a in 0.1..3.0f64, b in -2.0..2.0f64, c in 0.1..3.0f64) {
            let omega = spd2(a, b, c);
            let block = InfoBlock::new(omega.clone(), DVector::zeros(2)).unwrap();
            let direct = omega[(0, 0)] * omega[(1, 1)] - omega[(0, 1)] * omega[(1, 0)];
            prop_assert!((block.det_cov() - 1.0 / direct).abs() <= 1e-12 * (1.0 / direct).max(1.0));
        }

        #[test]
        fn prediction_matches_covariance_form(a in 0.2..2.0f64, b in -1.0..1.0f64, c in 0.2..2.0f64,
                                              t00 in -1.5..1.5f64, t01 in -1.5..1.5f64, t10 in -1.5..1.5f64, t11 in -1.5..1.5f64,
                                              q in 0.01..1.0f64, m0 in -3.0..3.0f64, m1 in -3.0..3.0f64) {
            let cov = spd2(a, b, c);
            let model = TargetModel::new(
                DMatrix::from_row_slice(2, 2, &[t00, t01, t10, t11]),
                DVector::from_row_slice(&[0.1, -0.2]),
                DMatrix::identity(2, 2) * q,
                DVector::zeros(2),
                DMatrix::identity(2, 2),
            ).unwrap();
            let mean = DVector::from_row_slice(&[m0, m1]);
            let belief = InfoBelief::new(vec![InfoBlock::from_covariance(mean.clone(), &cov).unwrap()]);
            let predicted = dkf_predict(&belief, std::slice::from_ref(&model)).unwrap();
            // covariance-form oracle
            let a_m = &model.transition;
            let cov_next = a_m * &cov * a_m.transpose() + &model.process_noise;
            let mean_next = a_m * &mean + &model.drift;
            let got = predicted.block(0).covariance();
            for (g, e) in got.iter().zip(cov_next.iter()) {
                prop_assert!((g - e).abs() <= 1e-10 * e.abs().max(1.0));
            }
            for (g, e) in predicted.block(0).mean().iter().zip(mean_next.iter()) {
                prop_assert!((g - e).abs() <= 1e-10 * e.abs().max(1.0));
            }
        }

        #[test]
        fn predict_update_sequences_stay_pd(steps in proptest::collection::vec((0.0..6.28f64, 0.05..1.0f64, proptest::bool::ANY), 1..40)) {
            let model = TargetModel::new(
                DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.95]),
                DVector::zeros(2),
                DMatrix::identity(2, 2) * 0.01,
                DVector::zeros(2),
                DMatrix::identity(2, 2),
            ).unwrap();
            let mut b = InfoBelief::from_priors(std::slice::from_ref(&model)).unwrap();
            for (angle, r, seen) in steps {
                b = dkf_predict(&b, std::slice::from_ref(&model)).unwrap();
                let meas = seen.then(|| Measurement {
                    jacobian: DVector::from_row_slice(&[angle.cos(), angle.sin()]),
                    variance: r,
                    innovation: 0.0,
                });
                b = dkf_update(&b, &[], &[DkfWeights::isolated()], &[meas]).unwrap();
                let omega = b.block(0).omega();
                prop_assert_eq!(omega[(0, 1)], omega[(1, 0)]);
                prop_assert!(cholesky(omega, "omega").is_ok());
            }
        }
    }
}
