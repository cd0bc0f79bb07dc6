//! Stochastic gradient descent on the Monte Carlo criterion, with optional
//! outlier filtering of training atoms (DORO).
//!
//! Each step picks one measure `m` and moves along
//! `phi'(R_m(theta)) sum_j p_j grad h(theta, xi_j)` with step size
//! `eta_t = a / (b + sqrt(t))`. A pass visits every measure once.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::criterion::{weighted_risk, ApproxCriterion};
use crate::error::{DroError, Result};
use crate::rng::RngHandle;
use crate::sampling::{DiscreteMeasure, Origin};

/// Growth factor over the initial criterion value treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BatchOrder {
    /// Measures `0, 1, ..., M-1` every pass.
    Cyclic,
    /// A fresh permutation every pass.
    ShuffledPerPass,
}

/// `eta_t = a / (b + sqrt(t))`, `t = 1, 2, ...`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub a: f64,
    pub b: f64,
}

impl StepSchedule {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(b >= 0.0 && b.is_finite()) {
            return Err(DroError::invalid(format!(
                "step schedule needs a > 0, b >= 0; got a={a}, b={b}"
            )));
        }
        Ok(StepSchedule { a, b })
    }

    pub fn eta(&self, t: usize) -> f64 {
        self.a / (self.b + (t as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub theta0: Vec<f64>,
    pub step: StepSchedule,
    pub passes: usize,
    pub batch_order: BatchOrder,
    /// Fraction of training atoms dropped per step; 0 disables filtering.
    #[serde(default)]
    pub epsilon: f64,
}

impl SgdConfig {
    pub fn new(theta0: Vec<f64>, step: StepSchedule, passes: usize) -> Self {
        SgdConfig {
            theta0,
            step,
            passes,
            batch_order: BatchOrder::Cyclic,
            epsilon: 0.0,
        }
    }

    pub fn with_order(self, batch_order: BatchOrder) -> Self {
        SgdConfig { batch_order, ..self }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        SgdConfig { epsilon, ..self }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        StepSchedule::new(self.step.a, self.step.b)?;
        if self.theta0.len() != dim {
            return Err(DroError::DimensionMismatch {
                expected: dim,
                got: self.theta0.len(),
            });
        }
        if self.theta0.iter().any(|v| !v.is_finite()) {
            return Err(DroError::invalid("initial parameter must be finite"));
        }
        if self.passes == 0 {
            return Err(DroError::invalid("at least one pass is required"));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(DroError::invalid(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub theta_final: Vec<f64>,
    /// Criterion at `theta0` followed by its value after each pass.
    pub criterion_trajectory: Vec<f64>,
    pub steps_taken: usize,
    /// Training atoms dropped at each step (empty without filtering).
    pub filtered_counts: Vec<usize>,
}

/// `phi'(R_m(theta)) sum_j p_j grad h(theta, xi_mj)`
pub fn gradient_direction(c: &ApproxCriterion, theta: &[f64], m: usize) -> Result<Vec<f64>> {
    measure_direction(c, c.measure(m), theta, m)
}

fn measure_direction(c: &ApproxCriterion, measure: &DiscreteMeasure, theta: &[f64], m: usize) -> Result<Vec<f64>> {
    let loss = c.loss();
    let mut risk = 0.0;
    let mut g = vec![0.0; theta.len()];
    for (j, (atom, p)) in measure.atoms().iter().zip(measure.weights()).enumerate() {
        let (h, slope) = loss.value_and_slope(theta, atom)?;
        if !h.is_finite() {
            return Err(DroError::NonFiniteLoss { measure: m, atom: j });
        }
        risk += p * h;
        let coef = p * slope;
        for (gk, xk) in g.iter_mut().zip(atom.x.iter()) {
            *gk += coef * xk;
        }
    }
    let scale = c.phi().derivative(risk)?;
    g.iter_mut().for_each(|v| *v *= scale);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(DroError::NonFiniteGradient { measure: m });
    }
    Ok(g)
}

/// `theta - eta * gradient_direction(c, theta, m)`
pub fn sgd_step(c: &ApproxCriterion, theta: &[f64], m: usize, eta: f64) -> Result<Vec<f64>> {
    let g = gradient_direction(c, theta, m)?;
    Ok(theta.iter().zip(&g).map(|(t, d)| t - eta * d).collect())
}

/// Drop the `ceil(epsilon * #train)` training atoms with the largest loss and
/// renormalize what is left. Prior draws are never dropped. Ties are broken by
/// atom index (lower index dropped first).
///
/// Returns `None` when nothing is dropped, and `Ok(Some((measure, dropped)))`
/// otherwise; `AllTrainFiltered` if the kept mass would be zero.
pub fn filter_measure(
    c: &ApproxCriterion,
    m: usize,
    theta: &[f64],
    epsilon: f64,
) -> Result<Option<(DiscreteMeasure, usize)>> {
    let measure = c.measure(m);
    let loss = c.loss();
    let train: Vec<usize> = (0..measure.len())
        .filter(|&j| measure.origin()[j] == Origin::TrainData)
        .collect();
    let k = drop_count(epsilon, train.len());
    if k == 0 {
        return Ok(None);
    }
    let mut scored = Vec::with_capacity(train.len());
    for &j in &train {
        let h = loss.eval(theta, &measure.atoms()[j])?;
        if !h.is_finite() {
            return Err(DroError::NonFiniteLoss { measure: m, atom: j });
        }
        scored.push((h, j));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut keep = vec![true; measure.len()];
    for &(_, j) in &scored[..k] {
        keep[j] = false;
    }
    let kept_mass: f64 = (0..measure.len())
        .filter(|&j| keep[j])
        .map(|j| measure.weights()[j])
        .sum();
    if !(kept_mass > 0.0) {
        return Err(DroError::AllTrainFiltered { measure: m });
    }
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    let mut origin = Vec::new();
    for j in (0..measure.len()).filter(|&j| keep[j]) {
        atoms.push(measure.atoms()[j].clone());
        weights.push(measure.weights()[j] / kept_mass);
        origin.push(measure.origin()[j]);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Some((DiscreteMeasure::new(atoms, weights, origin)?, k)))
}

/// `ceil(epsilon * n)`, robust to `epsilon * n` landing a rounding error above an integer.
pub fn drop_count(epsilon: f64, n: usize) -> usize {
    if epsilon <= 0.0 || n == 0 {
        return 0;
    }
    ((epsilon * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Plain SGD over the measures of `c`.
pub fn run_sgd(c: &ApproxCriterion, config: &SgdConfig, rng: RngHandle) -> Result<FitReport> {
    let plain = SgdConfig {
        epsilon: 0.0,
        ..config.clone()
    };
    run(c, &plain, rng)
}

/// SGD where each step first filters the chosen measure's training atoms.
/// With `epsilon = 0` this is exactly [`run_sgd`].
pub fn run_doro_sgd(c: &ApproxCriterion, config: &SgdConfig, rng: RngHandle) -> Result<FitReport> {
    run(c, config, rng)
}

fn run(c: &ApproxCriterion, config: &SgdConfig, rng: RngHandle) -> Result<FitReport> {
    let dim = c.measure(0).atoms()[0].dim();
    config.validate(dim)?;
    let mut theta = config.theta0.clone();
    let initial = c.eval(&theta)?;
    let mut trajectory = Vec::with_capacity(config.passes + 1);
    trajectory.push(initial);
    let mut filtered_counts = Vec::new();
    let mut order: Vec<usize> = (0..c.num_measures()).collect();
    let mut shuffle_rng = rng.rng();
    let mut t = 0usize;

    for _ in 0..config.passes {
        if config.batch_order == BatchOrder::ShuffledPerPass {
            order.shuffle(&mut shuffle_rng);
        }
        for &m in &order {
            t += 1;
            let eta = config.step.eta(t);
            let direction = if config.epsilon > 0.0 {
                match filter_measure(c, m, &theta, config.epsilon)? {
                    Some((filtered, k)) => {
                        filtered_counts.push(k);
                        measure_direction(c, &filtered, &theta, m)?
                    }
                    None => {
                        filtered_counts.push(0);
                        gradient_direction(c, &theta, m)?
                    }
                }
            } else {
                gradient_direction(c, &theta, m)?
            };
            for (th, d) in theta.iter_mut().zip(&direction) {
                *th -= eta * d;
            }
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(DroError::Divergence {
                    step: t,
                    value: f64::INFINITY,
                    initial,
                });
            }
        }
        let value = c.eval(&theta)?;
        if !value.is_finite() || (initial > 0.0 && value > DIVERGENCE_FACTOR * initial) {
            return Err(DroError::Divergence {
                step: t,
                value,
                initial,
            });
        }
        trajectory.push(value);
    }
    Ok(FitReport {
        theta_final: theta,
        criterion_trajectory: trajectory,
        steps_taken: t,
        filtered_counts,
    })
}

/// Filtered risk `sum_j q_j h` of measure `m` after dropping training outliers.
pub fn filtered_risk(c: &ApproxCriterion, m: usize, theta: &[f64], epsilon: f64) -> Result<f64> {
    match filter_measure(c, m, theta, epsilon)? {
        Some((q, _)) => weighted_risk(&c.loss(), &q, theta),
        None => c.measure_risk(m, theta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criterion::{build_dp_criterion, MonteCarlo, PhiTransform};
    use crate::data::{Dataset, Observation, TaskKind};
    use crate::losses::LossFn;
    use crate::sampling::{Approx, Centering, DpSpec};
    use proptest::prelude::*;

    fn toy() -> Dataset {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![1.0, (i as f64 * 0.7).sin()]).collect();
        let y = x.iter().map(|r| 0.5 + 2.0 * r[1]).collect();
        Dataset::from_xy(x, y, TaskKind::Regression).unwrap()
    }

    fn criterion(phi: PhiTransform, samples: usize) -> ApproxCriterion {
        let prior = DpSpec::new(1.0, Centering::StandardNormal { dim: 2 }).unwrap();
        let mc = MonteCarlo::new(20, samples, Approx::MultinomialDirichlet);
        build_dp_criterion(&prior, &toy(), &mc, phi, LossFn::squared(), RngHandle::new(11)).unwrap()
    }

    #[test]
    fn step_schedule() {
        let s = StepSchedule::new(50.0, 100.0).unwrap();
        assert_eq!(s.eta(1), 50.0 / 101.0);
        assert_eq!(s.eta(4), 50.0 / 102.0);
        assert!(StepSchedule::new(0.0, 1.0).is_err());
        assert!(StepSchedule::new(1.0, -1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let phi = PhiTransform::new(2.0).unwrap();
        let c = criterion(phi, 3);
        let theta = [0.3, -0.2];
        for m in 0..3 {
            let g = gradient_direction(&c, &theta, m).unwrap();
            for k in 0..2 {
                let h = 1e-6;
                let mut up = theta;
                let mut dn = theta;
                up[k] += h;
                dn[k] -= h;
                let fd = (phi.eval(c.measure_risk(m, &up).unwrap()).unwrap()
                    - phi.eval(c.measure_risk(m, &dn).unwrap()).unwrap())
                    / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-5 * fd.abs().max(1.0), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn sgd_decreases_and_reports() {
        let c = criterion(PhiTransform::new(5.0).unwrap(), 10);
        let cfg = SgdConfig::new(vec![0.0, 0.0], StepSchedule::new(0.5, 1.0).unwrap(), 30);
        let fit = run_sgd(&c, &cfg, RngHandle::new(0)).unwrap();
        assert_eq!(fit.criterion_trajectory.len(), 31);
        assert_eq!(fit.steps_taken, 300);
        assert!(fit.filtered_counts.is_empty());
        assert!(fit.criterion_trajectory.last().unwrap() < &fit.criterion_trajectory[0]);
    }

    #[test]
    fn shuffled_order_is_seed_deterministic() {
        let c = criterion(PhiTransform::identity(), 8);
        let cfg = SgdConfig::new(vec![0.0, 0.0], StepSchedule::new(0.5, 1.0).unwrap(), 5)
            .with_order(BatchOrder::ShuffledPerPass);
        let a = run_sgd(&c, &cfg, RngHandle::new(4)).unwrap();
        let b = run_sgd(&c, &cfg, RngHandle::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported() {
        let c = criterion(PhiTransform::identity(), 4);
        let cfg = SgdConfig::new(vec![0.0, 0.0], StepSchedule::new(1e4, 0.0).unwrap(), 20);
        assert!(matches!(run_sgd(&c, &cfg, RngHandle::new(0)), Err(e) if e.is_numerical()));
    }

    #[test]
    fn config_validation() {
        let c = criterion(PhiTransform::identity(), 2);
        let step = StepSchedule::new(1.0, 1.0).unwrap();
        assert!(run_sgd(&c, &SgdConfig::new(vec![0.0], step, 1), RngHandle::new(0)).is_err());
        assert!(run_sgd(&c, &SgdConfig::new(vec![0.0, 0.0], step, 0), RngHandle::new(0)).is_err());
        let bad_eps = SgdConfig::new(vec![0.0, 0.0], step, 1).with_epsilon(1.0);
        assert!(run_doro_sgd(&c, &bad_eps, RngHandle::new(0)).is_err());
    }

    #[test]
    fn drop_count_rounding() {
        assert_eq!(drop_count(0.0, 50), 0);
        assert_eq!(drop_count(0.1, 50), 5);
        assert_eq!(drop_count(0.1, 51), 6);
        assert_eq!(drop_count(0.3, 10), 3);
        assert_eq!(drop_count(0.01, 3), 1);
        assert_eq!(drop_count(0.5, 0), 0);
    }

    #[test]
    fn filter_drops_worst_training_atoms() {
        let atoms = vec![
            Observation::new(vec![1.0], 0.0),
            Observation::new(vec![1.0], 5.0),
            Observation::new(vec![1.0], 9.0),
            Observation::new(vec![1.0], 3.0),
        ];
        let origin = vec![
            Origin::TrainData,
            Origin::TrainData,
            Origin::PriorDraw,
            Origin::TrainData,
        ];
        let m = DiscreteMeasure::new(atoms, vec![0.25; 4], origin).unwrap();
        let c = ApproxCriterion::new(vec![m], PhiTransform::identity(), LossFn::squared()).unwrap();
        // 3 training atoms, epsilon 0.2 -> drop 1: the y = 5 atom (prior atom y = 9 is kept)
        let (q, k) = filter_measure(&c, 0, &[0.0], 0.2).unwrap().unwrap();
        assert_eq!(k, 1);
        let ys: Vec<f64> = q.atoms().iter().map(|a| a.y).collect();
        assert_eq!(ys, vec![0.0, 9.0, 3.0]);
        assert!(q.weights().iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
        assert!(filter_measure(&c, 0, &[0.0], 0.0).unwrap().is_none());
    }

    #[test]
    fn filter_ties_drop_lower_index() {
        let atoms = vec![
            Observation::new(vec![1.0], 2.0),
            Observation::new(vec![1.0], -2.0),
            Observation::new(vec![1.0], 0.0),
        ];
        let m = DiscreteMeasure::new(atoms, vec![0.2, 0.3, 0.5], vec![Origin::TrainData; 3]).unwrap();
        let c = ApproxCriterion::new(vec![m], PhiTransform::identity(), LossFn::squared()).unwrap();
        let (q, _) = filter_measure(&c, 0, &[0.0], 0.3).unwrap().unwrap();
        assert_eq!(q.atoms()[0].y, -2.0);
        assert!((q.weights()[0] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn filter_all_mass_removed() {
        let atoms = vec![Observation::new(vec![1.0], 2.0), Observation::new(vec![1.0], 0.0)];
        let m = DiscreteMeasure::new(atoms, vec![1.0, 0.0], vec![Origin::TrainData; 2]).unwrap();
        let c = ApproxCriterion::new(vec![m], PhiTransform::identity(), LossFn::squared()).unwrap();
        assert!(matches!(
            filter_measure(&c, 0, &[0.0], 0.5),
            Err(DroError::AllTrainFiltered { .. })
        ));
    }

    #[test]
    fn doro_zero_epsilon_matches_sgd_bitwise() {
        let c = criterion(PhiTransform::new(3.0).unwrap(), 6);
        let cfg = SgdConfig::new(vec![0.1, -0.1], StepSchedule::new(0.5, 2.0).unwrap(), 7)
            .with_order(BatchOrder::ShuffledPerPass);
        let a = run_sgd(&c, &cfg, RngHandle::new(9)).unwrap();
        let b = run_doro_sgd(&c, &cfg, RngHandle::new(9)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn filter_keeps_a_valid_measure(eps in 0.0f64..0.99, seed in 0u64..500) {
            let c = criterion(PhiTransform::identity(), 2);
            let theta = [0.2, 1.0 + seed as f64 * 1e-3];
            if let Some((q, k)) = filter_measure(&c, 0, &theta, eps).unwrap() {
                let train = c.measure(0).train_count();
                prop_assert_eq!(k, drop_count(eps, train));
                prop_assert_eq!(q.len(), c.measure(0).len() - k);
                let s: f64 = q.weights().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                // every kept training atom has loss <= every dropped one
                let losses = |m: &DiscreteMeasure| -> Vec<f64> {
                    m.atoms().iter().zip(m.origin()).filter(|(_, o)| **o == Origin::TrainData)
                        .map(|(a, _)| LossFn::squared().eval(&theta, a).unwrap()).collect()
                };
                let kept = losses(&q);
                let mut all = losses(c.measure(0));
                all.sort_by(|a, b| b.total_cmp(a));
                let threshold = all[k - 1];
                prop_assert!(kept.iter().all(|&h| h <= threshold));
            }
        }
    }
}
