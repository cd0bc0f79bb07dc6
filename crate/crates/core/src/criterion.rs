//! The smooth robust criterion and its ambiguity-neutral closed forms.
//!
//! For `M` posterior draws `p^m = sum_j p_j^m delta_{xi_mj}` the Monte Carlo
//! criterion is
//!
//! ```text
//! V(theta) = (1/M) sum_m phi( sum_j p_j^m h(theta, xi_mj) )
//! ```
//!
//! with `phi_beta(t) = beta exp(t/beta) - beta`. Convexity of `phi` penalizes
//! parameters whose risk varies across plausible data-generating measures;
//! `beta = inf` gives the identity, i.e. the posterior-averaged (ambiguity-neutral)
//! risk, which has the closed forms [`ambiguity_neutral_dp`] and
//! [`ambiguity_neutral_hdp`].

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupedDataset, Observation};
use crate::error::{DroError, Result};
use crate::exec::ExecPolicy;
use crate::losses::{LossFn, LossKind};
use crate::rng::RngHandle;
use crate::sampling::{
    dp_posterior, draw, Approx, Centering, DiscreteMeasure, DpSpec, HdpGroupPosterior, HdpSpec, Origin,
};

/// Largest `t / beta` accepted before `exp` is considered an overflow.
pub const PHI_MAX_RATIO: f64 = 700.0;

/// `phi_beta(t) = beta * (exp(t / beta) - 1)`; `beta = inf` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiTransform {
    beta: f64,
}

impl PhiTransform {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(DroError::invalid(format!("phi beta must be positive, got {beta}")));
        }
        Ok(PhiTransform { beta })
    }

    pub fn identity() -> Self {
        PhiTransform { beta: f64::INFINITY }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_identity(&self) -> bool {
        self.beta.is_infinite()
    }

    fn ratio(&self, t: f64) -> Result<f64> {
        let ratio = t / self.beta;
        if ratio > PHI_MAX_RATIO || ratio.is_nan() {
            return Err(DroError::PhiOverflow {
                t,
                beta: self.beta,
                ratio,
            });
        }
        Ok(ratio)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if self.is_identity() {
            return Ok(t);
        }
        Ok(self.beta * self.ratio(t)?.exp_m1())
    }

    pub fn derivative(&self, t: f64) -> Result<f64> {
        if self.is_identity() {
            return Ok(1.0);
        }
        Ok(self.ratio(t)?.exp())
    }
}

/// Truncation and sample-count settings for a Monte Carlo criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    /// `T` (DP) or `T_s` (HDP group level).
    pub truncation: usize,
    /// `T_0`, HDP top level only.
    pub top_truncation: usize,
    /// `M`
    pub samples: usize,
    pub approx: Approx,
    #[serde(skip, default)]
    pub exec: ExecPolicy,
}

impl MonteCarlo {
    pub fn new(truncation: usize, samples: usize, approx: Approx) -> Self {
        MonteCarlo {
            truncation,
            top_truncation: truncation,
            samples,
            approx,
            exec: ExecPolicy::default(),
        }
    }

    pub fn with_top_truncation(self, top_truncation: usize) -> Self {
        MonteCarlo { top_truncation, ..self }
    }

    pub fn with_exec(self, exec: ExecPolicy) -> Self {
        MonteCarlo { exec, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(DroError::invalid("number of Monte Carlo samples must be at least 1"));
        }
        if self.truncation == 0 || self.top_truncation == 0 {
            return Err(DroError::invalid("truncation level must be at least 1"));
        }
        Ok(())
    }
}

/// `M` discrete measures, a transform and a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxCriterion {
    measures: Vec<DiscreteMeasure>,
    phi: PhiTransform,
    loss: LossFn,
    exec: ExecPolicy,
}

impl ApproxCriterion {
    pub fn new(measures: Vec<DiscreteMeasure>, phi: PhiTransform, loss: LossFn) -> Result<Self> {
        if measures.is_empty() {
            return Err(DroError::invalid("criterion needs at least one measure"));
        }
        loss.validate()?;
        Ok(ApproxCriterion {
            measures,
            phi,
            loss,
            exec: ExecPolicy::default(),
        })
    }

    pub fn with_exec(self, exec: ExecPolicy) -> Self {
        ApproxCriterion { exec, ..self }
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn measure(&self, m: usize) -> &DiscreteMeasure {
        &self.measures[m]
    }

    pub fn phi(&self) -> PhiTransform {
        self.phi
    }

    pub fn loss(&self) -> LossFn {
        self.loss
    }

    pub fn exec(&self) -> ExecPolicy {
        self.exec
    }

    pub fn num_measures(&self) -> usize {
        self.measures.len()
    }

    /// `sum_j p_j^m h(theta, xi_mj)`
    pub fn measure_risk(&self, m: usize, theta: &[f64]) -> Result<f64> {
        weighted_risk(&self.loss, &self.measures[m], theta).map_err(|e| with_measure(e, m))
    }

    pub fn measure_risks(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.exec.try_map(self.measures.len(), |m| self.measure_risk(m, theta))
    }

    /// `(1/M) sum_m phi(risk_m)`, reduced in measure order.
    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        let risks = self.measure_risks(theta)?;
        let mut total = 0.0;
        for r in risks {
            total += self.phi.eval(r)?;
        }
        Ok(total / self.measures.len() as f64)
    }
}

fn with_measure(e: DroError, m: usize) -> DroError {
    match e {
        DroError::NonFiniteLoss { atom, .. } => DroError::NonFiniteLoss { measure: m, atom },
        other => other,
    }
}

pub(crate) fn weighted_risk(loss: &LossFn, measure: &DiscreteMeasure, theta: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (j, (atom, p)) in measure.atoms().iter().zip(measure.weights()).enumerate() {
        let h = loss.eval(theta, atom)?;
        if !h.is_finite() {
            return Err(DroError::NonFiniteLoss { measure: 0, atom: j });
        }
        total += p * h;
    }
    Ok(total)
}

/// Monte Carlo criterion from the DP posterior given `data`; measure `m` uses
/// substream `rng.stream + m`.
pub fn build_dp_criterion(
    prior: &DpSpec,
    data: &Dataset,
    mc: &MonteCarlo,
    phi: PhiTransform,
    loss: LossFn,
    rng: RngHandle,
) -> Result<ApproxCriterion> {
    mc.validate()?;
    prior.validate()?;
    let posterior = dp_posterior(prior, data);
    let measures = mc.exec.try_map(mc.samples, |m| {
        draw(&posterior, mc.approx, mc.truncation, rng.substream(m as u64))
    })?;
    Ok(ApproxCriterion::new(measures, phi, loss)?.with_exec(mc.exec))
}

/// Monte Carlo criterion for group `s` (zero-based) from two-stage HDP posterior
/// draws with truncations `T_0` (top) and `T_s` (group).
pub fn build_hdp_criterion(
    spec: &HdpSpec,
    data: &GroupedDataset,
    s: usize,
    mc: &MonteCarlo,
    phi: PhiTransform,
    loss: LossFn,
    rng: RngHandle,
) -> Result<ApproxCriterion> {
    mc.validate()?;
    let posterior = HdpGroupPosterior::new(spec, data, s)?;
    let measures = mc.exec.try_map(mc.samples, |m| {
        posterior.draw(mc.top_truncation, mc.truncation, mc.approx, rng.substream(m as u64))
    })?;
    Ok(ApproxCriterion::new(measures, phi, loss)?.with_exec(mc.exec))
}

/// Mean loss over the rows of `data`.
pub fn empirical_risk(theta: &[f64], data: &Dataset, loss: &LossFn) -> Result<f64> {
    loss.mean(theta, data.rows())
}

/// Posterior-averaged DP risk: `n/(a+n) R_emp(theta) + a/(a+n) R_p0(theta)`.
pub fn ambiguity_neutral_dp(
    theta: &[f64],
    data: &Dataset,
    alpha: f64,
    prior_risk: impl Fn(&[f64]) -> f64,
    loss: &LossFn,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(prior_risk(theta));
    }
    let n = data.len() as f64;
    let emp = empirical_risk(theta, data, loss)?;
    Ok(n / (alpha + n) * emp + alpha / (alpha + n) * prior_risk(theta))
}

/// Posterior-averaged HDP risk of group `s`:
/// `N_s/(a_s+N_s) R_s + a_s/(a_s+N_s) [ N/(a_0+N) R_pooled + a_0/(a_0+N) R_H ]`.
pub fn ambiguity_neutral_hdp(
    theta: &[f64],
    data: &GroupedDataset,
    s: usize,
    alpha0: f64,
    alpha_s: f64,
    prior_risk: impl Fn(&[f64]) -> f64,
    loss: &LossFn,
) -> Result<f64> {
    if s >= data.num_groups() {
        return Err(DroError::invalid(format!("group index {s} out of range")));
    }
    let top = ambiguity_neutral_dp(theta, &data.pooled(), alpha0, prior_risk, loss)?;
    let group = data.group(s);
    if group.is_empty() {
        return Ok(top);
    }
    let ns = group.len() as f64;
    let within = empirical_risk(theta, group, loss)?;
    Ok(ns / (alpha_s + ns) * within + alpha_s / (alpha_s + ns) * top)
}

/// `scale * (1 + |theta|^2)`: expected squared loss under `(y, x) ~ N(0, I)`.
pub fn gaussian_squared_prior_risk(theta: &[f64], loss: &LossFn) -> f64 {
    loss.scale * (1.0 + theta.iter().map(|t| t * t).sum::<f64>())
}

/// `(1/n) |y - X theta|^2 + (alpha/n) |theta|^2`
pub fn ridge_objective(theta: &[f64], data: &Dataset, alpha: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(DroError::Empty("ridge objective needs at least one row".into()));
    }
    let n = data.len() as f64;
    let mse = LossFn::squared().mean(theta, data.rows())?;
    Ok(mse + alpha / n * theta.iter().map(|t| t * t).sum::<f64>())
}

/// Expected loss under a centering measure.
///
/// Closed form for a standard-normal centering with squared loss and exact sums for
/// empirical or atomic parts; any other part is estimated from `draws` samples.
pub fn prior_risk(centering: &Centering, loss: &LossFn, theta: &[f64], draws: usize, rng: RngHandle) -> Result<f64> {
    match centering {
        Centering::StandardNormal { .. } if loss.kind == LossKind::Squared => {
            Ok(gaussian_squared_prior_risk(theta, loss))
        }
        Centering::Empirical(ds) => empirical_risk(theta, ds, loss),
        Centering::Atomic(m) => weighted_risk(loss, m, theta),
        Centering::Mixture(parts) => {
            let mut total = 0.0;
            for (k, (w, c)) in parts.iter().enumerate() {
                if *w > 0.0 {
                    total += w * prior_risk(c, loss, theta, draws, rng.substream(k as u64))?;
                }
            }
            Ok(total)
        }
        other => {
            if draws == 0 {
                return Err(DroError::invalid("Monte Carlo prior risk needs at least one draw"));
            }
            let mut r = rng.rng();
            let mut total = 0.0;
            for _ in 0..draws {
                let (obs, _) = other.sample(&mut r);
                total += loss.eval(theta, &obs)?;
            }
            Ok(total / draws as f64)
        }
    }
}

/// Discrete stand-in for the posterior predictive `n/(a+n) p_emp + a/(a+n) p0`.
///
/// Gaussian centering parts are replaced by symmetric cubature points `+-sqrt(k) e_i`
/// that match their first two moments, so the risk of every loss that is quadratic
/// in `(y, x)` (the squared loss) equals the ambiguity-neutral criterion exactly.
/// Minimizing it with `phi = identity` therefore solves the ridge-type problem
/// without Monte Carlo noise.
pub fn moment_matched_predictive(prior: &DpSpec, data: &Dataset) -> Result<DiscreteMeasure> {
    prior.validate()?;
    let posterior = dp_posterior(prior, data);
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    let mut origin = Vec::new();
    flatten(&posterior.centering, 1.0, &mut atoms, &mut weights, &mut origin)?;
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    DiscreteMeasure::new(atoms, weights, origin)
}

fn flatten(
    centering: &Centering,
    mass: f64,
    atoms: &mut Vec<Observation>,
    weights: &mut Vec<f64>,
    origin: &mut Vec<Origin>,
) -> Result<()> {
    match centering {
        Centering::Empirical(ds) => {
            let p = mass / ds.len() as f64;
            for row in ds.rows() {
                atoms.push(row.clone());
                weights.push(p);
                origin.push(Origin::TrainData);
            }
        }
        Centering::StandardNormal { dim } => {
            // 2(d+1) points +-sqrt(d+1) e_i in R^{d+1}
            let k = dim + 1;
            let r = (k as f64).sqrt();
            let p = mass / (2 * k) as f64;
            for i in 0..k {
                for sign in [1.0, -1.0] {
                    let mut xi = vec![0.0; k];
                    xi[i] = sign * r;
                    atoms.push(Observation::new(xi[1..].to_vec(), xi[0]));
                    weights.push(p);
                    origin.push(Origin::PriorDraw);
                }
            }
        }
        Centering::ProductBinaryNormal { dim } => {
            // y = +-1 crossed with +-sqrt(d) e_i (or x = 0 when d = 0)
            let xs: Vec<Vec<f64>> = if *dim == 0 {
                vec![Vec::new()]
            } else {
                let r = (*dim as f64).sqrt();
                (0..*dim)
                    .flat_map(|i| {
                        [1.0, -1.0].into_iter().map(move |s| {
                            let mut x = vec![0.0; *dim];
                            x[i] = s * r;
                            x
                        })
                    })
                    .collect()
            };
            let p = mass / (2 * xs.len()) as f64;
            for y in [1.0, -1.0] {
                for x in &xs {
                    atoms.push(Observation::new(x.clone(), y));
                    weights.push(p);
                    origin.push(Origin::PriorDraw);
                }
            }
        }
        Centering::Mixture(parts) => {
            for (w, c) in parts {
                if *w > 0.0 {
                    flatten(c, mass * w, atoms, weights, origin)?;
                }
            }
        }
        Centering::Atomic(m) => {
            for ((a, p), o) in m.atoms().iter().zip(m.weights()).zip(m.origin()) {
                atoms.push(a.clone());
                weights.push(mass * p);
                origin.push(*o);
            }
        }
    }
    Ok(())
}

/// Single-measure criterion `phi(R_q(theta))` for an explicit measure `q`.
pub fn single_measure_criterion(measure: DiscreteMeasure, phi: PhiTransform, loss: LossFn) -> Result<ApproxCriterion> {
    ApproxCriterion::new(vec![measure], phi, loss)
}

/// Convenience: empirical-measure criterion (ERM when `phi` is the identity).
pub fn empirical_criterion(data: &Dataset, phi: PhiTransform, loss: LossFn) -> Result<ApproxCriterion> {
    single_measure_criterion(DiscreteMeasure::empirical(data)?, phi, loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskKind;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn toy() -> Dataset {
        Dataset::from_xy(
            vec![vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.7, -1.1], vec![2.0, 0.1]],
            vec![1.0, -0.4, 0.2, 2.5],
            TaskKind::Regression,
        )
        .unwrap()
    }

    #[test]
    fn phi_basics() {
        for beta in [0.1, 1.0, 10.0, 100.0, f64::INFINITY] {
            let phi = PhiTransform::new(beta).unwrap();
            assert_eq!(phi.eval(0.0).unwrap(), 0.0);
            assert!(phi.eval(1.0).unwrap() > phi.eval(0.5).unwrap());
        }
        assert!(PhiTransform::new(0.0).is_err());
        assert!(PhiTransform::new(-1.0).is_err());
        let phi = PhiTransform::new(1.0).unwrap();
        assert!((phi.eval(1.0).unwrap() - (1f64.exp() - 1.0)).abs() < 1e-15);
        assert!(matches!(phi.eval(701.0), Err(DroError::PhiOverflow { .. })));
        assert!(matches!(phi.derivative(800.0), Err(DroError::PhiOverflow { .. })));
        assert!(PhiTransform::identity().eval(1e300).is_ok());
    }

    #[test]
    fn point_mass_identity_is_loss() {
        let obs = Observation::new(vec![1.0, 2.0], 3.0);
        let theta = [0.5, 0.25];
        let c = single_measure_criterion(
            DiscreteMeasure::point_mass(obs.clone(), Origin::TrainData),
            PhiTransform::identity(),
            LossFn::squared(),
        )
        .unwrap();
        assert_eq!(c.eval(&theta).unwrap(), LossFn::squared().eval(&theta, &obs).unwrap());
    }

    #[test]
    fn constant_loss_gives_phi_of_constant() {
        // theta = 0 under squared loss: h = y^2, constant when |y| is constant
        let atoms = vec![
            Observation::new(vec![1.0], 2.0),
            Observation::new(vec![-4.0], -2.0),
            Observation::new(vec![0.3], 2.0),
        ];
        let m = DiscreteMeasure::new(atoms, vec![0.2, 0.5, 0.3], vec![Origin::TrainData; 3]).unwrap();
        let phi = PhiTransform::new(2.0).unwrap();
        let c = ApproxCriterion::new(vec![m.clone(), m], phi, LossFn::squared()).unwrap();
        assert!((c.eval(&[0.0]).unwrap() - phi.eval(4.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_measures() {
        // measure A: atoms (x=1,y=1) w .25, (x=2,y=0) w .75
        // measure B: atoms (x=-1,y=2) w .5, (x=0,y=1) w .5
        // theta = 0.5: A losses .25, 1.0 -> .8125 ; B losses 6.25, 1 -> 3.625
        let a = DiscreteMeasure::new(
            vec![Observation::new(vec![1.0], 1.0), Observation::new(vec![2.0], 0.0)],
            vec![0.25, 0.75],
            vec![Origin::TrainData; 2],
        )
        .unwrap();
        let b = DiscreteMeasure::new(
            vec![Observation::new(vec![-1.0], 2.0), Observation::new(vec![0.0], 1.0)],
            vec![0.5, 0.5],
            vec![Origin::PriorDraw; 2],
        )
        .unwrap();
        let phi = PhiTransform::new(4.0).unwrap();
        let c = ApproxCriterion::new(vec![a, b], phi, LossFn::squared()).unwrap();
        let expected = 0.5 * (4.0 * ((0.8125f64 / 4.0).exp() - 1.0) + 4.0 * ((3.625f64 / 4.0).exp() - 1.0));
        assert!((c.eval(&[0.5]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_reports_atom() {
        let m = DiscreteMeasure::new(
            vec![Observation::new(vec![1.0], 0.0), Observation::new(vec![1e200], 0.0)],
            vec![0.5, 0.5],
            vec![Origin::TrainData; 2],
        )
        .unwrap();
        let c = ApproxCriterion::new(vec![m.clone(), m], PhiTransform::identity(), LossFn::squared()).unwrap();
        let err = c.eval(&[1e200]).unwrap_err();
        assert!(
            matches!(
                err,
                DroError::NonFiniteLoss { measure: 0, atom: 0 } | DroError::NonFiniteLoss { atom: 1, .. }
            ),
            "{err}"
        );
    }

    #[test]
    fn ambiguity_neutral_limits() {
        let data = toy();
        let loss = LossFn::squared();
        let prior = |t: &[f64]| gaussian_squared_prior_risk(t, &LossFn::squared());
        let theta = [1.0, 0.0];
        let emp = empirical_risk(&theta, &data, &loss).unwrap();
        assert_eq!(ambiguity_neutral_dp(&theta, &data, 0.0, prior, &loss).unwrap(), emp);
        let empty = Dataset::empty(2, TaskKind::Regression);
        assert_eq!(ambiguity_neutral_dp(&theta, &empty, 3.0, prior, &loss).unwrap(), 2.0);
        let (a, n) = (3.0, 4.0);
        let v = ambiguity_neutral_dp(&theta, &data, a, prior, &loss).unwrap();
        assert!((v - (n / (a + n) * emp + a / (a + n) * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn ridge_affine_identity() {
        let data = toy();
        let loss = LossFn::squared();
        let prior = |t: &[f64]| gaussian_squared_prior_risk(t, &LossFn::squared());
        let n = data.len() as f64;
        for (alpha, theta) in [(0.5, [0.3, -1.2]), (7.0, [2.0, 0.1]), (0.0, [-0.4, 0.9])] {
            let an = ambiguity_neutral_dp(&theta, &data, alpha, prior, &loss).unwrap();
            let mapped = (alpha + n) / n * an - alpha / n;
            assert!((mapped - ridge_objective(&theta, &data, alpha).unwrap()).abs() < 1e-12);
        }
        assert!(ridge_objective(&[0.0], &Dataset::empty(1, TaskKind::Regression), 1.0).is_err());
    }

    #[test]
    fn hdp_neutral_hand_computed() {
        let g1 = Dataset::from_xy(vec![vec![1.0], vec![2.0]], vec![1.0, 3.0], TaskKind::Regression).unwrap();
        let g2 = Dataset::from_xy(vec![vec![-1.0]], vec![0.0], TaskKind::Regression).unwrap();
        let g = GroupedDataset::new(vec![g1, g2]).unwrap();
        let loss = LossFn::squared();
        let prior = |t: &[f64]| gaussian_squared_prior_risk(t, &LossFn::squared());
        // theta = 1: group-1 losses 0, 1 -> 0.5 ; pooled losses 0, 1, 1 -> 2/3 ; prior 2
        let (a0, a1) = (2.0, 1.0);
        let bracket = 3.0 / 5.0 * (2.0 / 3.0) + 2.0 / 5.0 * 2.0;
        let expected = 2.0 / 3.0 * 0.5 + 1.0 / 3.0 * bracket;
        let v = ambiguity_neutral_hdp(&[1.0], &g, 0, a0, a1, prior, &loss).unwrap();
        assert!((v - expected).abs() < 1e-12);
        // alpha_0 huge: bracket reduces to the prior risk; alpha_s huge: only the bracket remains
        let v = ambiguity_neutral_hdp(&[1.0], &g, 0, 1e12, 1e12, prior, &loss).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
        let v = ambiguity_neutral_hdp(&[1.0], &g, 0, a0, 1e12, prior, &loss).unwrap();
        assert!((v - bracket).abs() < 1e-9);
        // S = 1, alpha_0 huge: single-source DP with alpha = alpha_s
        let single = GroupedDataset::single(g.group(0).clone());
        let v = ambiguity_neutral_hdp(&[1.0], &single, 0, 1e12, a1, prior, &loss).unwrap();
        let dp = ambiguity_neutral_dp(&[1.0], single.group(0), a1, prior, &loss).unwrap();
        assert!((v - dp).abs() < 1e-9);
    }

    #[test]
    fn moment_matched_measure_reproduces_closed_form() {
        let data = toy();
        let loss = LossFn::squared().with_scale(0.7);
        let prior = DpSpec::new(2.5, Centering::StandardNormal { dim: 2 }).unwrap();
        let q = moment_matched_predictive(&prior, &data).unwrap();
        assert_eq!(q.len(), 4 + 6);
        for theta in [[0.0, 0.0], [1.3, -0.2], [-2.0, 4.0]] {
            let exact =
                ambiguity_neutral_dp(&theta, &data, 2.5, |t| gaussian_squared_prior_risk(t, &loss), &loss).unwrap();
            let via = weighted_risk(&loss, &q, &theta).unwrap();
            assert!((exact - via).abs() < 1e-12, "{exact} vs {via}");
        }
    }

    #[test]
    fn prior_risk_paths() {
        let loss = LossFn::squared();
        let theta = [0.5, -0.5];
        let closed = prior_risk(
            &Centering::StandardNormal { dim: 2 },
            &loss,
            &theta,
            0,
            RngHandle::new(0),
        )
        .unwrap();
        assert_eq!(closed, 1.5);
        // the Monte Carlo route (pinball has no closed form) on a mixture with an exact part
        let ds = Arc::new(toy());
        let mix = Centering::Mixture(vec![
            (0.5, Centering::Empirical(ds.clone())),
            (0.5, Centering::StandardNormal { dim: 2 }),
        ]);
        let sq_mix = prior_risk(&mix, &loss, &theta, 0, RngHandle::new(0)).unwrap();
        let emp = empirical_risk(&theta, &ds, &loss).unwrap();
        assert!((sq_mix - 0.5 * (emp + 1.5)).abs() < 1e-15);
        // E|y - x^T theta| for N(0, 1 + |theta|^2) is sqrt(2/pi) * sqrt(1.5)
        let mc = prior_risk(
            &Centering::StandardNormal { dim: 2 },
            &LossFn::pinball(0.5),
            &theta,
            200_000,
            RngHandle::new(3),
        )
        .unwrap();
        let exact = (2.0 / std::f64::consts::PI).sqrt() * 1.5f64.sqrt();
        assert!((mc - exact).abs() < 0.01, "{mc} vs {exact}");
    }

    #[test]
    fn build_is_deterministic_and_shaped() {
        let data = toy();
        let prior = DpSpec::new(1.0, Centering::StandardNormal { dim: 2 }).unwrap();
        let mc = MonteCarlo::new(1, 1, Approx::StickBreaking);
        let c = build_dp_criterion(
            &prior,
            &data,
            &mc,
            PhiTransform::identity(),
            LossFn::squared(),
            RngHandle::new(5),
        )
        .unwrap();
        assert_eq!(c.num_measures(), 1);
        assert_eq!(c.measure(0).len(), 2);

        let mc = MonteCarlo::new(20, 30, Approx::MultinomialDirichlet);
        let phi = PhiTransform::new(1.0).unwrap();
        let a = build_dp_criterion(&prior, &data, &mc, phi, LossFn::squared(), RngHandle::new(5)).unwrap();
        let b = build_dp_criterion(
            &prior,
            &data,
            &mc.with_exec(ExecPolicy::Sequential),
            phi,
            LossFn::squared(),
            RngHandle::new(5),
        )
        .unwrap();
        assert_eq!(a.measures(), b.measures());
        assert_eq!(
            a.eval(&[0.2, 0.1]).unwrap().to_bits(),
            b.eval(&[0.2, 0.1]).unwrap().to_bits()
        );
        assert!(build_dp_criterion(
            &prior,
            &data,
            &MonteCarlo::new(5, 0, Approx::StickBreaking),
            phi,
            LossFn::squared(),
            RngHandle::new(5)
        )
        .is_err());
    }

    #[test]
    fn hdp_build_atom_counts() {
        let g = GroupedDataset::new(vec![toy(), toy().subset(&[0, 1])]).unwrap();
        let spec = HdpSpec {
            top_concentration: 1.0,
            group_concentrations: vec![1.0, 2.0],
            top_centering: Centering::StandardNormal { dim: 2 },
        };
        let mc = MonteCarlo::new(12, 8, Approx::MultinomialDirichlet).with_top_truncation(30);
        let c = build_hdp_criterion(
            &spec,
            &g,
            1,
            &mc,
            PhiTransform::identity(),
            LossFn::squared(),
            RngHandle::new(1),
        )
        .unwrap();
        assert_eq!(c.num_measures(), 8);
        assert!(c.measures().iter().all(|m| m.len() == 12));
    }

    proptest! {
        #[test]
        fn phi_monotone_and_convex(t1 in -50.0f64..50.0, t2 in -50.0f64..50.0, beta in 0.5f64..100.0, lambda in 0.0f64..1.0) {
            let phi = PhiTransform::new(beta).unwrap();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            if hi > lo {
                prop_assert!(phi.eval(hi).unwrap() > phi.eval(lo).unwrap());
            }
            let mid = lambda * t1 + (1.0 - lambda) * t2;
            let lhs = phi.eval(mid).unwrap();
            let rhs = lambda * phi.eval(t1).unwrap() + (1.0 - lambda) * phi.eval(t2).unwrap();
            prop_assert!(lhs <= rhs + 1e-9 * rhs.abs().max(1.0));
        }

        #[test]
        fn criterion_convex_and_above_jensen(
            t1 in prop::collection::vec(-2.0f64..2.0, 2),
            t2 in prop::collection::vec(-2.0f64..2.0, 2),
            lambda in 0.0f64..1.0,
            seed in 0u64..1000,
            kind in 0usize..3,
        ) {
            let loss = [LossFn::squared(), LossFn::pinball(0.3), LossFn::eps_insensitive(0.1)][kind];
            let prior = DpSpec::new(2.0, Centering::StandardNormal { dim: 2 }).unwrap();
            let mc = MonteCarlo::new(10, 6, Approx::MultinomialDirichlet).with_exec(ExecPolicy::Sequential);
            let phi = PhiTransform::new(3.0).unwrap();
            let c = build_dp_criterion(&prior, &toy(), &mc, phi, loss, RngHandle::new(seed)).unwrap();
            let mid: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let (v1, v2, vm) = (c.eval(&t1).unwrap(), c.eval(&t2).unwrap(), c.eval(&mid).unwrap());
            prop_assert!(vm <= lambda * v1 + (1.0 - lambda) * v2 + 1e-10 * v1.max(v2).max(1.0));
            // (1/M) sum phi(r_m) >= phi(mean r_m)
            let risks = c.measure_risks(&t1).unwrap();
            let mean = risks.iter().sum::<f64>() / risks.len() as f64;
            prop_assert!(v1 >= phi.eval(mean).unwrap() - 1e-12);
        }
    }
}
