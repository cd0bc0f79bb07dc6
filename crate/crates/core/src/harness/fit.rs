//! Fitting one method at one grid point, plus the closed-form and penalized
//! baselines.

use nalgebra::{DMatrix, DVector};

use super::spec::{ExperimentSpec, Hyper, MethodSpec, Model, Pooling};
use crate::criterion::{build_dp_criterion, build_hdp_criterion, empirical_criterion, ApproxCriterion, PhiTransform};
use crate::data::{Dataset, GroupedDataset};
use crate::error::{DroError, Result};
use crate::exec::ExecPolicy;
use crate::losses::{LossFn, LossKind};
use crate::optimizer::{run_doro_sgd, SgdConfig};
use crate::rng::RngHandle;
use crate::sampling::{DpSpec, HdpSpec};

/// Random-stream assignment for the fits of one replicate.
///
/// Criterion draws are keyed by `(seed, method, group, fold)` and share the
/// replicate's stream base, so every grid point of a method sees the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitRng {
    pub seed: u64,
    pub stream: u64,
    pub fold: u64,
}

/// Stream offset used by the SGD batch shuffler.
pub const SGD_STREAM: u64 = 3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a key tuple into a generator seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5151_5eed_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

impl FitRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        FitRng { seed, stream, fold: 0 }
    }

    pub fn for_fold(self, fold: u64) -> Self {
        FitRng { fold, ..self }
    }

    pub fn criterion(&self, method: usize, group: usize) -> RngHandle {
        RngHandle::new(mix_seed(&[self.seed, method as u64, group as u64, self.fold])).with_stream(self.stream)
    }

    pub fn sgd(&self) -> RngHandle {
        RngHandle::new(self.seed).with_stream(self.stream + SGD_STREAM)
    }
}

fn concentration(value: Option<f64>, per_sample: bool, n: usize) -> Result<f64> {
    let v = value.ok_or_else(|| DroError::Spec("missing concentration value".into()))?;
    Ok(if per_sample && n > 0 { v / n as f64 } else { v })
}

fn sgd_fit(
    spec: &ExperimentSpec,
    method: &MethodSpec,
    c: &ApproxCriterion,
    dim: usize,
    rng: RngHandle,
) -> Result<Vec<f64>> {
    let sgd = spec.method_sgd(method);
    let cfg = SgdConfig::new(vec![0.0; dim], sgd.schedule()?, sgd.passes)
        .with_order(sgd.order)
        .with_epsilon(method.epsilon);
    Ok(run_doro_sgd(c, &cfg, rng)?.theta_final)
}

/// Per-group coefficient vectors of `method` (the `method_idx`-th of `spec`)
/// fitted on `train` at grid point `hyper`.
pub fn fit_method(
    spec: &ExperimentSpec,
    method_idx: usize,
    hyper: &Hyper,
    train: &GroupedDataset,
    rng: &FitRng,
    exec: ExecPolicy,
) -> Result<Vec<Vec<f64>>> {
    let method = &spec.methods[method_idx];
    let groups = train.num_groups();
    let fit_one = |ds: &Dataset, slot: usize| -> Result<Vec<f64>> {
        let crit_rng = rng.criterion(method_idx, slot);
        match method.model {
            Model::DP => {
                let alpha = concentration(hyper.alpha, method.alpha_per_sample, ds.len())?;
                let prior = DpSpec::new(alpha, spec.task.centering(ds.dim()))?;
                let mc = spec.method_mc(method).monte_carlo(exec);
                let c = build_dp_criterion(&prior, ds, &mc, hyper.phi()?, spec.loss(), crit_rng)?;
                sgd_fit(spec, method, &c, ds.dim(), rng.sgd())
            }
            Model::ERM => {
                let c = empirical_criterion(ds, PhiTransform::identity(), spec.loss())?.with_exec(exec);
                sgd_fit(spec, method, &c, ds.dim(), rng.sgd())
            }
            Model::RidgeClosedForm => {
                let alpha = concentration(hyper.alpha, method.alpha_per_sample, ds.len())?;
                ridge_closed_form(ds, alpha)
            }
            Model::OLS => ols(ds),
            Model::Lasso => {
                let lambda = hyper.lambda.ok_or_else(|| DroError::Spec("missing lambda".into()))?;
                lasso(ds, &spec.task.base_loss(spec.svr_delta), lambda, LASSO_ITERATIONS)
            }
            Model::HDP => unreachable!("HDP fits all groups jointly"),
        }
    };
    match (method.model, method.pooling) {
        (Model::HDP, _) => {
            let n_total = train.total_len();
            let alpha0 = concentration(hyper.alpha0, method.alpha_per_sample, n_total)?;
            let alpha_s = train
                .groups()
                .iter()
                .map(|g| concentration(hyper.alpha_s, method.alpha_per_sample, g.len()))
                .collect::<Result<Vec<_>>>()?;
            let hdp = HdpSpec {
                top_concentration: alpha0,
                group_concentrations: alpha_s,
                top_centering: spec.task.centering(train.dim()),
            };
            let mc = spec.method_mc(method).monte_carlo(exec);
            (0..groups)
                .map(|s| {
                    let c = build_hdp_criterion(
                        &hdp,
                        train,
                        s,
                        &mc,
                        hyper.phi()?,
                        spec.loss(),
                        rng.criterion(method_idx, s),
                    )?;
                    sgd_fit(spec, method, &c, train.dim(), rng.sgd())
                })
                .collect()
        }
        (_, Pooling::Pooled) => {
            let theta = fit_one(&train.pooled(), 0)?;
            Ok(vec![theta; groups])
        }
        (_, Pooling::Separate) => train.groups().iter().enumerate().map(|(s, g)| fit_one(g, s)).collect(),
    }
}

fn design(ds: &Dataset) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(ds.len(), ds.dim(), |i, k| ds.row(i).x[k]);
    let y = DVector::from_iterator(ds.len(), ds.responses());
    (x, y)
}

/// `(X^T X + alpha I)^{-1} X^T y`
pub fn ridge_closed_form(ds: &Dataset, alpha: f64) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(DroError::Empty("ridge fit on an empty dataset".into()));
    }
    let (x, y) = design(ds);
    let gram = x.transpose() * &x + DMatrix::identity(ds.dim(), ds.dim()) * alpha;
    let rhs = x.transpose() * y;
    let chol = gram
        .cholesky()
        .ok_or_else(|| DroError::Numerical("ridge system is not positive definite".into()))?;
    Ok(chol.solve(&rhs).iter().cloned().collect())
}

/// Minimum-norm least squares via the SVD.
pub fn ols(ds: &Dataset) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(DroError::Empty("least squares on an empty dataset".into()));
    }
    let (x, y) = design(ds);
    let svd = x.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(1.0);
    let theta = svd.solve(&y, tol).map_err(|e| DroError::Numerical(e.to_string()))?;
    Ok(theta.iter().cloned().collect())
}

/// Proximal-gradient iterations for the L1-penalized fit.
pub const LASSO_ITERATIONS: usize = 5000;

/// Minimize `(1/n) sum_i h(theta, xi_i) + lambda |theta|_1` by proximal gradient
/// with step `1/L`, `L` a curvature bound of the mean loss.
pub fn lasso(ds: &Dataset, loss: &LossFn, lambda: f64, iterations: usize) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(DroError::Empty("lasso fit on an empty dataset".into()));
    }
    let (x, _) = design(ds);
    let n = ds.len() as f64;
    let gram = x.transpose() * &x / n;
    let top_eig = gram.symmetric_eigenvalues().max().max(1e-12);
    let curvature = match loss.kind {
        LossKind::Squared => 2.0,
        LossKind::Logistic => 0.25,
        _ => 1.0,
    };
    let step = 1.0 / (curvature * loss.scale * top_eig);
    let mut theta = vec![0.0; ds.dim()];
    for _ in 0..iterations {
        let mut grad = vec![0.0; ds.dim()];
        for row in ds.rows() {
            let (_, slope) = loss.value_and_slope(&theta, row)?;
            for (g, xk) in grad.iter_mut().zip(row.x.iter()) {
                *g += slope * xk / n;
            }
        }
        let mut delta = 0.0f64;
        for (t, g) in theta.iter_mut().zip(&grad) {
            let z = *t - step * g;
            let next = z.signum() * (z.abs() - step * lambda).max(0.0);
            delta = delta.max((next - *t).abs());
            *t = next;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(DroError::Numerical("lasso iterates diverged".into()));
        }
        if delta < 1e-12 {
            break;
        }
    }
    Ok(theta)
}
