//! Synthetic designs: sparse linear and logistic models with equicorrelated
//! Gaussian covariates, two related regression groups, and response
//! contamination.

use rand::Rng;

use crate::data::{dot, Dataset, GroupedDataset, Observation, TaskKind};
use crate::error::{DroError, Result};
use crate::rng::{standard_normal, uniform_open01, RngHandle};

/// `N(0, (1 - rho) I + rho 1 1^T)` in dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquicorrGaussian {
    dim: usize,
    rho: f64,
    // symmetric square root (1-rho)^{1/2} I + c 1 1^T
    diag: f64,
    coupling: f64,
}

impl EquicorrGaussian {
    pub fn new(dim: usize, rho: f64) -> Result<Self> {
        if dim == 0 {
            return Err(DroError::invalid("equicorrelated Gaussian needs dim >= 1"));
        }
        let lower = if dim > 1 {
            -1.0 / (dim as f64 - 1.0)
        } else {
            f64::NEG_INFINITY
        };
        if !(rho > lower && rho < 1.0) {
            return Err(DroError::invalid(format!(
                "correlation {rho} does not give a positive definite {dim}x{dim} equicorrelation matrix"
            )));
        }
        let d = dim as f64;
        let diag = (1.0 - rho).sqrt();
        let coupling = ((1.0 - rho + d * rho).sqrt() - diag) / d;
        Ok(EquicorrGaussian {
            dim,
            rho,
            diag,
            coupling,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim).map(|_| standard_normal(rng)).collect();
        let shared = self.coupling * z.iter().sum::<f64>();
        z.into_iter().map(|v| self.diag * v + shared).collect()
    }
}

/// `(1, ..., 1, 0, ..., 0)` with `active` leading ones.
pub fn sparse_coefficients(dim: usize, active: usize) -> Vec<f64> {
    (0..dim).map(|k| if k < active { 1.0 } else { 0.0 }).collect()
}

fn check_coeff(coeff: &[f64], dim: usize) -> Result<()> {
    if coeff.len() != dim {
        return Err(DroError::DimensionMismatch {
            expected: dim,
            got: coeff.len(),
        });
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(DroError::invalid(format!(
            "noise level must be finite and nonnegative, got {sigma}"
        )));
    }
    Ok(())
}

/// `x ~ N(0, Sigma_rho)`, `y ~ N(coeff^T x, sigma^2)`.
pub fn gen_sparse_linear(n: usize, d: usize, rho: f64, sigma: f64, coeff: &[f64], rng: RngHandle) -> Result<Dataset> {
    let cov = EquicorrGaussian::new(d, rho)?;
    check_coeff(coeff, d)?;
    check_sigma(sigma)?;
    let mut r = rng.rng();
    let rows = (0..n)
        .map(|_| {
            let x = cov.sample(&mut r);
            let y = dot(&x, coeff) + sigma * standard_normal(&mut r);
            Observation::new(x, y)
        })
        .collect();
    Dataset::new(rows, d, TaskKind::Regression)
}

/// `x ~ N(0, Sigma_rho)`, `y = +1` with probability `1 / (1 + exp(-x^T coeff))`, else `-1`.
pub fn gen_sparse_logistic(n: usize, d: usize, rho: f64, coeff: &[f64], rng: RngHandle) -> Result<Dataset> {
    let cov = EquicorrGaussian::new(d, rho)?;
    check_coeff(coeff, d)?;
    let mut r = rng.rng();
    let rows = (0..n)
        .map(|_| {
            let x = cov.sample(&mut r);
            let p = 1.0 / (1.0 + (-dot(&x, coeff)).exp());
            let y = if uniform_open01(&mut r) < p { 1.0 } else { -1.0 };
            Observation::new(x, y)
        })
        .collect();
    Dataset::new(rows, d, TaskKind::BinaryLabel)
}

/// Number of active coordinates per group in [`gen_two_group_linear`].
pub const TWO_GROUP_ACTIVE: usize = 5;
/// Correlation of the joint coefficient law in [`gen_two_group_linear`].
pub const TWO_GROUP_COEFF_CORR: f64 = 0.3;

/// Two regression groups with dependent sparse coefficients.
///
/// The ten active coefficients (five per group) are drawn jointly from
/// `N(1, c V)` with `V` unit-diagonal and 0.3 off-diagonal; the other `p - 5`
/// coordinates are zero. Each group then has `n` rows from [`gen_sparse_linear`].
pub fn gen_two_group_linear(
    n: usize,
    p: usize,
    rho: f64,
    sigma: f64,
    c: f64,
    rng: RngHandle,
) -> Result<(GroupedDataset, [Vec<f64>; 2])> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(DroError::invalid(format!(
            "coefficient dispersion c must be positive, got {c}"
        )));
    }
    if p < TWO_GROUP_ACTIVE {
        return Err(DroError::invalid(format!("need p >= {TWO_GROUP_ACTIVE}, got {p}")));
    }
    let joint = EquicorrGaussian::new(2 * TWO_GROUP_ACTIVE, TWO_GROUP_COEFF_CORR)?;
    let draw = joint.sample(&mut rng.rng());
    let coeffs: [Vec<f64>; 2] = std::array::from_fn(|g| {
        let mut b = vec![0.0; p];
        for k in 0..TWO_GROUP_ACTIVE {
            b[k] = 1.0 + c.sqrt() * draw[g * TWO_GROUP_ACTIVE + k];
        }
        b
    });
    let groups = [0, 1]
        .iter()
        .map(|&g| gen_sparse_linear(n, p, rho, sigma, &coeffs[g], rng.substream(1 + g as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok((GroupedDataset::new(groups)?, coeffs))
}

/// Replace the responses of the last `ceil(fraction * n)` rows with
/// `y ~ N(outlier_coeff^T x, sigma^2)`; covariates are kept.
pub fn contaminate(ds: &Dataset, fraction: f64, outlier_coeff: &[f64], sigma: f64, rng: RngHandle) -> Result<Dataset> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(DroError::invalid(format!(
            "contamination fraction must lie in [0, 0.5), got {fraction}"
        )));
    }
    check_coeff(outlier_coeff, ds.dim())?;
    check_sigma(sigma)?;
    let k = crate::optimizer::drop_count(fraction, ds.len());
    let mut r = rng.rng();
    let mut out = ds.clone();
    for i in ds.len() - k..ds.len() {
        let y = ds.row(i).predict(outlier_coeff) + sigma * standard_normal(&mut r);
        out = out.with_response(i, y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cov(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = rows.len() as f64;
        let d = rows[0].len();
        let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn equicorr_validity() {
        assert!(EquicorrGaussian::new(5, -0.25).is_err());
        assert!(EquicorrGaussian::new(5, -0.24).is_ok());
        assert!(EquicorrGaussian::new(5, 1.0).is_err());
        assert!(EquicorrGaussian::new(1, -5.0).is_ok());
        assert!(EquicorrGaussian::new(0, 0.0).is_err());
        assert!(gen_sparse_linear(3, 4, 1.5, 0.5, &[0.0; 4], RngHandle::new(0)).is_err());
    }

    #[test]
    fn covariance_by_law_of_large_numbers() {
        let ds = gen_sparse_linear(100_000, 6, 0.3, 0.5, &sparse_coefficients(6, 2), RngHandle::new(1)).unwrap();
        let xs: Vec<Vec<f64>> = ds.rows().iter().map(|r| r.x.to_vec()).collect();
        let cov = sample_cov(&xs);
        for (a, row) in cov.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                let target = if a == b { 1.0 } else { 0.3 };
                assert!((v - target).abs() < 0.02, "cov[{a}][{b}] = {v}");
            }
        }
    }

    #[test]
    fn noiseless_zero_coefficients() {
        let ds = gen_sparse_linear(50, 3, 0.3, 0.0, &[0.0; 3], RngHandle::new(2)).unwrap();
        assert!(ds.responses().all(|y| y == 0.0));
    }

    #[test]
    fn same_seed_same_data() {
        let c = sparse_coefficients(10, 5);
        let a = gen_sparse_linear(20, 10, 0.3, 0.5, &c, RngHandle::new(7)).unwrap();
        let b = gen_sparse_linear(20, 10, 0.3, 0.5, &c, RngHandle::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn logistic_labels() {
        let n = 40_000;
        let ds = gen_sparse_logistic(n, 4, 0.3, &[0.0; 4], RngHandle::new(3)).unwrap();
        let mean = ds.responses().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());

        let coeff = vec![200.0, 0.0, 0.0, 0.0];
        let ds = gen_sparse_logistic(5_000, 4, 0.3, &coeff, RngHandle::new(4)).unwrap();
        let agree = ds.rows().iter().filter(|r| r.y == r.predict(&coeff).signum()).count();
        assert!(agree as f64 / 5_000.0 > 0.99);
    }

    #[test]
    fn two_group_shapes_and_correlation() {
        let (g, coeffs) = gen_two_group_linear(30, 12, 0.3, 0.5, 0.2, RngHandle::new(5)).unwrap();
        assert_eq!(g.num_groups(), 2);
        assert_eq!(g.group(0).len(), 30);
        assert!(coeffs.iter().all(|b| b.len() == 12 && b[5..].iter().all(|&v| v == 0.0)));
        assert!(gen_two_group_linear(30, 12, 0.3, 0.5, 0.0, RngHandle::new(5)).is_err());

        // correlation between matching active coordinates over many coefficient draws
        let reps = 10_000;
        let mut pairs = Vec::with_capacity(reps);
        for r in 0..reps {
            let (_, b) = gen_two_group_linear(0, 5, 0.3, 0.5, 0.4, RngHandle::new(r as u64)).unwrap();
            pairs.push((b[0][0], b[1][0]));
        }
        let n = reps as f64;
        let (ma, mb) = (
            pairs.iter().map(|p| p.0).sum::<f64>() / n,
            pairs.iter().map(|p| p.1).sum::<f64>() / n,
        );
        let cov = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / n;
        let va = pairs.iter().map(|p| (p.0 - ma).powi(2)).sum::<f64>() / n;
        let vb = pairs.iter().map(|p| (p.1 - mb).powi(2)).sum::<f64>() / n;
        let corr = cov / (va * vb).sqrt();
        assert!((corr - 0.3).abs() < 0.04, "corr {corr}");
        assert!((va - 0.4).abs() < 0.04, "var {va}");
    }

    #[test]
    fn small_dispersion_is_nearly_homogeneous() {
        let (_, b) = gen_two_group_linear(0, 7, 0.3, 0.5, 1e-12, RngHandle::new(6)).unwrap();
        for g in &b {
            assert!(g[..5].iter().all(|v| (v - 1.0).abs() < 1e-4));
        }
    }

    #[test]
    fn contamination() {
        let coeff = sparse_coefficients(10, 5);
        let ds = gen_sparse_linear(100, 10, 0.3, 0.5, &coeff, RngHandle::new(8)).unwrap();
        assert_eq!(contaminate(&ds, 0.0, &[-10.0; 10], 0.5, RngHandle::new(9)).unwrap(), ds);
        let bad = contaminate(&ds, 0.05, &[-10.0; 10], 0.5, RngHandle::new(9)).unwrap();
        for i in 0..100 {
            assert_eq!(bad.row(i).x, ds.row(i).x);
            let changed = bad.row(i).y != ds.row(i).y;
            assert_eq!(changed, i >= 95);
        }
        let resid = |i: usize| (bad.row(i).y - bad.row(i).predict(&coeff)).abs();
        let clean_max = (0..95).map(resid).fold(0.0, f64::max);
        let dirty_min = (95..100).map(resid).fold(f64::INFINITY, f64::min);
        assert!(dirty_min > clean_max);
        assert!(contaminate(&ds, 0.5, &[-10.0; 10], 0.5, RngHandle::new(9)).is_err());
    }
}
