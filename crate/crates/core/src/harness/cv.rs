//! Grid selection by k-fold cross-validation.

use serde::{Deserialize, Serialize};

use super::fit::{fit_method, FitRng};
use super::spec::{ExperimentSpec, Hyper};
use crate::data::GroupedDataset;
use crate::error::{DroError, Result};
use crate::exec::ExecPolicy;
use crate::losses::LossFn;
use crate::rng::RngHandle;

use super::split::grouped_kfold_split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub hyper: Hyper,
    /// `+inf` when a fit diverged.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub chosen: Hyper,
    pub scores: Vec<GridScore>,
}

/// Mean over groups of the unscaled loss of each group's coefficients.
pub fn grouped_risk(loss: &LossFn, thetas: &[Vec<f64>], data: &GroupedDataset) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for (theta, g) in thetas.iter().zip(data.groups()) {
        if g.is_empty() {
            continue;
        }
        total += loss.mean(theta, g.rows())?;
        count += 1;
    }
    if count == 0 {
        return Err(DroError::Empty("no rows to evaluate".into()));
    }
    Ok(total / count as f64)
}

/// First grid point with the smallest score; grids come in tie-break order.
pub fn argmin(scores: &[GridScore]) -> Result<Hyper> {
    let mut best: Option<&GridScore> = None;
    for s in scores {
        if s.score.is_finite() && best.is_none_or(|b| s.score < b.score) {
            best = Some(s);
        }
    }
    best.map(|b| b.hyper)
        .ok_or_else(|| DroError::Numerical("every grid point diverged".into()))
}

/// Fit `result` into a score, mapping numerical failures to `+inf`.
pub(crate) fn score_or_inf(result: Result<f64>) -> Result<f64> {
    match result {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Ok(f64::INFINITY),
        Err(e) if e.is_numerical() => {
            log::debug!("grid point scored +inf: {e}");
            Ok(f64::INFINITY)
        }
        Err(e) => Err(e),
    }
}

/// Score every grid point of method `method_idx` by mean validation risk over
/// `folds` folds of `data` and pick the best.
pub fn cross_validate(
    spec: &ExperimentSpec,
    method_idx: usize,
    data: &GroupedDataset,
    folds: usize,
    split_rng: RngHandle,
    fit_rng: &FitRng,
    exec: ExecPolicy,
) -> Result<CvOutcome> {
    let splits = grouped_kfold_split(data, folds, split_rng)?;
    let loss = spec.task.base_loss(spec.svr_delta);
    let mut scores = Vec::new();
    for hyper in spec.methods[method_idx].grid() {
        let mut total = 0.0;
        for (f, (train, valid)) in splits.iter().enumerate() {
            let rng = fit_rng.for_fold(f as u64 + 1);
            let risk =
                fit_method(spec, method_idx, &hyper, train, &rng, exec).and_then(|t| grouped_risk(&loss, &t, valid));
            total += score_or_inf(risk)?;
        }
        scores.push(GridScore {
            hyper,
            score: total / splits.len() as f64,
        });
    }
    Ok(CvOutcome {
        chosen: argmin(&scores)?,
        scores,
    })
}
