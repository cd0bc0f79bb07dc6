//! Replicated experiments: data per replicate, selection, fitting, metrics.

use serde::{Deserialize, Serialize};

use super::cv::{argmin, cross_validate, grouped_risk, score_or_inf, CvOutcome, GridScore};
use super::fit::{fit_method, mix_seed, FitRng};
use super::ingest::{read_csv_table, with_intercept, Standardizer};
use super::report::MetricsRow;
use super::spec::{DataSource, ExperimentSpec, Hyper, Selection, SelectionMetric};
use super::split::{grouped_train_test_split, split_head};
use crate::data::{GroupedDataset, TaskKind};
use crate::datagen::{contaminate, gen_sparse_linear, gen_sparse_logistic, gen_two_group_linear, sparse_coefficients};
use crate::error::{DroError, Result};
use crate::exec::ExecPolicy;
use crate::rng::RngHandle;

/// Replicate `r` owns streams `r * 2^20 ..` of the master seed.
pub const REPLICATE_STREAM_SHIFT: u32 = 20;
pub const TRAIN_STREAM: u64 = 0;
pub const TEST_STREAM: u64 = 1;
pub const SPLIT_STREAM: u64 = 2;
pub const CONTAMINATION_STREAM: u64 = 4;
/// Offset of the disjoint selection-pool split within the split stream family.
const POOL_STREAM: u64 = 5;
/// Key separating simulation-selection replicates from evaluation replicates.
const SELECTION_SALT: u64 = 0x5e1e_c7ed;

pub fn replicate_stream(r: usize) -> u64 {
    (r as u64) << REPLICATE_STREAM_SHIFT
}

/// Training pool, held-out test set and (for synthetic data) true coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateData {
    pub train: GroupedDataset,
    pub test: GroupedDataset,
    pub truth: Option<Vec<Vec<f64>>>,
}

/// Data loaded once per experiment.
#[derive(Debug, Clone)]
pub enum SourceData {
    Synthetic,
    Table(GroupedDataset),
}

pub fn load_source(spec: &ExperimentSpec) -> Result<SourceData> {
    match &spec.data {
        DataSource::Csv {
            path, response, group, ..
        } => Ok(SourceData::Table(read_csv_table(
            path,
            response,
            group.as_deref(),
            spec.task.kind(),
        )?)),
        _ => Ok(SourceData::Synthetic),
    }
}

/// Data of replicate `r` under master seed `seed`.
pub fn replicate_data(spec: &ExperimentSpec, source: &SourceData, seed: u64, r: usize) -> Result<ReplicateData> {
    let base = RngHandle::new(seed).with_stream(replicate_stream(r));
    let single = |ds| GroupedDataset::single(ds);
    match (&spec.data, source) {
        (
            DataSource::SparseLinear {
                n,
                d,
                rho,
                sigma,
                active,
                contamination,
            },
            _,
        ) => {
            let coeff = sparse_coefficients(*d, *active);
            let mut train = gen_sparse_linear(*n, *d, *rho, *sigma, &coeff, base.substream(TRAIN_STREAM))?;
            let test = gen_sparse_linear(spec.test_size, *d, *rho, *sigma, &coeff, base.substream(TEST_STREAM))?;
            if let Some(c) = contamination {
                let outlier = vec![c.outlier_coefficient; *d];
                train = contaminate(
                    &train,
                    c.fraction,
                    &outlier,
                    c.sigma.unwrap_or(*sigma),
                    base.substream(CONTAMINATION_STREAM),
                )?;
            }
            Ok(ReplicateData {
                train: single(train),
                test: single(test),
                truth: Some(vec![coeff]),
            })
        }
        (DataSource::SparseLogistic { n, d, rho, active }, _) => {
            let coeff = sparse_coefficients(*d, *active);
            let train = gen_sparse_logistic(*n, *d, *rho, &coeff, base.substream(TRAIN_STREAM))?;
            let test = gen_sparse_logistic(spec.test_size, *d, *rho, &coeff, base.substream(TEST_STREAM))?;
            Ok(ReplicateData {
                train: single(train),
                test: single(test),
                truth: Some(vec![coeff]),
            })
        }
        (DataSource::TwoGroupLinear { n, p, rho, sigma, c }, _) => {
            let (all, coeffs) =
                gen_two_group_linear(n + spec.test_size, *p, *rho, *sigma, *c, base.substream(TRAIN_STREAM))?;
            let (train, test) = split_head(&all, *n)?;
            Ok(ReplicateData {
                train,
                test,
                truth: Some(coeffs.to_vec()),
            })
        }
        (
            DataSource::Csv {
                standardize, intercept, ..
            },
            SourceData::Table(raw),
        ) => {
            let (mut train, mut test) = grouped_train_test_split(raw, spec.test_size, base.substream(TEST_STREAM))?;
            if *standardize {
                let st = Standardizer::fit(&train)?;
                train = st.apply(&train);
                test = st.apply(&test);
            }
            if *intercept {
                train = with_intercept(&train);
                test = with_intercept(&test);
            }
            Ok(ReplicateData {
                train,
                test,
                truth: None,
            })
        }
        (DataSource::Csv { .. }, SourceData::Synthetic) => Err(DroError::Spec("CSV source was not loaded".into())),
    }
}

/// Metrics of per-group coefficients on the test groups, averaged over groups.
pub fn evaluate(
    spec: &ExperimentSpec,
    replicate: usize,
    method: &str,
    thetas: &[Vec<f64>],
    test: &GroupedDataset,
    truth: Option<&[Vec<f64>]>,
) -> Result<MetricsRow> {
    let loss = spec.task.base_loss(spec.svr_delta);
    let s_count = thetas.len() as f64;
    let test_risk = grouped_risk(&loss, thetas, test)?;
    let rmse = (spec.task.kind() == TaskKind::Regression)
        .then(|| grouped_risk(&crate::losses::LossFn::squared(), thetas, test).map(f64::sqrt))
        .transpose()?;
    let distance_to_truth = truth.map(|t| {
        thetas
            .iter()
            .zip(t)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>())
            .sum::<f64>()
            / s_count
    });
    let coeff_norm = thetas
        .iter()
        .map(|t| t.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / s_count;
    let row = MetricsRow {
        replicate,
        method: method.to_string(),
        test_risk,
        rmse,
        distance_to_truth,
        coeff_norm,
    };
    if !row.is_finite() {
        return Err(DroError::Numerical(format!("non-finite metrics for method '{method}'")));
    }
    Ok(row)
}

fn selection_score(
    spec: &ExperimentSpec,
    metric: SelectionMetric,
    thetas: &[Vec<f64>],
    data: &ReplicateData,
) -> Result<f64> {
    match metric {
        SelectionMetric::TestRisk => grouped_risk(&spec.task.base_loss(spec.svr_delta), thetas, &data.test),
        SelectionMetric::DistanceToTruth => Ok(evaluate(spec, 0, "", thetas, &data.test, data.truth.as_deref())?
            .distance_to_truth
            .ok_or_else(|| DroError::Spec("distance-to-truth selection needs known coefficients".into()))?),
    }
}

/// Grid choice of every method from `simulations` separate replicates scored on
/// their test sets. Methods with a single grid point are not refitted.
pub fn simulation_select(
    spec: &ExperimentSpec,
    source: &SourceData,
    seed: u64,
    simulations: usize,
    metric: SelectionMetric,
    exec: ExecPolicy,
) -> Result<Vec<CvOutcome>> {
    let sim_seed = mix_seed(&[seed, SELECTION_SALT]);
    let per_sim: Vec<Vec<Vec<f64>>> = exec.try_map(simulations, |i| {
        let data = replicate_data(spec, source, sim_seed, i)?;
        let fit_rng = FitRng::new(sim_seed, replicate_stream(i));
        spec.methods
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let grid = m.grid();
                if grid.len() == 1 {
                    return Ok(vec![0.0]);
                }
                grid.iter()
                    .map(|h| {
                        score_or_inf(
                            fit_method(spec, k, h, &data.train, &fit_rng, ExecPolicy::Sequential)
                                .and_then(|t| selection_score(spec, metric, &t, &data)),
                        )
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    spec.methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let scores: Vec<GridScore> = m
                .grid()
                .into_iter()
                .enumerate()
                .map(|(g, hyper)| GridScore {
                    hyper,
                    score: per_sim.iter().map(|s| s[k][g]).sum::<f64>() / simulations as f64,
                })
                .collect();
            Ok(CvOutcome {
                chosen: argmin(&scores)?,
                scores,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replicate: usize,
    pub method: String,
    pub numerical: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    /// `None` for a selection shared by all replicates.
    pub replicate: Option<usize>,
    pub method: String,
    pub outcome: CvOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<Failure>,
    pub selections: Vec<SelectionRecord>,
}

struct ReplicateOutcome {
    rows: Vec<MetricsRow>,
    failures: Vec<Failure>,
    selections: Vec<SelectionRecord>,
}

fn failure(replicate: usize, method: &str, e: &DroError) -> Failure {
    Failure {
        replicate,
        method: method.to_string(),
        numerical: e.is_numerical(),
        message: e.to_string(),
    }
}

/// Hyperparameters of method `k` for one replicate, and the selection record
/// when one was made here.
fn choose(
    spec: &ExperimentSpec,
    k: usize,
    data: &ReplicateData,
    r: usize,
    seed: u64,
    shared: Option<&[CvOutcome]>,
    exec: ExecPolicy,
) -> Result<(Hyper, GroupedDataset, Option<CvOutcome>)> {
    let grid = spec.methods[k].grid();
    let base = RngHandle::new(seed).with_stream(replicate_stream(r));
    match spec.selection {
        Selection::KFold { folds, disjoint_pool } => {
            let (select_pool, fit_pool) = if disjoint_pool {
                let half = data.train.total_len() / 2;
                let (fit, select) = grouped_train_test_split(&data.train, half, base.substream(POOL_STREAM))?;
                (select, fit)
            } else {
                (data.train.clone(), data.train.clone())
            };
            if grid.len() == 1 {
                return Ok((grid[0], fit_pool, None));
            }
            let fit_rng = FitRng::new(seed, replicate_stream(r));
            let cv = cross_validate(
                spec,
                k,
                &select_pool,
                folds,
                base.substream(SPLIT_STREAM),
                &fit_rng,
                exec,
            )?;
            Ok((cv.chosen, fit_pool, Some(cv)))
        }
        Selection::Simulation { .. } => {
            let chosen = shared.map_or(grid[0], |s| s[k].chosen);
            Ok((chosen, data.train.clone(), None))
        }
        Selection::None => Ok((grid[0], data.train.clone(), None)),
    }
}

fn run_replicate(
    spec: &ExperimentSpec,
    source: &SourceData,
    seed: u64,
    r: usize,
    shared: Option<&[CvOutcome]>,
    exec: ExecPolicy,
) -> ReplicateOutcome {
    let mut out = ReplicateOutcome {
        rows: Vec::new(),
        failures: Vec::new(),
        selections: Vec::new(),
    };
    let data = match replicate_data(spec, source, seed, r) {
        Ok(d) => d,
        Err(e) => {
            out.failures.push(failure(r, "*", &e));
            return out;
        }
    };
    let fit_rng = FitRng::new(seed, replicate_stream(r));
    for (k, method) in spec.methods.iter().enumerate() {
        let result = choose(spec, k, &data, r, seed, shared, exec).and_then(|(hyper, pool, cv)| {
            if let Some(cv) = cv {
                out.selections.push(SelectionRecord {
                    replicate: Some(r),
                    method: method.label.clone(),
                    outcome: cv,
                });
            }
            let thetas = fit_method(spec, k, &hyper, &pool, &fit_rng, exec)?;
            evaluate(spec, r, &method.label, &thetas, &data.test, data.truth.as_deref())
        });
        match result {
            Ok(row) => out.rows.push(row),
            Err(e) => {
                log::warn!("replicate {r}, method '{}': {e}", method.label);
                out.failures.push(failure(r, &method.label, &e));
            }
        }
    }
    out
}

/// Run every replicate of `spec` under master seed `seed`.
///
/// Replicates run concurrently under `exec`; each replicate is sequential inside.
/// Rows come back ordered by replicate, then by method order in the spec.
/// Per-replicate failures are collected instead of aborting.
pub fn run_experiment(spec: &ExperimentSpec, seed: u64, exec: ExecPolicy) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let source = load_source(spec)?;
    let inner = if spec.replications > 1 {
        ExecPolicy::Sequential
    } else {
        exec
    };
    let mut selections = Vec::new();
    let shared = match spec.selection {
        Selection::Simulation { simulations, metric } => {
            let outcomes = simulation_select(spec, &source, seed, simulations, metric, exec)?;
            for (m, o) in spec.methods.iter().zip(&outcomes) {
                selections.push(SelectionRecord {
                    replicate: None,
                    method: m.label.clone(),
                    outcome: o.clone(),
                });
            }
            Some(outcomes)
        }
        _ => None,
    };
    let per_rep = exec.map(spec.replications, |r| {
        run_replicate(spec, &source, seed, r, shared.as_deref(), inner)
    });
    let mut outcome = ExperimentOutcome {
        rows: Vec::new(),
        failures: Vec::new(),
        selections,
    };
    for rep in per_rep {
        outcome.rows.extend(rep.rows);
        outcome.failures.extend(rep.failures);
        outcome.selections.extend(rep.selections);
    }
    if !outcome.failures.is_empty() {
        log::warn!("{} fits failed and were excluded", outcome.failures.len());
    }
    Ok(outcome)
}

/// A method fitted once on a whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMethod {
    pub method: String,
    pub hyper: Hyper,
    pub thetas: Vec<Vec<f64>>,
    pub selection: Option<CvOutcome>,
}

/// Fit every method of `spec` on `data`, selecting by k-fold cross-validation
/// when the spec asks for it.
pub fn fit_all(spec: &ExperimentSpec, data: &GroupedDataset, seed: u64, exec: ExecPolicy) -> Result<Vec<FittedMethod>> {
    let fit_rng = FitRng::new(seed, 0);
    let split = RngHandle::new(seed).with_stream(SPLIT_STREAM);
    spec.methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let grid = m.grid();
            let selection = match spec.selection {
                Selection::KFold { folds, .. } if grid.len() > 1 => {
                    Some(cross_validate(spec, k, data, folds, split, &fit_rng, exec)?)
                }
                _ => None,
            };
            let hyper = selection.as_ref().map_or(grid[0], |s| s.chosen);
            let thetas = fit_method(spec, k, &hyper, data, &fit_rng, exec)?;
            Ok(FittedMethod {
                method: m.label.clone(),
                hyper,
                thetas,
                selection,
            })
        })
        .collect()
}

/// Cross-validation scores of every method on a dataset, for inspection.
pub fn cv_all(
    spec: &ExperimentSpec,
    data: &GroupedDataset,
    folds: usize,
    seed: u64,
    exec: ExecPolicy,
) -> Result<Vec<(String, CvOutcome)>> {
    let fit_rng = FitRng::new(seed, 0);
    let split = RngHandle::new(seed).with_stream(SPLIT_STREAM);
    spec.methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            Ok((
                m.label.clone(),
                cross_validate(spec, k, data, folds, split, &fit_rng, exec)?,
            ))
        })
        .collect()
}
