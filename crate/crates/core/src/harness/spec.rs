//! Experiment specification, read from TOML.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::criterion::{MonteCarlo, PhiTransform};
use crate::data::TaskKind;
use crate::error::{DroError, Result};
use crate::exec::ExecPolicy;
use crate::losses::LossFn;
use crate::optimizer::{BatchOrder, StepSchedule};
use crate::sampling::{Approx, Centering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    LinReg,
    LogReg,
    MedReg,
    SmoothHingeSVM,
    SVR,
}

impl Task {
    pub fn kind(self) -> TaskKind {
        match self {
            Task::LogReg | Task::SmoothHingeSVM => TaskKind::BinaryLabel,
            _ => TaskKind::Regression,
        }
    }

    /// Loss with unit scale and this task's shape parameters.
    pub fn base_loss(self, svr_delta: f64) -> LossFn {
        match self {
            Task::LinReg => LossFn::squared(),
            Task::LogReg => LossFn::logistic(),
            Task::MedReg => LossFn::pinball(0.5),
            Task::SmoothHingeSVM => LossFn::smooth_hinge(),
            Task::SVR => LossFn::eps_insensitive(svr_delta),
        }
    }

    /// Prior centering over `(y, x)` with `x` in `R^dim`.
    pub fn centering(self, dim: usize) -> Centering {
        match self.kind() {
            TaskKind::Regression => Centering::StandardNormal { dim },
            TaskKind::BinaryLabel => Centering::ProductBinaryNormal { dim },
        }
    }
}

/// Response contamination of the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contamination {
    pub fraction: f64,
    /// Every coordinate of the outlier coefficient vector.
    pub outlier_coefficient: f64,
    /// Noise level of outlying responses; defaults to the clean noise level.
    #[serde(default)]
    pub sigma: Option<f64>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    SparseLinear {
        n: usize,
        d: usize,
        rho: f64,
        sigma: f64,
        active: usize,
        #[serde(default)]
        contamination: Option<Contamination>,
    },
    SparseLogistic {
        n: usize,
        d: usize,
        rho: f64,
        active: usize,
    },
    TwoGroupLinear {
        n: usize,
        p: usize,
        rho: f64,
        sigma: f64,
        c: f64,
    },
    Csv {
        path: PathBuf,
        response: String,
        #[serde(default)]
        group: Option<String>,
        #[serde(default = "default_true")]
        standardize: bool,
        #[serde(default)]
        intercept: bool,
    },
}

impl DataSource {
    pub fn is_synthetic(&self) -> bool {
        !matches!(self, DataSource::Csv { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    DP,
    HDP,
    ERM,
    RidgeClosedForm,
    OLS,
    Lasso,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Pooled,
    Separate,
}

/// A scalar or a list in the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    One(f64),
    Many(Vec<f64>),
}

impl Default for Grid {
    fn default() -> Self {
        Grid::Many(Vec::new())
    }
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::One(v) => vec![*v],
            Grid::Many(v) => v.clone(),
        }
    }

    fn is_empty(&self) -> bool {
        matches!(self, Grid::Many(v) if v.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub truncation: usize,
    #[serde(default)]
    pub top_truncation: Option<usize>,
    pub samples: usize,
    #[serde(default = "default_approx")]
    pub approx: Approx,
}

fn default_approx() -> Approx {
    Approx::MultinomialDirichlet
}

impl McSpec {
    pub fn monte_carlo(&self, exec: ExecPolicy) -> MonteCarlo {
        MonteCarlo::new(self.truncation, self.samples, self.approx)
            .with_top_truncation(self.top_truncation.unwrap_or(self.truncation))
            .with_exec(exec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSpec {
    pub a: f64,
    pub b: f64,
    pub passes: usize,
    #[serde(default = "default_order")]
    pub order: BatchOrder,
}

fn default_order() -> BatchOrder {
    BatchOrder::Cyclic
}

impl SgdSpec {
    pub fn schedule(&self) -> Result<StepSchedule> {
        StepSchedule::new(self.a, self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub label: String,
    pub model: Model,
    /// Absent means `beta = inf` (identity transform).
    #[serde(default)]
    pub beta: Option<Grid>,
    #[serde(default)]
    pub alpha: Grid,
    #[serde(default)]
    pub alpha0: Grid,
    #[serde(default)]
    pub alpha_s: Grid,
    #[serde(default)]
    pub lambda: Grid,
    /// Read concentration grids as `a` in `alpha = a / n`.
    #[serde(default)]
    pub alpha_per_sample: bool,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default)]
    pub mc: Option<McSpec>,
    #[serde(default)]
    pub sgd: Option<SgdSpec>,
}

/// One point of a method's hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub alpha: Option<f64>,
    pub alpha0: Option<f64>,
    pub alpha_s: Option<f64>,
    pub beta: f64,
    pub lambda: Option<f64>,
}

impl Hyper {
    pub fn phi(&self) -> Result<PhiTransform> {
        PhiTransform::new(self.beta)
    }
}

impl std::fmt::Display for Hyper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        for (name, v) in [
            ("alpha", self.alpha),
            ("alpha0", self.alpha0),
            ("alpha_s", self.alpha_s),
            ("lambda", self.lambda),
        ] {
            if let Some(v) = v {
                parts.push(format!("{name}={v}"));
            }
        }
        parts.push(format!("beta={}", self.beta));
        write!(f, "{}", parts.join(" "))
    }
}

impl MethodSpec {
    fn betas(&self) -> Vec<f64> {
        self.beta.as_ref().map_or(vec![f64::INFINITY], Grid::values)
    }

    fn uses(&self) -> (bool, bool, bool, bool) {
        match self.model {
            Model::DP | Model::RidgeClosedForm => (true, false, false, false),
            Model::HDP => (false, true, true, false),
            Model::Lasso => (false, false, false, true),
            Model::ERM | Model::OLS => (false, false, false, false),
        }
    }

    /// Grid points in tie-break order: smallest alpha, then alpha0, then alpha_s,
    /// then largest beta, then smallest lambda.
    pub fn grid(&self) -> Vec<Hyper> {
        let (ua, u0, us, ul) = self.uses();
        let opt = |used: bool, g: &Grid| -> Vec<Option<f64>> {
            if used {
                let mut v = g.values();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v.into_iter().map(Some).collect()
            } else {
                vec![None]
            }
        };
        let mut betas = if matches!(self.model, Model::DP | Model::HDP) {
            self.betas()
        } else {
            vec![f64::INFINITY]
        };
        betas.sort_by(|a, b| b.total_cmp(a));
        betas.dedup();
        let mut out = Vec::new();
        for alpha in opt(ua, &self.alpha) {
            for alpha0 in opt(u0, &self.alpha0) {
                for alpha_s in opt(us, &self.alpha_s) {
                    for &beta in &betas {
                        for lambda in opt(ul, &self.lambda) {
                            out.push(Hyper {
                                alpha,
                                alpha0,
                                alpha_s,
                                beta,
                                lambda,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    fn validate(&self, task: Task) -> Result<()> {
        let err = |m: &str| Err(DroError::Spec(format!("method '{}': {m}", self.label)));
        let (ua, u0, us, ul) = self.uses();
        for (used, grid, name) in [
            (ua, &self.alpha, "alpha"),
            (u0, &self.alpha0, "alpha0"),
            (us, &self.alpha_s, "alpha_s"),
            (ul, &self.lambda, "lambda"),
        ] {
            if used && grid.is_empty() {
                return err(&format!("{name} grid must be nonempty"));
            }
            if grid.values().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return err(&format!("{name} values must be finite and positive"));
            }
        }
        if let Some(b) = &self.beta {
            if b.is_empty() || b.values().iter().any(|&v| !(v > 0.0)) {
                return err("beta values must be positive");
            }
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return err("epsilon must lie in [0, 1)");
        }
        if self.epsilon > 0.0 && !matches!(self.model, Model::DP | Model::HDP | Model::ERM) {
            return err("epsilon applies only to SGD-fitted models");
        }
        if matches!(self.model, Model::RidgeClosedForm | Model::OLS) && task != Task::LinReg {
            return err("closed-form least squares needs task LinReg");
        }
        if let Some(mc) = &self.mc {
            validate_mc(mc)?;
        }
        if let Some(sgd) = &self.sgd {
            validate_sgd(sgd)?;
        }
        Ok(())
    }

    pub fn uses_sgd(&self) -> bool {
        matches!(self.model, Model::DP | Model::HDP | Model::ERM)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    TestRisk,
    DistanceToTruth,
}

/// How multi-point grids are resolved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    /// Every grid must hold a single point.
    #[default]
    None,
    /// K-fold cross-validation on each replicate's training pool. With
    /// `disjoint_pool` the pool is halved: one half selects, the other fits.
    #[serde(rename = "kfold")]
    KFold {
        folds: usize,
        #[serde(default)]
        disjoint_pool: bool,
    },
    /// Separate simulated replicates score every grid point on fresh test data
    /// before the evaluation replicates run (synthetic sources only).
    Simulation {
        simulations: usize,
        #[serde(default)]
        metric: SelectionMetric,
    },
}

fn default_one() -> usize {
    1
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub task: Task,
    #[serde(default = "default_scale")]
    pub loss_scale: f64,
    /// Tube half-width for `SVR`.
    #[serde(default)]
    pub svr_delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub replications: usize,
    /// Held-out rows per group (synthetic) or in total (CSV).
    pub test_size: usize,
    #[serde(default)]
    pub selection: Selection,
    pub data: DataSource,
    pub mc: McSpec,
    pub sgd: SgdSpec,
    pub methods: Vec<MethodSpec>,
}

fn validate_mc(mc: &McSpec) -> Result<()> {
    if mc.truncation == 0 || mc.samples == 0 || mc.top_truncation == Some(0) {
        return Err(DroError::Spec("mc truncation and samples must be at least 1".into()));
    }
    Ok(())
}

fn validate_sgd(sgd: &SgdSpec) -> Result<()> {
    sgd.schedule().map_err(|e| DroError::Spec(e.to_string()))?;
    if sgd.passes == 0 {
        return Err(DroError::Spec("sgd passes must be at least 1".into()));
    }
    Ok(())
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| DroError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| DroError::io(path, e))?;
        Ok((Self::from_toml_str(&text)?, text))
    }

    pub fn loss(&self) -> LossFn {
        self.task.base_loss(self.svr_delta).with_scale(self.loss_scale)
    }

    pub fn method_mc(&self, m: &MethodSpec) -> McSpec {
        m.mc.unwrap_or(self.mc)
    }

    pub fn method_sgd(&self, m: &MethodSpec) -> SgdSpec {
        m.sgd.unwrap_or(self.sgd)
    }

    pub fn validate(&self) -> Result<()> {
        let spec_err = |m: String| Err(DroError::Spec(m));
        self.loss().validate().map_err(|e| DroError::Spec(e.to_string()))?;
        if self.methods.is_empty() {
            return spec_err("at least one method is required".into());
        }
        let mut labels = HashSet::new();
        for m in &self.methods {
            if !labels.insert(m.label.as_str()) {
                return spec_err(format!("duplicate method label '{}'", m.label));
            }
            m.validate(self.task)?;
            if self.selection == Selection::None && m.grid().len() > 1 {
                return spec_err(format!(
                    "method '{}' has a multi-point grid but no selection mode",
                    m.label
                ));
            }
        }
        if self.replications == 0 {
            return spec_err("replications must be at least 1".into());
        }
        if self.test_size == 0 {
            return spec_err("test_size must be at least 1".into());
        }
        validate_mc(&self.mc)?;
        validate_sgd(&self.sgd)?;
        match self.selection {
            Selection::KFold { folds, .. } if folds < 2 => return spec_err("k-fold selection needs folds >= 2".into()),
            Selection::Simulation { simulations, .. } => {
                if simulations == 0 {
                    return spec_err("simulation selection needs at least one simulation".into());
                }
                if !self.data.is_synthetic() {
                    return spec_err("simulation selection needs a synthetic data source".into());
                }
            }
            _ => {}
        }
        match &self.data {
            DataSource::SparseLinear {
                active,
                d,
                contamination,
                ..
            } => {
                if self.task.kind() != TaskKind::Regression {
                    return spec_err("sparse_linear data needs a regression task".into());
                }
                if active > d {
                    return spec_err("active coordinates exceed the dimension".into());
                }
                if let Some(c) = contamination {
                    if !(0.0..0.5).contains(&c.fraction) {
                        return spec_err("contamination fraction must lie in [0, 0.5)".into());
                    }
                }
            }
            DataSource::SparseLogistic { active, d, .. } => {
                if self.task.kind() != TaskKind::BinaryLabel {
                    return spec_err("sparse_logistic data needs a classification task".into());
                }
                if active > d {
                    return spec_err("active coordinates exceed the dimension".into());
                }
            }
            DataSource::TwoGroupLinear { .. } if self.task.kind() != TaskKind::Regression => {
                return spec_err("two_group_linear data needs a regression task".into());
            }
            _ => {}
        }
        Ok(())
    }
}
