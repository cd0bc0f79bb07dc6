//! Truncated draws from Dirichlet process and hierarchical Dirichlet process posteriors.
//!
//! A posterior DP is described by a [`DpSpec`]: a concentration and a centering
//! measure, which after conditioning on data is a mixture of the empirical
//! distribution and the prior centering. Two finite approximations are offered:
//!
//! * truncated stick-breaking ([`stick_breaking`]): `T` Beta(1, a) sticks plus a
//!   remainder atom carrying the unbroken mass, `T + 1` atoms in total;
//! * multinomial-Dirichlet ([`multinomial_dirichlet`]): `T` atoms with
//!   Dirichlet(a/T, ..., a/T) weights.
//!
//! Every atom remembers whether it resolved to a training row or to a prior
//! draw ([`Origin`]); outlier filtering relies on that flag.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupedDataset, Observation};
use crate::error::{DroError, Result};
use crate::rng::{ln_gamma_variate, ln_one_minus_beta1, standard_normal, uniform_open01, RngHandle};

/// Where a sampled atom came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    TrainData,
    PriorDraw,
}

/// Finitely supported probability measure `sum_j p_j delta_{xi_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<Observation>,
    weights: Vec<f64>,
    origin: Vec<Origin>,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Observation>, weights: Vec<f64>, origin: Vec<Origin>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(DroError::Empty("discrete measure needs at least one atom".into()));
        }
        if weights.len() != atoms.len() || origin.len() != atoms.len() {
            return Err(DroError::invalid(format!(
                "measure lists differ in length: {} atoms, {} weights, {} flags",
                atoms.len(),
                weights.len(),
                origin.len()
            )));
        }
        if weights.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(DroError::invalid("measure weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(DroError::invalid(format!("measure weights sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure { atoms, weights, origin })
    }

    pub fn point_mass(atom: Observation, origin: Origin) -> Self {
        DiscreteMeasure {
            atoms: vec![atom],
            weights: vec![1.0],
            origin: vec![origin],
        }
    }

    /// Uniform weights over a dataset's rows, all flagged as training data.
    pub fn empirical(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(DroError::Empty("empirical measure of an empty dataset".into()));
        }
        let n = data.len();
        DiscreteMeasure::new(
            data.rows().to_vec(),
            vec![1.0 / n as f64; n],
            vec![Origin::TrainData; n],
        )
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Observation] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn origin(&self) -> &[Origin] {
        &self.origin
    }

    pub fn train_count(&self) -> usize {
        self.origin.iter().filter(|&&o| o == Origin::TrainData).count()
    }

    /// Draw one atom according to the weights.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Observation, Origin) {
        let u = uniform_open01(rng);
        let mut acc = 0.0;
        for (j, p) in self.weights.iter().enumerate() {
            acc += p;
            if u < acc {
                return (self.atoms[j].clone(), self.origin[j]);
            }
        }
        // u landed in the rounding gap above the last cumulative sum
        let j = self.weights.iter().rposition(|&p| p > 0.0).unwrap_or(self.len() - 1);
        (self.atoms[j].clone(), self.origin[j])
    }
}

/// Centering (base) measure of a DP.
#[derive(Debug, Clone, PartialEq)]
pub enum Centering {
    /// Uniform over the dataset's rows.
    Empirical(Arc<Dataset>),
    /// `(y, x) ~ N(0, I_{dim + 1})`.
    StandardNormal { dim: usize },
    /// `y` uniform on {-1, +1} independent of `x ~ N(0, I_dim)`.
    ProductBinaryNormal { dim: usize },
    /// Finite mixture; weights nonnegative summing to one.
    Mixture(Vec<(f64, Centering)>),
    /// A realized discrete measure, e.g. the top-level draw of an HDP. Atoms keep
    /// their own origin flags.
    Atomic(Arc<DiscreteMeasure>),
}

impl Centering {
    pub fn validate(&self) -> Result<()> {
        match self {
            Centering::Empirical(ds) if ds.is_empty() => {
                Err(DroError::Empty("empirical centering over an empty dataset".into()))
            }
            Centering::Mixture(parts) => {
                if parts.is_empty() {
                    return Err(DroError::invalid("mixture centering with no components"));
                }
                if parts.iter().any(|(w, _)| !(*w >= 0.0) || !w.is_finite()) {
                    return Err(DroError::invalid("mixture weights must be finite and nonnegative"));
                }
                let total: f64 = parts.iter().map(|(w, _)| w).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(DroError::invalid(format!("mixture weights sum to {total}")));
                }
                parts
                    .iter()
                    .filter(|(w, _)| *w > 0.0)
                    .try_for_each(|(_, c)| c.validate())
            }
            _ => Ok(()),
        }
    }

    /// Feature dimension of the sampled observations, when determined.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Centering::Empirical(ds) => Some(ds.dim()),
            Centering::StandardNormal { dim } | Centering::ProductBinaryNormal { dim } => Some(*dim),
            Centering::Mixture(parts) => parts.iter().find_map(|(_, c)| c.dim()),
            Centering::Atomic(m) => Some(m.atoms()[0].dim()),
        }
    }

    /// One draw plus its origin flag. Mixtures first pick a component, then sample
    /// within it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Observation, Origin) {
        match self {
            Centering::Empirical(ds) => {
                let i = rng.random_range(0..ds.len());
                (ds.row(i).clone(), Origin::TrainData)
            }
            Centering::StandardNormal { dim } => {
                let y = standard_normal(rng);
                let x = (0..*dim).map(|_| standard_normal(rng)).collect();
                (Observation::new(x, y), Origin::PriorDraw)
            }
            Centering::ProductBinaryNormal { dim } => {
                let y = if uniform_open01(rng) < 0.5 { -1.0 } else { 1.0 };
                let x = (0..*dim).map(|_| standard_normal(rng)).collect();
                (Observation::new(x, y), Origin::PriorDraw)
            }
            Centering::Mixture(parts) => {
                let u = uniform_open01(rng);
                let mut acc = 0.0;
                let mut chosen = None;
                for (w, c) in parts {
                    if *w <= 0.0 {
                        continue;
                    }
                    chosen = Some(c);
                    acc += w;
                    if u < acc {
                        break;
                    }
                }
                chosen.expect("validated mixture has a positive component").sample(rng)
            }
            Centering::Atomic(m) => m.sample(rng),
        }
    }
}

/// Concentration and centering of a (posterior) DP.
#[derive(Debug, Clone, PartialEq)]
pub struct DpSpec {
    pub concentration: f64,
    pub centering: Centering,
}

impl DpSpec {
    pub fn new(concentration: f64, centering: Centering) -> Result<Self> {
        let spec = DpSpec {
            concentration,
            centering,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(DroError::invalid(format!(
                "DP concentration must be finite and positive, got {}",
                self.concentration
            )));
        }
        self.centering.validate()
    }
}

/// Conjugate update: `DP(a, p0)` given `n` rows becomes
/// `DP(a + n, n/(a+n) p_emp + a/(a+n) p0)`.
pub fn dp_posterior(prior: &DpSpec, data: &Dataset) -> DpSpec {
    if data.is_empty() {
        return prior.clone();
    }
    let a = prior.concentration;
    let n = data.len() as f64;
    DpSpec {
        concentration: a + n,
        centering: Centering::Mixture(vec![
            (n / (a + n), Centering::Empirical(Arc::new(data.clone()))),
            (a / (a + n), prior.centering.clone()),
        ]),
    }
}

/// Finite DP approximation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Approx {
    #[serde(rename = "SB")]
    StickBreaking,
    #[serde(rename = "MD")]
    MultinomialDirichlet,
}

impl Approx {
    /// Number of atoms a draw with truncation `t` carries.
    pub fn atom_count(self, t: usize) -> usize {
        match self {
            Approx::StickBreaking => t + 1,
            Approx::MultinomialDirichlet => t,
        }
    }
}

fn check_truncation(t: usize) -> Result<()> {
    if t == 0 {
        return Err(DroError::invalid("truncation level must be at least 1"));
    }
    Ok(())
}

/// Truncated stick-breaking draw with `t + 1` atoms.
///
/// Index 0 holds the remainder atom with weight `prod_k (1 - B_k)`; indices
/// `1..=t` hold the sticks `B_j prod_{k<j} (1 - B_k)` in breaking order.
pub fn stick_breaking(spec: &DpSpec, t: usize, rng: RngHandle) -> Result<DiscreteMeasure> {
    check_truncation(t)?;
    spec.validate()?;
    Ok(stick_breaking_unchecked(spec, t, &mut rng.rng()))
}

fn stick_breaking_unchecked<R: Rng + ?Sized>(spec: &DpSpec, t: usize, rng: &mut R) -> DiscreteMeasure {
    let mut atoms = Vec::with_capacity(t + 1);
    let mut weights = Vec::with_capacity(t + 1);
    let mut origin = Vec::with_capacity(t + 1);
    // slot 0 is filled once the remainder is known
    atoms.push(Observation::new(Vec::new(), 0.0));
    weights.push(0.0);
    origin.push(Origin::PriorDraw);

    let mut ln_remaining = 0.0f64;
    for _ in 0..t {
        let (atom, flag) = spec.centering.sample(rng);
        let ln_keep = ln_one_minus_beta1(rng, spec.concentration);
        // B_j * remaining = remaining * (1 - exp(ln_keep))
        weights.push(ln_remaining.exp() * -ln_keep.exp_m1());
        ln_remaining += ln_keep;
        atoms.push(atom);
        origin.push(flag);
    }
    let (atom, flag) = spec.centering.sample(rng);
    atoms[0] = atom;
    origin[0] = flag;
    weights[0] = ln_remaining.exp();
    DiscreteMeasure { atoms, weights, origin }
}

/// Multinomial-Dirichlet draw with `t` atoms and Dirichlet(a/t, ..., a/t) weights.
///
/// Gamma variates are normalized in log space, so even a vanishing shape `a/t`
/// yields valid weights (all mass on the largest variate) instead of 0/0.
pub fn multinomial_dirichlet(spec: &DpSpec, t: usize, rng: RngHandle) -> Result<DiscreteMeasure> {
    check_truncation(t)?;
    spec.validate()?;
    Ok(multinomial_dirichlet_unchecked(spec, t, &mut rng.rng()))
}

fn multinomial_dirichlet_unchecked<R: Rng + ?Sized>(spec: &DpSpec, t: usize, rng: &mut R) -> DiscreteMeasure {
    let shape = spec.concentration / t as f64;
    let mut atoms = Vec::with_capacity(t);
    let mut origin = Vec::with_capacity(t);
    let mut ln_g = Vec::with_capacity(t);
    for _ in 0..t {
        let (atom, flag) = spec.centering.sample(rng);
        atoms.push(atom);
        origin.push(flag);
        ln_g.push(ln_gamma_variate(rng, shape));
    }
    let max = ln_g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = ln_g.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    DiscreteMeasure { atoms, weights, origin }
}

/// Draw with the requested approximation.
pub fn draw(spec: &DpSpec, approx: Approx, t: usize, rng: RngHandle) -> Result<DiscreteMeasure> {
    match approx {
        Approx::StickBreaking => stick_breaking(spec, t, rng),
        Approx::MultinomialDirichlet => multinomial_dirichlet(spec, t, rng),
    }
}

fn draw_with<R: Rng + ?Sized>(spec: &DpSpec, approx: Approx, t: usize, rng: &mut R) -> DiscreteMeasure {
    match approx {
        Approx::StickBreaking => stick_breaking_unchecked(spec, t, rng),
        Approx::MultinomialDirichlet => multinomial_dirichlet_unchecked(spec, t, rng),
    }
}

/// Hierarchical DP prior: `p_s | p_0 ~ DP(alpha_s, p_0)`, `p_0 ~ DP(alpha_0, H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HdpSpec {
    pub top_concentration: f64,
    pub group_concentrations: Vec<f64>,
    pub top_centering: Centering,
}

impl HdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.group_concentrations.is_empty() {
            return Err(DroError::invalid("HDP needs at least one group"));
        }
        let ok = |a: f64| a > 0.0 && a.is_finite();
        if !ok(self.top_concentration) || !self.group_concentrations.iter().all(|&a| ok(a)) {
            return Err(DroError::invalid("HDP concentrations must be finite and positive"));
        }
        self.top_centering.validate()
    }
}

/// Posterior of one group's measure under an HDP, prepared for repeated draws.
///
/// Given the data, the top-level measure is `DP(alpha_0 + N, N/(alpha_0+N) pooled +
/// alpha_0/(alpha_0+N) H)`, and given a realization `p0` of it the group measure is
/// `DP(alpha_s + N_s, N_s/(alpha_s+N_s) group + alpha_s/(alpha_s+N_s) p0)`. Each draw
/// realizes both stages.
#[derive(Debug, Clone)]
pub struct HdpGroupPosterior {
    top: DpSpec,
    group_concentration: f64,
    group_prior: f64,
    group_data: Option<Arc<Dataset>>,
}

impl HdpGroupPosterior {
    pub fn new(spec: &HdpSpec, data: &GroupedDataset, s: usize) -> Result<Self> {
        spec.validate()?;
        if spec.group_concentrations.len() != data.num_groups() {
            return Err(DroError::invalid(format!(
                "{} group concentrations for {} groups",
                spec.group_concentrations.len(),
                data.num_groups()
            )));
        }
        if s >= data.num_groups() {
            return Err(DroError::invalid(format!("group index {s} out of range")));
        }
        if data.has_duplicate_rows() {
            log::warn!("duplicate rows across groups: the HDP posterior characterization assumes diffuse laws");
        }
        let prior = DpSpec {
            concentration: spec.top_concentration,
            centering: spec.top_centering.clone(),
        };
        let top = dp_posterior(&prior, &data.pooled());
        let group = data.group(s);
        let alpha_s = spec.group_concentrations[s];
        let n_s = group.len() as f64;
        Ok(HdpGroupPosterior {
            top,
            group_concentration: alpha_s + n_s,
            group_prior: alpha_s / (alpha_s + n_s),
            group_data: (!group.is_empty()).then(|| Arc::new(group.clone())),
        })
    }

    pub fn top_concentration(&self) -> f64 {
        self.top.concentration
    }

    pub fn group_concentration(&self) -> f64 {
        self.group_concentration
    }

    /// Group-stage DP given a realized top-level measure.
    pub fn group_spec(&self, top_draw: DiscreteMeasure) -> DpSpec {
        let atomic = Centering::Atomic(Arc::new(top_draw));
        let centering = match &self.group_data {
            Some(ds) => Centering::Mixture(vec![
                (1.0 - self.group_prior, Centering::Empirical(ds.clone())),
                (self.group_prior, atomic),
            ]),
            None => atomic,
        };
        DpSpec {
            concentration: self.group_concentration,
            centering,
        }
    }

    pub fn draw(&self, t0: usize, ts: usize, approx: Approx, rng: RngHandle) -> Result<DiscreteMeasure> {
        check_truncation(t0)?;
        check_truncation(ts)?;
        let mut r = rng.rng();
        let top_draw = draw_with(&self.top, approx, t0, &mut r);
        Ok(draw_with(&self.group_spec(top_draw), approx, ts, &mut r))
    }
}

/// One two-stage draw of group `s`'s posterior measure (`s` is zero-based).
pub fn hdp_group_draw(
    spec: &HdpSpec,
    data: &GroupedDataset,
    s: usize,
    t0: usize,
    ts: usize,
    approx: Approx,
    rng: RngHandle,
) -> Result<DiscreteMeasure> {
    HdpGroupPosterior::new(spec, data, s)?.draw(t0, ts, approx, rng)
}
