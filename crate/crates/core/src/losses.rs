//! Per-observation losses `h(theta, xi)` for linear predictors and their gradients.
//!
//! Every loss here depends on `theta` only through the linear score `u = theta^T x`,
//! so each kind is described by a scalar profile `(h(u, y), dh/du)` and the
//! gradient is `scale * dh/du * x`.

use serde::{Deserialize, Serialize};

use crate::data::{dot, Observation};
use crate::error::{DroError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    /// `(y - u)^2`
    Squared,
    /// `log(1 + exp(-y u))`, labels in {-1, +1}
    Logistic,
    /// Rennie–Srebro smooth hinge on the margin `z = y u`, labels in {-1, +1}
    SmoothHinge,
    /// `2 * rho_tau(y - u)`; equals `|y - u|` at `tau = 0.5`
    Pinball,
    /// `max(0, |y - u| - delta)`
    EpsInsensitive,
}

impl LossKind {
    pub fn is_classification(self) -> bool {
        matches!(self, LossKind::Logistic | LossKind::SmoothHinge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossFn {
    pub kind: LossKind,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(default)]
    pub delta: f64,
}

fn default_scale() -> f64 {
    1.0
}

fn default_quantile() -> f64 {
    0.5
}

impl LossFn {
    pub fn new(kind: LossKind) -> Self {
        LossFn {
            kind,
            scale: 1.0,
            quantile: 0.5,
            delta: 0.0,
        }
    }

    pub fn squared() -> Self {
        Self::new(LossKind::Squared)
    }

    pub fn logistic() -> Self {
        Self::new(LossKind::Logistic)
    }

    pub fn smooth_hinge() -> Self {
        Self::new(LossKind::SmoothHinge)
    }

    pub fn pinball(quantile: f64) -> Self {
        LossFn {
            quantile,
            ..Self::new(LossKind::Pinball)
        }
    }

    pub fn eps_insensitive(delta: f64) -> Self {
        LossFn {
            delta,
            ..Self::new(LossKind::EpsInsensitive)
        }
    }

    pub fn with_scale(self, scale: f64) -> Self {
        LossFn { scale, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(DroError::invalid(format!(
                "loss scale must be positive, got {}",
                self.scale
            )));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(DroError::invalid(format!(
                "quantile must lie in (0, 1), got {}",
                self.quantile
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(DroError::invalid(format!(
                "delta must be nonnegative, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Unscaled loss and its derivative in the score `u`.
    ///
    /// Non-differentiable points take the zero subgradient.
    #[inline]
    pub(crate) fn profile(&self, u: f64, y: f64) -> (f64, f64) {
        match self.kind {
            LossKind::Squared => {
                let r = y - u;
                (r * r, -2.0 * r)
            }
            LossKind::Logistic => {
                let z = y * u;
                // softplus(-z) and sigmoid(-z), both overflow-safe
                let (h, s) = if z >= 0.0 {
                    let e = (-z).exp();
                    (e.ln_1p(), e / (1.0 + e))
                } else {
                    let e = z.exp();
                    (-z + e.ln_1p(), 1.0 / (1.0 + e))
                };
                (h, -y * s)
            }
            LossKind::SmoothHinge => {
                let z = y * u;
                if z <= 0.0 {
                    (0.5 - z, -y)
                } else if z < 1.0 {
                    let gap = 1.0 - z;
                    (0.5 * gap * gap, -y * gap)
                } else {
                    (0.0, 0.0)
                }
            }
            LossKind::Pinball => {
                let r = y - u;
                let tau = self.quantile;
                if r > 0.0 {
                    (2.0 * tau * r, -2.0 * tau)
                } else if r < 0.0 {
                    (2.0 * (tau - 1.0) * r, 2.0 * (1.0 - tau))
                } else {
                    (0.0, 0.0)
                }
            }
            LossKind::EpsInsensitive => {
                let r = y - u;
                let excess = r.abs() - self.delta;
                if excess > 0.0 {
                    (excess, -r.signum())
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    #[inline]
    pub(crate) fn check(&self, theta: &[f64], obs: &Observation) -> Result<()> {
        if theta.len() != obs.dim() {
            return Err(DroError::DimensionMismatch {
                expected: theta.len(),
                got: obs.dim(),
            });
        }
        if self.kind.is_classification() && obs.y != 1.0 && obs.y != -1.0 {
            return Err(DroError::InvalidLabel { label: obs.y });
        }
        Ok(())
    }

    /// Scaled loss and its derivative in `u`, after input checks.
    #[inline]
    pub(crate) fn value_and_slope(&self, theta: &[f64], obs: &Observation) -> Result<(f64, f64)> {
        self.check(theta, obs)?;
        let (h, dh) = self.profile(dot(&obs.x, theta), obs.y);
        Ok((self.scale * h, self.scale * dh))
    }

    /// `scale * h(theta, obs)`
    pub fn eval(&self, theta: &[f64], obs: &Observation) -> Result<f64> {
        self.value_and_slope(theta, obs).map(|(h, _)| h)
    }

    /// Gradient of [`LossFn::eval`] in `theta`.
    pub fn grad(&self, theta: &[f64], obs: &Observation) -> Result<Vec<f64>> {
        let (_, slope) = self.value_and_slope(theta, obs)?;
        Ok(obs.x.iter().map(|x| slope * x).collect())
    }

    /// Mean loss over a set of observations.
    pub fn mean(&self, theta: &[f64], rows: &[Observation]) -> Result<f64> {
        if rows.is_empty() {
            return Err(DroError::Empty("mean loss over zero observations".into()));
        }
        let mut total = 0.0;
        for row in rows {
            total += self.eval(theta, row)?;
        }
        Ok(total / rows.len() as f64)
    }
}
