//! Smooth distributionally robust optimization with Dirichlet-process and
//! hierarchical Dirichlet-process posteriors.
//!
//! The pipeline: condition a (H)DP prior on data ([`sampling`]), draw `M`
//! truncated posterior measures, form the criterion
//! `(1/M) sum_m phi(E_{p_m}[h(theta, xi)])` ([`criterion`]), and minimize it by
//! stochastic gradient descent, optionally dropping high-loss training atoms
//! ([`optimizer`]). [`datagen`] supplies synthetic designs and [`harness`] runs
//! replicated experiments with model selection and reporting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criterion;
pub mod data;
pub mod datagen;
pub mod error;
pub mod exec;
pub mod harness;
pub mod losses;
pub mod optimizer;
pub mod rng;
pub mod sampling;

pub use criterion::{ApproxCriterion, MonteCarlo, PhiTransform};
pub use data::{Dataset, GroupedDataset, Observation, TaskKind};
pub use error::{DroError, Result};
pub use exec::ExecPolicy;
pub use losses::{LossFn, LossKind};
pub use optimizer::{BatchOrder, FitReport, SgdConfig, StepSchedule};
pub use rng::RngHandle;
pub use sampling::{Approx, Centering, DiscreteMeasure, DpSpec, HdpSpec, Origin};
