//! Observations and (grouped) datasets.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{DroError, Result};

/// A label-feature pair `(y, x)`.
///
/// Features are reference counted: atoms resampled from a dataset share storage
/// with the dataset row they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Arc<[f64]>,
    pub y: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Observation { x: x.into(), y }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `theta^T x`
    pub fn predict(&self, theta: &[f64]) -> f64 {
        dot(&self.x, theta)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Regression,
    BinaryLabel,
}

fn is_label(y: f64) -> bool {
    y == 1.0 || y == -1.0
}

/// `n` observations sharing feature dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Observation>,
    dim: usize,
    task: TaskKind,
}

impl Dataset {
    pub fn new(rows: Vec<Observation>, dim: usize, task: TaskKind) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.dim() != dim {
                return Err(DroError::DimensionMismatch {
                    expected: dim,
                    got: row.dim(),
                });
            }
            if !row.y.is_finite() || row.x.iter().any(|v| !v.is_finite()) {
                return Err(DroError::invalid(format!("row {i} has non-finite values")));
            }
            if task == TaskKind::BinaryLabel && !is_label(row.y) {
                return Err(DroError::InvalidLabel { label: row.y });
            }
        }
        Ok(Dataset { rows, dim, task })
    }

    pub fn empty(dim: usize, task: TaskKind) -> Self {
        Dataset {
            rows: Vec::new(),
            dim,
            task,
        }
    }

    /// Build from a row-major feature list and a response vector.
    pub fn from_xy(x: Vec<Vec<f64>>, y: Vec<f64>, task: TaskKind) -> Result<Self> {
        if x.len() != y.len() {
            return Err(DroError::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        let dim = x.first().map_or(0, Vec::len);
        let rows = x.into_iter().zip(y).map(|(x, y)| Observation::new(x, y)).collect();
        Dataset::new(rows, dim, task)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Observation {
        &self.rows[i]
    }

    pub fn responses(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.y)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            dim: self.dim,
            task: self.task,
        }
    }

    /// Copy with row `i`'s response replaced.
    pub(crate) fn with_response(&self, i: usize, y: f64) -> Dataset {
        let mut out = self.clone();
        out.rows[i].y = y;
        out
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| DroError::Empty("no datasets to concatenate".into()))?;
        let mut rows = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            if p.dim != first.dim {
                return Err(DroError::DimensionMismatch {
                    expected: first.dim,
                    got: p.dim,
                });
            }
            if p.task != first.task {
                return Err(DroError::invalid("cannot concatenate datasets of different task kinds"));
            }
            rows.extend(p.rows.iter().cloned());
        }
        Ok(Dataset {
            rows,
            dim: first.dim,
            task: first.task,
        })
    }
}

/// `S` datasets sharing dimension and task kind.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    groups: Vec<Dataset>,
    labels: Vec<String>,
}

impl GroupedDataset {
    pub fn new(groups: Vec<Dataset>) -> Result<Self> {
        let labels = (1..=groups.len()).map(|s| s.to_string()).collect();
        Self::with_labels(groups, labels)
    }

    pub fn with_labels(groups: Vec<Dataset>, labels: Vec<String>) -> Result<Self> {
        let first = groups
            .first()
            .ok_or_else(|| DroError::Empty("grouped dataset needs at least one group".into()))?;
        if labels.len() != groups.len() {
            return Err(DroError::invalid("one label per group required"));
        }
        for g in &groups {
            if g.dim != first.dim {
                return Err(DroError::DimensionMismatch {
                    expected: first.dim,
                    got: g.dim,
                });
            }
            if g.task != first.task {
                return Err(DroError::invalid("all groups must share the task kind"));
            }
        }
        Ok(GroupedDataset { groups, labels })
    }

    pub fn single(ds: Dataset) -> Self {
        GroupedDataset {
            groups: vec![ds],
            labels: vec!["1".into()],
        }
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Dataset] {
        &self.groups
    }

    pub fn group(&self, s: usize) -> &Dataset {
        &self.groups[s]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.groups[0].dim
    }

    pub fn task(&self) -> TaskKind {
        self.groups[0].task
    }

    /// Total sample size `N = sum_s N_s`.
    pub fn total_len(&self) -> usize {
        self.groups.iter().map(Dataset::len).sum()
    }

    /// All groups stacked in group order.
    pub fn pooled(&self) -> Dataset {
        let refs: Vec<&Dataset> = self.groups.iter().collect();
        Dataset::concat(&refs).expect("groups validated at construction")
    }

    /// Whether any two rows (within or across groups) are bitwise identical.
    pub fn has_duplicate_rows(&self) -> bool {
        let mut seen = HashSet::new();
        for row in self.groups.iter().flat_map(|g| g.rows.iter()) {
            let key: Vec<u64> = std::iter::once(row.y.to_bits())
                .chain(row.x.iter().map(|v| v.to_bits()))
                .collect();
            if !seen.insert(key) {
                return true;
            }
        }
        false
    }

    pub fn map_groups(&self, f: impl Fn(&Dataset) -> Dataset) -> GroupedDataset {
        GroupedDataset {
            groups: self.groups.iter().map(f).collect(),
            labels: self.labels.clone(),
        }
    }
}
