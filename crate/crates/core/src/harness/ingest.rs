//! CSV ingestion and feature standardization.

use std::path::Path;

use crate::data::{Dataset, GroupedDataset, Observation, TaskKind};
use crate::error::{DroError, Result};

/// Read a headed CSV file. `response` names the target column, `group` the
/// optional grouping column (groups ordered by first appearance); every other
/// column is a numeric feature. For binary tasks labels `0`/`-1` map to `-1`
/// and `1` to `+1`.
pub fn read_csv_table(path: &Path, response: &str, group: Option<&str>, task: TaskKind) -> Result<GroupedDataset> {
    let file = std::fs::File::open(path).map_err(|e| DroError::io(path, e))?;
    read_csv_from(file, response, group, task)
}

/// Same as [`read_csv_table`] from any reader.
pub fn read_csv_from<R: std::io::Read>(
    reader: R,
    response: &str,
    group: Option<&str>,
    task: TaskKind,
) -> Result<GroupedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DroError::MissingColumn(name.to_string()))
    };
    let y_col = find(response)?;
    let g_col = group.map(find).transpose()?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != y_col && Some(c) != g_col).collect();

    let mut labels: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<Observation>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DroError::CsvCell {
                    row,
                    column: headers[c].clone(),
                    message: format!("'{raw}' is not a finite number"),
                })
        };
        let x = feature_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<f64>>>()?;
        let mut y = cell(y_col)?;
        if task == TaskKind::BinaryLabel {
            y = match y {
                v if v == 1.0 => v,
                v if v == 0.0 || v == -1.0 => -1.0,
                _ => {
                    return Err(DroError::CsvCell {
                        row,
                        column: headers[y_col].clone(),
                        message: format!("label {y} is not in {{0, 1}} or {{-1, 1}}"),
                    })
                }
            };
        }
        let label = g_col.map_or_else(String::new, |c| record.get(c).unwrap_or("").trim().to_string());
        let s = match labels.iter().position(|l| *l == label) {
            Some(s) => s,
            None => {
                labels.push(label);
                rows.push(Vec::new());
                labels.len() - 1
            }
        };
        rows[s].push(Observation::new(x, y));
    }
    if rows.is_empty() {
        return Err(DroError::Empty("CSV file has no data rows".into()));
    }
    let dim = feature_cols.len();
    let groups = rows
        .into_iter()
        .map(|r| Dataset::new(r, dim, task))
        .collect::<Result<Vec<_>>>()?;
    if g_col.is_none() {
        return Ok(GroupedDataset::single(groups.into_iter().next().expect("one group")));
    }
    GroupedDataset::with_labels(groups, labels)
}

/// [`read_csv_table`] followed, if requested, by standardization with
/// statistics of the whole file.
pub fn ingest_csv(
    path: &Path,
    response: &str,
    group: Option<&str>,
    standardize: bool,
    task: TaskKind,
) -> Result<GroupedDataset> {
    let raw = read_csv_table(path, response, group, task)?;
    if !standardize {
        return Ok(raw);
    }
    Ok(Standardizer::fit(&raw)?.apply(&raw))
}

/// Per-feature (and, for regression, response) centering and scaling to unit
/// sample standard deviation. Constant columns are only centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
    response: Option<(f64, f64)>,
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 1.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

impl Standardizer {
    /// Statistics of all rows of all groups.
    pub fn fit(data: &GroupedDataset) -> Result<Self> {
        let rows: Vec<&Observation> = data.groups().iter().flat_map(|g| g.rows()).collect();
        if rows.is_empty() {
            return Err(DroError::Empty("cannot standardize an empty dataset".into()));
        }
        let (mean, scale) = (0..data.dim())
            .map(|k| mean_and_scale(rows.iter().map(move |r| r.x[k])))
            .unzip();
        let response = (data.task() == TaskKind::Regression).then(|| mean_and_scale(rows.iter().map(|r| r.y)));
        Ok(Standardizer { mean, scale, response })
    }

    pub fn apply_dataset(&self, ds: &Dataset) -> Dataset {
        let rows = ds
            .rows()
            .iter()
            .map(|r| {
                let x =
                    r.x.iter()
                        .zip(&self.mean)
                        .zip(&self.scale)
                        .map(|((v, m), s)| (v - m) / s)
                        .collect();
                let y = self.response.map_or(r.y, |(m, s)| (r.y - m) / s);
                Observation::new(x, y)
            })
            .collect();
        Dataset::new(rows, ds.dim(), ds.task()).expect("standardization keeps rows valid")
    }

    pub fn apply(&self, data: &GroupedDataset) -> GroupedDataset {
        data.map_groups(|g| self.apply_dataset(g))
    }
}

/// Append a constant-one feature to every row.
pub fn with_intercept(data: &GroupedDataset) -> GroupedDataset {
    data.map_groups(|g| {
        let rows = g
            .rows()
            .iter()
            .map(|r| {
                let mut x = r.x.to_vec();
                x.push(1.0);
                Observation::new(x, r.y)
            })
            .collect();
        Dataset::new(rows, g.dim() + 1, g.task()).expect("intercept keeps rows valid")
    })
}
