//! Per-replicate metric rows, summaries, and CSV/JSON report files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DroError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsRow {
    pub replicate: usize,
    pub method: String,
    pub test_risk: f64,
    pub rmse: Option<f64>,
    pub distance_to_truth: Option<f64>,
    pub coeff_norm: f64,
}

impl MetricsRow {
    pub fn is_finite(&self) -> bool {
        self.test_risk.is_finite()
            && self.coeff_norm.is_finite()
            && self.rmse.is_none_or(f64::is_finite)
            && self.distance_to_truth.is_none_or(f64::is_finite)
    }

    fn metrics(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("testRisk", Some(self.test_risk)),
            ("rmse", self.rmse),
            ("distanceToTruth", self.distance_to_truth),
            ("coeffNorm", Some(self.coeff_norm)),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; absent with a single row.
    pub std: Option<f64>,
    pub count: usize,
}

/// `method -> metric -> stat`
pub type Summary = BTreeMap<String, BTreeMap<String, Stat>>;

pub fn summarize(rows: &[MetricsRow]) -> Summary {
    let mut values: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for row in rows {
        let per_method = values.entry(row.method.clone()).or_default();
        for (name, v) in row.metrics() {
            if let Some(v) = v {
                per_method.entry(name.to_string()).or_default().push(v);
            }
        }
    }
    values
        .into_iter()
        .map(|(method, metrics)| {
            let stats = metrics
                .into_iter()
                .map(|(name, v)| {
                    let n = v.len() as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let std =
                        (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
                    (
                        name,
                        Stat {
                            mean,
                            std,
                            count: v.len(),
                        },
                    )
                })
                .collect();
            (method, stats)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = DroError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(DroError::invalid(format!("unknown report format '{other}'"))),
        }
    }
}

impl ReportFormat {
    /// Format implied by a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    pub spec_digest: Option<String>,
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
}

/// Hex SHA-256 of the spec file contents.
pub fn spec_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub const CSV_HEADER: [&str; 6] = [
    "replicate",
    "method",
    "testRisk",
    "rmse",
    "distanceToTruth",
    "coeffNorm",
];

fn check_rows(rows: &[MetricsRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(DroError::Empty("no metric rows to report".into()));
    }
    if let Some(r) = rows.iter().find(|r| !r.is_finite()) {
        return Err(DroError::Numerical(format!(
            "non-finite metrics in replicate {} for '{}'",
            r.replicate, r.method
        )));
    }
    Ok(())
}

pub fn write_csv<W: std::io::Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    check_rows(rows)?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| DroError::Csv(e.into()))?;
    Ok(())
}

pub fn write_json<W: std::io::Write>(rows: &[MetricsRow], spec_digest: Option<&str>, out: W) -> Result<()> {
    check_rows(rows)?;
    let report = JsonReport {
        spec_digest: spec_digest.map(str::to_string),
        rows: rows.to_vec(),
        summary: summarize(rows),
    };
    serde_json::to_writer_pretty(out, &report)?;
    Ok(())
}

/// Write `rows` to `path` in the requested format.
pub fn emit_report(rows: &[MetricsRow], format: ReportFormat, path: &Path, spec_digest: Option<&str>) -> Result<()> {
    check_rows(rows)?;
    let file = std::fs::File::create(path).map_err(|e| DroError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    match format {
        ReportFormat::Csv => write_csv(rows, &mut out)?,
        ReportFormat::Json => write_json(rows, spec_digest, &mut out)?,
    }
    std::io::Write::flush(&mut out).map_err(|e| DroError::io(path, e))
}

/// Read rows back from a CSV or JSON report.
pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| DroError::io(path, e))?;
    let format = ReportFormat::from_path(path).unwrap_or(if text.trim_start().starts_with('{') {
        ReportFormat::Json
    } else {
        ReportFormat::Csv
    });
    match format {
        ReportFormat::Json => Ok(serde_json::from_str::<JsonReport>(&text)?.rows),
        ReportFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
            if header != CSV_HEADER {
                return Err(DroError::Spec(format!("unexpected report header {header:?}")));
            }
            rdr.deserialize().map(|r| r.map_err(DroError::from)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<MetricsRow> {
        vec![
            MetricsRow {
                replicate: 0,
                method: "b".into(),
                test_risk: 0.1,
                rmse: Some(0.3),
                distance_to_truth: None,
                coeff_norm: 1.0,
            },
            MetricsRow {
                replicate: 0,
                method: "a".into(),
                test_risk: 0.2,
                rmse: Some(0.4),
                distance_to_truth: Some(1e-3),
                coeff_norm: 2.0,
            },
            MetricsRow {
                replicate: 1,
                method: "b".into(),
                test_risk: 0.3,
                rmse: Some(0.5),
                distance_to_truth: None,
                coeff_norm: 1.0 / 3.0,
            },
        ]
    }

    #[test]
    fn csv_header_and_round_trip() {
        let mut buf = Vec::new();
        write_csv(&rows(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("replicate,method,testRisk,rmse,distanceToTruth,coeffNorm\n"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, &text).unwrap();
        assert_eq!(read_rows(&p).unwrap(), rows());
    }

    #[test]
    fn json_round_trip_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        emit_report(&rows(), ReportFormat::Json, &p, Some("abc")).unwrap();
        assert_eq!(read_rows(&p).unwrap(), rows());
        let report: JsonReport = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(report.spec_digest.as_deref(), Some("abc"));
        let b = &report.summary["b"]["testRisk"];
        assert!((b.mean - 0.2).abs() < 1e-15);
        assert!((b.std.unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
        assert!(!report.summary["b"].contains_key("distanceToTruth"));
        assert_eq!(report.summary["a"]["rmse"].std, None);
    }

    #[test]
    fn empty_and_non_finite_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_report(&[], ReportFormat::Csv, &dir.path().join("x.csv"), None),
            Err(DroError::Empty(_))
        ));
        let mut bad = rows();
        bad[0].test_risk = f64::NAN;
        assert!(emit_report(&bad, ReportFormat::Csv, &dir.path().join("x.csv"), None).is_err());
        let err = emit_report(&rows(), ReportFormat::Csv, &dir.path().join("missing/x.csv"), None).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn digest_is_sha256() {
        assert_eq!(
            spec_digest("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
