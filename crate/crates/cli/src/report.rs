//! Report CSVs and multi-seed curve merging.

use std::path::Path;

use optgail_core::algorithms::{Record, TrainReport};

pub const COLUMNS: [&str; 8] = [
    "iter",
    "env_steps",
    "q_joint",
    "q_marginal",
    "demo_loglik",
    "return",
    "option_agreement",
    "activated_options",
];

/// Metrics that get a mean/min/max band in merged curves.
const BANDED: [&str; 6] = [
    "q_joint",
    "q_marginal",
    "demo_loglik",
    "return",
    "option_agreement",
    "activated_options",
];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: row {row}: {message}")]
    Content {
        path: String,
        row: usize,
        message: String,
    },
    #[error("no reports to merge")]
    Empty,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn record_fields(r: &Record) -> [String; 8] {
    [
        r.iter.to_string(),
        r.env_steps.to_string(),
        r.q_joint.to_string(),
        r.q_marginal.to_string(),
        r.demo_loglik.to_string(),
        r.ret.to_string(),
        r.option_agreement
            .map(|x| x.to_string())
            .unwrap_or_default(),
        r.activated_options.to_string(),
    ]
}

pub fn write_report(path: &Path, report: &TrainReport) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(COLUMNS).map_err(csv_err(path))?;
    for r in &report.records {
        w.write_record(record_fields(r)).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| csv_err(path)(e.into()))
}

/// A report CSV as rows of optional numbers (empty cells are `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn read_table(path: &Path) -> Result<Table, ReportError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let columns: Vec<String> = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>()
                        .map(Some)
                        .map_err(|_| ReportError::Content {
                            path: path.display().to_string(),
                            row: i + 1,
                            message: format!("`{f}` is not a number"),
                        })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

/// Merges per-seed reports row by row into `iter, env_steps, <metric>_mean, _min, _max, ...`.
/// Rows beyond the shortest report are dropped; `env_steps` is averaged.
pub fn merge_curves(paths: &[&Path], out: &Path) -> Result<(), ReportError> {
    if paths.is_empty() {
        return Err(ReportError::Empty);
    }
    let tables = paths
        .iter()
        .map(|p| read_table(p))
        .collect::<Result<Vec<_>, _>>()?;
    for (t, p) in tables.iter().zip(paths) {
        if t.columns != COLUMNS {
            return Err(ReportError::Content {
                path: p.display().to_string(),
                row: 0,
                message: "not a training report".into(),
            });
        }
    }
    let n_rows = tables.iter().map(|t| t.rows.len()).min().unwrap_or(0);
    let mut header = vec![
        "iter".to_string(),
        "env_steps".to_string(),
        "seeds".to_string(),
    ];
    for m in BANDED {
        header.extend([format!("{m}_mean"), format!("{m}_min"), format!("{m}_max")]);
    }
    let mut w = csv::Writer::from_path(out).map_err(csv_err(out))?;
    w.write_record(&header).map_err(csv_err(out))?;
    let col = |name: &str| COLUMNS.iter().position(|c| *c == name).unwrap();
    for i in 0..n_rows {
        let steps: f64 = tables
            .iter()
            .map(|t| t.rows[i][col("env_steps")].unwrap_or(0.0))
            .sum::<f64>()
            / tables.len() as f64;
        let iter = tables[0].rows[i][col("iter")].unwrap_or(i as f64);
        let mut row = vec![
            iter.to_string(),
            steps.to_string(),
            tables.len().to_string(),
        ];
        for m in BANDED {
            let vals: Vec<f64> = tables.iter().filter_map(|t| t.rows[i][col(m)]).collect();
            if vals.is_empty() {
                row.extend([String::new(), String::new(), String::new()]);
            } else {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.extend([mean.to_string(), min.to_string(), max.to_string()]);
            }
        }
        w.write_record(&row).map_err(csv_err(out))?;
    }
    w.flush().map_err(|e| csv_err(out)(e.into()))
}
