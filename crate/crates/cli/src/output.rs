//! CSV tables with a fixed header per subcommand.
//!
//! Floating columns use scientific notation with 17 significant digits;
//! absent values are empty fields. `wall_seconds` is always the last column of
//! the result table.

use std::io::Write;
use std::path::Path;

use nrl_core::estimators::VarianceReport;

use crate::runner::{AnalyticRow, ReferenceRow, Result, RunError};

pub const RESULT_HEADER: [&str; 17] = [
    "alpha",
    "dt",
    "scheme",
    "method",
    "estimate",
    "asym_var",
    "ci_low",
    "ci_high",
    "var_ci_low",
    "var_ci_high",
    "bias",
    "mse",
    "relative_mse",
    "acceptance_rate",
    "blowups",
    "gradient_evals",
    "wall_seconds",
];

pub const ANALYTIC_HEADER: [&str; 5] = ["alpha", "sigma2", "sigma2_clt", "limit", "lower_bound"];

pub const REFERENCE_HEADER: [&str; 5] = ["target", "observable", "value", "error_estimate", "grid_per_axis"];

/// One (α, Δt, scheme) cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub alpha: f64,
    pub dt: f64,
    pub scheme: String,
    pub method: Option<&'static str>,
    pub report: Option<VarianceReport>,
    pub bias: Option<f64>,
    pub mse: Option<f64>,
    pub relative_mse: Option<f64>,
    pub acceptance_rate: Option<f64>,
    pub blowups: usize,
    /// Per run.
    pub gradient_evals: u64,
    /// Summed over the cell's chains.
    pub wall_seconds: f64,
}

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

impl ResultRow {
    pub fn fields(&self) -> Vec<String> {
        let r = self.report.as_ref();
        vec![
            float(self.alpha),
            float(self.dt),
            self.scheme.clone(),
            self.method.unwrap_or_default().to_string(),
            opt(r.map(|r| r.estimate)),
            opt(r.map(|r| r.asym_var)),
            opt(r.map(|r| r.ci_low)),
            opt(r.map(|r| r.ci_high)),
            opt(r.map(|r| r.asym_var_ci.0)),
            opt(r.map(|r| r.asym_var_ci.1)),
            opt(self.bias),
            opt(self.mse),
            opt(self.relative_mse),
            opt(self.acceptance_rate),
            self.blowups.to_string(),
            self.gradient_evals.to_string(),
            float(self.wall_seconds),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn results(rows: &[ResultRow]) -> Self {
        Table {
            header: RESULT_HEADER.to_vec(),
            rows: rows.iter().map(ResultRow::fields).collect(),
        }
    }

    pub fn analytic(rows: &[AnalyticRow]) -> Self {
        Table {
            header: ANALYTIC_HEADER.to_vec(),
            rows: rows
                .iter()
                .map(|r| {
                    [r.alpha, r.sigma2, r.sigma2_clt, r.limit, r.lower_bound]
                        .map(float)
                        .to_vec()
                })
                .collect(),
        }
    }

    pub fn reference(row: &ReferenceRow) -> Self {
        Table {
            header: REFERENCE_HEADER.to_vec(),
            rows: vec![vec![
                row.target.clone(),
                row.observable.clone(),
                float(row.value),
                float(row.error_estimate),
                row.grid_per_axis.to_string(),
            ]],
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Writes to `path`, or to stdout when `None`.
    pub fn write(&self, path: Option<&Path>) -> Result<()> {
        let csv = self.to_csv();
        match path {
            Some(p) => std::fs::write(p, csv).map_err(|source| RunError::Io {
                path: p.to_path_buf(),
                source,
            }),
            None => std::io::stdout()
                .write_all(csv.as_bytes())
                .map_err(|source| RunError::Io {
                    path: "<stdout>".into(),
                    source,
                }),
        }
    }
}

/// Parses a result CSV back into header and rows of fields.
pub fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines
        .next()
        .map(|h| h.split(',').map(str::to_string).collect())
        .unwrap_or_default();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_significant_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(-2.5), "-2.5000000000000000e0");
        assert_eq!("1.0000000000000001e-1".parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn empty_statistics_render_as_empty_fields() {
        let row = ResultRow {
            alpha: 10.0,
            dt: 0.1,
            scheme: "em".into(),
            method: None,
            report: None,
            bias: None,
            mse: None,
            relative_mse: None,
            acceptance_rate: None,
            blowups: 3,
            gradient_evals: 1000,
            wall_seconds: 0.5,
        };
        let csv = Table::results(&[row]).to_csv();
        let (header, rows) = parse_csv(&csv);
        assert_eq!(header, RESULT_HEADER);
        assert_eq!(rows[0].len(), RESULT_HEADER.len());
        assert_eq!(&rows[0][3..14], vec![String::new(); 11].as_slice());
        assert_eq!(rows[0][14], "3");
        assert_eq!(header.last().unwrap(), "wall_seconds");
    }
}
