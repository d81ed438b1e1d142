//! CSV and JSON codecs for datasets, estimates and simulation tables.
//!
//! CSV numbers are written with 17 significant digits so every value
//! re-reads to the same `f64`. JSON files wrap their payload in an envelope
//! carrying [`SCHEMA_VERSION`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{
    AsymptoticDiagnostics, ClampFlag, DiagnosticsError, EstimateResult, EstimatorTag, PointFailure,
    PointIssue, WidenedPoint,
};
use crate::pooling::{Group, PooledDataset, PoolingError, PoolingStrategy, RawDataset};
use crate::simulation::{CovariateLaw, Curve, OverpoolRow, SimulationModel, SummaryCell};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: row {row}, column '{column}': cannot read '{value}' ({expected})")]
    Cell {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
        expected: &'static str,
    },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{path}: group '{group_id}' has inconsistent group_result values")]
    InconsistentGroup { path: PathBuf, group_id: String },
    #[error("{path}: {source}")]
    Pooling {
        path: PathBuf,
        #[source]
        source: PoolingError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format '{s}' (expected csv or json)")),
        }
    }
}

/// Formats with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

/// Header names for `dim` covariate columns.
fn covariate_names(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["x".into()]
    } else {
        (1..=dim).map(|k| format!("x{k}")).collect()
    }
}

/// Positions of the covariate columns (`x`, or `x1`, `x2`, …).
fn covariate_columns(path: &Path, headers: &csv::StringRecord) -> Result<Vec<usize>, IoError> {
    if let Some(i) = headers.iter().position(|h| h == "x") {
        if headers.iter().any(|h| h == "x1") {
            return Err(schema(path, "both 'x' and 'x1' columns present"));
        }
        return Ok(vec![i]);
    }
    let mut cols = Vec::new();
    for k in 1.. {
        match headers.iter().position(|h| h == format!("x{k}")) {
            Some(i) => cols.push(i),
            None => break,
        }
    }
    if cols.is_empty() {
        return Err(schema(path, "no covariate column ('x' or 'x1', 'x2', …)"));
    }
    Ok(cols)
}

fn schema(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Schema {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

struct CsvInput<'p> {
    path: &'p Path,
    headers: csv::StringRecord,
    records: Vec<csv::StringRecord>,
}

impl<'p> CsvInput<'p> {
    fn read<R: Read>(path: &'p Path, reader: R) -> Result<Self, IoError> {
        let csv_err = |source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let records = rdr
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(csv_err)?;
        Ok(CsvInput {
            path,
            headers,
            records,
        })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize, IoError> {
        self.column(name)
            .ok_or_else(|| schema(self.path, format!("missing column '{name}'")))
    }

    fn cell_error(&self, row: usize, col: usize, expected: &'static str) -> IoError {
        IoError::Cell {
            path: self.path.to_path_buf(),
            row: row + 2,
            column: self.headers.get(col).unwrap_or("").to_string(),
            value: self.records[row].get(col).unwrap_or("").to_string(),
            expected,
        }
    }

    fn text(&self, row: usize, col: usize) -> &str {
        self.records[row].get(col).unwrap_or("")
    }

    fn f64(&self, row: usize, col: usize) -> Result<f64, IoError> {
        let s = self.text(row, col);
        let v: f64 = s
            .parse()
            .map_err(|_| self.cell_error(row, col, "a number"))?;
        Ok(v)
    }

    fn finite(&self, row: usize, col: usize) -> Result<f64, IoError> {
        let v = self.f64(row, col)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.cell_error(row, col, "a finite number"))
        }
    }

    fn opt_f64(&self, row: usize, col: usize) -> Result<Option<f64>, IoError> {
        if self.text(row, col).is_empty() {
            Ok(None)
        } else {
            self.f64(row, col).map(Some)
        }
    }

    fn binary(&self, row: usize, col: usize) -> Result<bool, IoError> {
        match self.text(row, col) {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(self.cell_error(row, col, "0 or 1")),
        }
    }

    fn usize(&self, row: usize, col: usize) -> Result<usize, IoError> {
        self.text(row, col)
            .parse()
            .map_err(|_| self.cell_error(row, col, "a nonnegative integer"))
    }

    fn parse<T: std::str::FromStr>(
        &self,
        row: usize,
        col: usize,
        expected: &'static str,
    ) -> Result<T, IoError> {
        self.text(row, col)
            .parse()
            .map_err(|_| self.cell_error(row, col, expected))
    }
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads individual records: covariate column(s) and an optional `y`.
pub fn read_individual_csv(path: &Path) -> Result<RawDataset, IoError> {
    individual_from_reader(path, open(path)?)
}

pub fn individual_from_reader<R: Read>(path: &Path, reader: R) -> Result<RawDataset, IoError> {
    let input = CsvInput::read(path, reader)?;
    let xcols = covariate_columns(path, &input.headers)?;
    let ycol = input.column("y");
    let known = xcols.len() + usize::from(ycol.is_some());
    if input.headers.len() != known {
        return Err(schema(path, "unexpected columns; expected x[,x2,…][,y]"));
    }
    let mut x = Vec::with_capacity(input.records.len() * xcols.len());
    let mut y = ycol.map(|_| Vec::with_capacity(input.records.len()));
    for row in 0..input.records.len() {
        for &c in &xcols {
            x.push(input.finite(row, c)?);
        }
        if let (Some(c), Some(y)) = (ycol, y.as_mut()) {
            y.push(input.binary(row, c)?);
        }
    }
    RawDataset::new(x, xcols.len(), y).map_err(|source| IoError::Pooling {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads one row per individual with `group_id`, covariates and
/// `group_result`. Groups keep the order of first appearance.
pub fn read_pooled_csv(path: &Path) -> Result<PooledDataset, IoError> {
    pooled_from_reader(path, open(path)?)
}

pub fn pooled_from_reader<R: Read>(path: &Path, reader: R) -> Result<PooledDataset, IoError> {
    let input = CsvInput::read(path, reader)?;
    let gcol = input.require("group_id")?;
    let rcol = input.require("group_result")?;
    let xcols = covariate_columns(path, &input.headers)?;
    if input.headers.len() != xcols.len() + 2 {
        return Err(schema(
            path,
            "unexpected columns; expected group_id, x[,x2,…], group_result",
        ));
    }
    let dim = xcols.len();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<(String, Group)> = Vec::new();
    for row in 0..input.records.len() {
        let id = input.text(row, gcol).to_string();
        if id.is_empty() {
            return Err(input.cell_error(row, gcol, "a group identifier"));
        }
        let result = input.binary(row, rcol)?;
        let covs = xcols
            .iter()
            .map(|&c| input.finite(row, c))
            .collect::<Result<Vec<f64>, _>>()?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            groups.push((
                id.clone(),
                Group {
                    members: Vec::new(),
                    member_covariates: Vec::new(),
                    center: vec![0.0; dim],
                    pooled_positive: Some(result),
                    bin: None,
                },
            ));
            groups.len() - 1
        });
        let g = &mut groups[slot].1;
        if g.pooled_positive != Some(result) {
            return Err(IoError::InconsistentGroup {
                path: path.to_path_buf(),
                group_id: id,
            });
        }
        g.members.push(row);
        g.member_covariates.extend(covs);
    }
    let n = input.records.len();
    let mut out: Vec<Group> = groups.into_iter().map(|(_, g)| g).collect();
    for g in &mut out {
        let m = g.members.len() as f64;
        for k in 0..dim {
            g.center[k] = g.member_covariates.iter().skip(k).step_by(dim).sum::<f64>() / m;
        }
    }
    let mut pooled = PooledDataset {
        nu: if out.is_empty() {
            0.0
        } else {
            n as f64 / out.len() as f64
        },
        groups: out,
        strategy: PoolingStrategy::External,
        dim,
        bin_geometry: None,
        n_individuals: n,
    };
    if dim == 1 && !pooled.is_empty() && pooled.is_contiguous() {
        pooled.strategy = PoolingStrategy::HomogeneousSorted;
    }
    Ok(pooled)
}

fn create(path: &Path) -> Result<File, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, IoError> {
    Ok(csv::WriterBuilder::new().from_writer(create(path)?))
}

fn finish_csv(path: &Path, mut w: csv::Writer<File>) -> Result<(), IoError> {
    w.flush().map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_result<T>(path: &Path, r: Result<T, csv::Error>) -> Result<T, IoError> {
    r.map_err(|source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_individual_csv(raw: &RawDataset, path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    let mut header = covariate_names(raw.dim());
    if raw.has_responses() {
        header.push("y".into());
    }
    csv_result(path, w.write_record(&header))?;
    for i in 0..raw.len() {
        let mut row: Vec<String> = raw.point(i).iter().map(|v| format_f64(*v)).collect();
        if let Some(y) = raw.responses() {
            row.push(bit(y[i]).into());
        }
        csv_result(path, w.write_record(&row))?;
    }
    finish_csv(path, w)
}

/// One row per individual; group ids are `g1, g2, …` in group order.
pub fn write_pooled_csv(pooled: &PooledDataset, path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["group_id".to_string()];
    header.extend(covariate_names(pooled.dim));
    header.push("group_result".into());
    csv_result(path, w.write_record(&header))?;
    for (j, g) in pooled.groups.iter().enumerate() {
        let result = g
            .pooled_positive
            .ok_or_else(|| schema(path, format!("group {} has no test result", j + 1)))?;
        for point in g.member_covariates.chunks(pooled.dim) {
            let mut row = vec![format!("g{}", j + 1)];
            row.extend(point.iter().map(|v| format_f64(*v)));
            row.push(bit(result).into());
            csv_result(path, w.write_record(&row))?;
        }
    }
    finish_csv(path, w)
}

const ESTIMATE_COLUMNS: [&str; 9] = [
    "p_hat",
    "mu_hat",
    "clamp_flag",
    "status",
    "point_bandwidth",
    "estimator",
    "nu",
    "bandwidth_used",
    "q_hat",
];

/// Grid point columns first, then estimates and per-row run metadata.
/// `status` is `ok` or the failure as compact JSON.
pub fn write_estimate_csv(result: &EstimateResult, path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    let mut header = covariate_names(result.dim);
    header.extend(ESTIMATE_COLUMNS.iter().map(|s| s.to_string()));
    csv_result(path, w.write_record(&header))?;
    let failures: HashMap<usize, PointIssue> =
        result.failures.iter().map(|f| (f.index, f.issue)).collect();
    let widened: HashMap<usize, f64> = result
        .widened
        .iter()
        .map(|w| (w.index, w.bandwidth))
        .collect();
    for i in 0..result.len() {
        let mut row: Vec<String> = result.point(i).iter().map(|v| format_f64(*v)).collect();
        row.push(format_opt(result.p_hat[i]));
        row.push(format_opt(result.mu_hat[i]));
        row.push(result.clamp_flags[i].as_str().into());
        row.push(match failures.get(&i) {
            None => "ok".into(),
            Some(issue) => serde_json::to_string(issue).expect("issue serializes"),
        });
        row.push(format_opt(widened.get(&i).copied()));
        row.push(result.estimator.as_str().into());
        row.push(format_f64(result.nu));
        row.push(format_f64(result.bandwidth_used));
        row.push(format_opt(result.q_hat));
        csv_result(path, w.write_record(&row))?;
    }
    finish_csv(path, w)
}

/// Reads a file written by [`write_estimate_csv`]. An empty (header-only)
/// file carries no run metadata and cannot be read back.
pub fn read_estimate_csv(path: &Path) -> Result<EstimateResult, IoError> {
    let input = CsvInput::read(path, open(path)?)?;
    let xcols = covariate_columns(path, &input.headers)?;
    let cols = ESTIMATE_COLUMNS
        .iter()
        .map(|c| input.require(c))
        .collect::<Result<Vec<usize>, _>>()?;
    if input.records.is_empty() {
        return Err(schema(
            path,
            "no rows; run metadata is only available from JSON",
        ));
    }
    let mut out = EstimateResult {
        estimator: input.parse::<EstimatorTag>(0, cols[5], "an estimator tag")?,
        dim: xcols.len(),
        nu: input.f64(0, cols[6])?,
        grid: Vec::new(),
        p_hat: Vec::new(),
        mu_hat: Vec::new(),
        clamp_flags: Vec::new(),
        failures: Vec::new(),
        bandwidth_used: input.f64(0, cols[7])?,
        widened: Vec::new(),
        q_hat: input.opt_f64(0, cols[8])?,
    };
    for row in 0..input.records.len() {
        for &c in &xcols {
            out.grid.push(input.f64(row, c)?);
        }
        out.p_hat.push(input.opt_f64(row, cols[0])?);
        out.mu_hat.push(input.opt_f64(row, cols[1])?);
        out.clamp_flags
            .push(input.parse::<ClampFlag>(row, cols[2], "a clamp flag")?);
        let status = input.text(row, cols[3]);
        if status != "ok" {
            let issue: PointIssue = serde_json::from_str(status)
                .map_err(|_| input.cell_error(row, cols[3], "'ok' or a failure record"))?;
            out.failures.push(PointFailure { index: row, issue });
        }
        if let Some(bandwidth) = input.opt_f64(row, cols[4])? {
            out.widened.push(WidenedPoint {
                index: row,
                bandwidth,
            });
        }
    }
    Ok(out)
}

const TABLE_COLUMNS: [&str; 15] = [
    "model",
    "law",
    "law_a",
    "law_b",
    "delta_scale",
    "n",
    "nu",
    "estimator",
    "med_ise_e4",
    "iqr_ise_e4",
    "n_failed_reps",
    "replicates",
    "flagged",
    "first_failure",
    "model_label",
];

/// One row per (model, N, ν, estimator) cell. Uniform laws store `(a, b)`
/// in `law_a, law_b`; normal laws store `(mean, sd)`. Traces are JSON-only.
pub fn write_table_csv(cells: &[SummaryCell], path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    csv_result(path, w.write_record(TABLE_COLUMNS))?;
    for c in cells {
        let (law, a, b) = match c.model.law {
            CovariateLaw::Uniform { a, b } => ("uniform", a, b),
            CovariateLaw::Normal { mean, sd } => ("normal", mean, sd),
        };
        let row = vec![
            c.model.curve.to_string(),
            law.to_string(),
            format_f64(a),
            format_f64(b),
            format_f64(c.model.delta_scale),
            c.n.to_string(),
            c.nu.map(|v| v.to_string()).unwrap_or_default(),
            c.estimator.as_str().to_string(),
            format_f64(c.med_ise_e4),
            format_f64(c.iqr_ise_e4),
            c.n_failed_reps.to_string(),
            c.replicates.to_string(),
            bit(c.flagged).to_string(),
            c.first_failure.clone().unwrap_or_default(),
            c.model.label(),
        ];
        csv_result(path, w.write_record(&row))?;
    }
    finish_csv(path, w)
}

pub fn read_table_csv(path: &Path) -> Result<Vec<SummaryCell>, IoError> {
    let input = CsvInput::read(path, open(path)?)?;
    let cols = TABLE_COLUMNS
        .iter()
        .map(|c| input.require(c))
        .collect::<Result<Vec<usize>, _>>()?;
    (0..input.records.len())
        .map(|row| {
            let a = input.f64(row, cols[2])?;
            let b = input.f64(row, cols[3])?;
            let law = match input.text(row, cols[1]) {
                "uniform" => CovariateLaw::Uniform { a, b },
                "normal" => CovariateLaw::Normal { mean: a, sd: b },
                _ => return Err(input.cell_error(row, cols[1], "uniform or normal")),
            };
            let nu = if input.text(row, cols[6]).is_empty() {
                None
            } else {
                Some(input.usize(row, cols[6])?)
            };
            let failure = input.text(row, cols[13]);
            Ok(SummaryCell {
                model: SimulationModel {
                    curve: input.parse::<Curve>(row, cols[0], "a model id")?,
                    law,
                    delta_scale: input.f64(row, cols[4])?,
                },
                n: input.usize(row, cols[5])?,
                nu,
                estimator: input.parse(row, cols[7], "an estimator tag")?,
                med_ise_e4: input.f64(row, cols[8])?,
                iqr_ise_e4: input.f64(row, cols[9])?,
                n_failed_reps: input.usize(row, cols[10])?,
                replicates: input.usize(row, cols[11])?,
                flagged: input.binary(row, cols[12])?,
                first_failure: (!failure.is_empty()).then(|| failure.to_string()),
                traces: None,
            })
        })
        .collect()
}

/// First-order diagnostics at one point, or why they are unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub x: f64,
    pub values: Option<AsymptoticDiagnostics>,
    pub error: Option<String>,
}

impl DiagnosticsRow {
    pub fn new(x: f64, r: Result<AsymptoticDiagnostics, DiagnosticsError>) -> Self {
        match r {
            Ok(v) => DiagnosticsRow {
                x,
                values: Some(v),
                error: None,
            },
            Err(e) => DiagnosticsRow {
                x,
                values: None,
                error: Some(e.to_string()),
            },
        }
    }
}

const DIAGNOSTICS_COLUMNS: [&str; 11] = [
    "x", "p", "a", "b", "a1", "b1", "q", "lambda_n", "b_const", "v", "error",
];

pub fn write_diagnostics_csv(rows: &[DiagnosticsRow], path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    csv_result(path, w.write_record(DIAGNOSTICS_COLUMNS))?;
    for r in rows {
        let mut row = vec![format_f64(r.x)];
        match &r.values {
            Some(d) => row.extend(
                [d.p, d.a, d.b, d.a1, d.b1, d.q, d.lambda_n, d.b_const, d.v].map(format_f64),
            ),
            None => row.extend(std::iter::repeat_n(String::new(), 9)),
        }
        row.push(r.error.clone().unwrap_or_default());
        csv_result(path, w.write_record(&row))?;
    }
    finish_csv(path, w)
}

pub fn read_diagnostics_csv(path: &Path) -> Result<Vec<DiagnosticsRow>, IoError> {
    let input = CsvInput::read(path, open(path)?)?;
    let cols = DIAGNOSTICS_COLUMNS
        .iter()
        .map(|c| input.require(c))
        .collect::<Result<Vec<usize>, _>>()?;
    (0..input.records.len())
        .map(|row| {
            let x = input.f64(row, cols[0])?;
            let error = input.text(row, cols[10]);
            if !error.is_empty() {
                return Ok(DiagnosticsRow {
                    x,
                    values: None,
                    error: Some(error.to_string()),
                });
            }
            let v = |k: usize| input.f64(row, cols[k]);
            Ok(DiagnosticsRow {
                x,
                values: Some(AsymptoticDiagnostics {
                    x,
                    p: v(1)?,
                    a: v(2)?,
                    b: v(3)?,
                    a1: v(4)?,
                    b1: v(5)?,
                    q: v(6)?,
                    lambda_n: v(7)?,
                    b_const: v(8)?,
                    v: v(9)?,
                }),
                error: None,
            })
        })
        .collect()
}

/// One row per pool size: the summary cell plus `λ_N`.
pub fn write_overpool_csv(rows: &[OverpoolRow], path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    csv_result(
        path,
        w.write_record([
            "estimator",
            "nu",
            "med_ise_e4",
            "iqr_ise_e4",
            "n_failed_reps",
            "flagged",
            "lambda_n",
        ]),
    )?;
    for r in rows {
        let c = &r.cell;
        let row = [
            c.estimator.as_str().to_string(),
            c.nu.map(|v| v.to_string()).unwrap_or_default(),
            format_f64(c.med_ise_e4),
            format_f64(c.iqr_ise_e4),
            c.n_failed_reps.to_string(),
            bit(c.flagged).to_string(),
            format_opt(r.lambda_n),
        ];
        csv_result(path, w.write_record(&row))?;
    }
    finish_csv(path, w)
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    kind: String,
    data: T,
}

/// Writes `data` inside a versioned envelope.
pub fn write_json<T: Serialize>(data: &T, kind: &str, path: &Path) -> Result<(), IoError> {
    let mut f = create(path)?;
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        data,
    };
    serde_json::to_writer_pretty(&mut f, &env).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(b"\n").map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a file written by [`write_json`], checking version and kind.
pub fn read_json<T: DeserializeOwned>(kind: &str, path: &Path) -> Result<T, IoError> {
    let env: Envelope<T> =
        serde_json::from_reader(std::io::BufReader::new(open(path)?)).map_err(|source| {
            IoError::Json {
                path: path.to_path_buf(),
                source,
            }
        })?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(schema(
            path,
            format!("schema version {} not supported", env.schema_version),
        ));
    }
    if env.kind != kind {
        return Err(schema(
            path,
            format!("expected a '{kind}' document, found '{}'", env.kind),
        ));
    }
    Ok(env.data)
}

/// Writes an estimate in each requested format as `<outdir>/<stem>.<ext>`.
pub fn emit_estimate(
    result: &EstimateResult,
    formats: &[Format],
    outdir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, IoError> {
    let mut written = Vec::new();
    for f in formats {
        let path = outdir.join(format!("{stem}.{}", extension(*f)));
        match f {
            Format::Csv => write_estimate_csv(result, &path)?,
            Format::Json => write_json(result, "estimate", &path)?,
        }
        written.push(path);
    }
    Ok(written)
}

/// Writes a summary table in each requested format.
pub fn emit_table(
    cells: &[SummaryCell],
    formats: &[Format],
    outdir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, IoError> {
    let mut written = Vec::new();
    for f in formats {
        let path = outdir.join(format!("{stem}.{}", extension(*f)));
        match f {
            Format::Csv => write_table_csv(cells, &path)?,
            Format::Json => write_json(&cells, "table", &path)?,
        }
        written.push(path);
    }
    Ok(written)
}

pub fn emit_diagnostics(
    rows: &[DiagnosticsRow],
    formats: &[Format],
    outdir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, IoError> {
    let mut written = Vec::new();
    for f in formats {
        let path = outdir.join(format!("{stem}.{}", extension(*f)));
        match f {
            Format::Csv => write_diagnostics_csv(rows, &path)?,
            Format::Json => write_json(&rows, "diagnostics", &path)?,
        }
        written.push(path);
    }
    Ok(written)
}

fn extension(f: Format) -> &'static str {
    match f {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}
