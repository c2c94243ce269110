//! Model documents (JSON) and the CSV/JSON outputs written by the CLI.
//!
//! A model document looks like
//!
//! ```json
//! {
//!   "d": 2,
//!   "c": [0.5, 0.5],
//!   "beta": [1.0, 0.0],
//!   "B": [[-1.0, 1.0], [1.0, -1.0]],
//!   "nu": [{"point": [1.0, 1.0], "weight": 0.5}],
//!   "mu": [[], []],
//!   "x0_mean": [0.0, 0.0]
//! }
//! ```
//!
//! `nu`, `mu` (or trailing entries of `mu`) and `x0_mean` may be omitted and
//! default to zero. An optional free-text `comment` is carried along.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::ConvergenceReport;
use crate::linalg::{to_rows, Mat};
use crate::model::{Atom, AtomMeasure, ModelSpec, ValidatedModel, ValidationErrors, ValidationIssue};
use crate::simulate::Path;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IoError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("cannot read {}: {message}", path.display())]
    Read { path: PathBuf, message: String },
    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("cannot write {}: {message}", path.display())]
    Write { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomDocument {
    pub point: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub d: usize,
    pub c: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub nu: Vec<AtomDocument>,
    #[serde(default)]
    pub mu: Vec<Vec<AtomDocument>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_mean: Option<Vec<f64>>,
}

fn measure_from(atoms: &[AtomDocument]) -> AtomMeasure {
    AtomMeasure::new(
        atoms
            .iter()
            .map(|a| Atom::new(a.point.clone(), a.weight))
            .collect(),
    )
}

fn measure_to(m: &AtomMeasure) -> Vec<AtomDocument> {
    m.atoms
        .iter()
        .map(|a| AtomDocument {
            point: a.point.clone(),
            weight: a.weight,
        })
        .collect()
}

impl ModelDocument {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        Self {
            comment: None,
            d: spec.d,
            c: spec.c.clone(),
            beta: spec.beta.clone(),
            b: to_rows(&spec.b),
            nu: measure_to(&spec.nu),
            mu: spec.mu.iter().map(measure_to).collect(),
            x0_mean: Some(spec.x0_mean.clone()),
        }
    }

    pub fn from_model(model: &ValidatedModel) -> Self {
        Self::from_spec(model.spec())
    }

    /// Builds the raw parameter tuple. Only the shape of `B` is checked here;
    /// everything else is left to [`ModelSpec::validate`].
    pub fn to_spec(&self) -> Result<ModelSpec, ValidationErrors> {
        let d = self.d;
        let mut issues = Vec::new();
        if self.b.len() != d {
            issues.push(ValidationIssue::DimensionMismatch {
                field: "B".into(),
                expected: d,
                found: self.b.len(),
            });
        }
        for (i, row) in self.b.iter().enumerate() {
            if row.len() != d {
                issues.push(ValidationIssue::DimensionMismatch {
                    field: format!("B row {}", i + 1),
                    expected: d,
                    found: row.len(),
                });
            }
        }
        if !issues.is_empty() {
            return Err(ValidationErrors(issues));
        }
        let b = Mat::from_fn(d, d, |i, j| self.b[i][j]);
        let mut mu: Vec<AtomMeasure> = self.mu.iter().map(|m| measure_from(m)).collect();
        if mu.len() < d {
            mu.resize(d, AtomMeasure::zero());
        }
        Ok(ModelSpec {
            d,
            c: self.c.clone(),
            beta: self.beta.clone(),
            b,
            nu: measure_from(&self.nu),
            mu,
            x0_mean: self.x0_mean.clone().unwrap_or_else(|| vec![0.0; d]),
        })
    }

    pub fn to_model(&self) -> Result<ValidatedModel> {
        Ok(self.to_spec()?.validate()?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model documents always serialize")
    }
}

/// Parses a model document, reporting the position and field path of the
/// first error.
pub fn parse_model(text: &str) -> Result<ModelDocument, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ModelDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        IoError::Parse {
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    Ok(doc)
}

pub fn read_model_document(path: &FsPath) -> Result<ModelDocument, IoError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IoError::FileNotFound(path.to_path_buf()),
        _ => IoError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    })?;
    parse_model(&text)
}

pub fn load_model(path: &FsPath) -> Result<ValidatedModel> {
    read_model_document(path)?.to_model()
}

/// Formats with 17 significant digits, enough for a lossless round trip.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn join_row(cells: &[String]) -> String {
    let mut line = cells.join(",");
    line.push('\n');
    line
}

/// Mean CSV with header `t,EX_1,...,EX_d`.
pub fn mean_csv(times: &[f64], means: &[Vec<f64>]) -> String {
    let d = means.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("EX_{i}")));
    let mut out = join_row(&header);
    for (t, m) in times.iter().zip(means) {
        let mut row = vec![fmt_num(*t)];
        row.extend(m.iter().map(|&x| fmt_num(x)));
        out.push_str(&join_row(&row));
    }
    out
}

/// Path CSV with header `t,x1,...,xd,path_id` (or `t,x,path_id` for scalar paths).
pub fn paths_csv(paths: &[Path]) -> String {
    let d = paths
        .first()
        .and_then(|p| p.states.first())
        .map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    if d == 1 && paths.iter().all(|p| p.scheme != crate::simulate::Scheme::CbiEuler) {
        header.push("x".into());
    } else {
        header.extend((1..=d).map(|i| format!("x{i}")));
    }
    header.push("path_id".into());
    let mut out = join_row(&header);
    for (id, p) in paths.iter().enumerate() {
        for (t, x) in p.times.iter().zip(&p.states) {
            out.push_str(&fmt_num(*t));
            for v in x {
                out.push(',');
                out.push_str(&fmt_num(*v));
            }
            let _ = writeln!(out, ",{id}");
        }
    }
    out
}

pub fn ks_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("n,ks,threshold\n");
    for l in &report.levels {
        let stat = l.ks.or(l.degenerate_error).unwrap_or(f64::NAN);
        let _ = writeln!(out, "{},{},{}", l.n, fmt_num(stat), fmt_num(l.threshold));
    }
    out
}

pub fn freq_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("n,type,median_error\n");
    for l in &report.levels {
        if let Some(f) = &l.frequencies {
            for (i, e) in f.median_errors.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", l.n, i + 1, fmt_num(*e));
            }
        }
    }
    out
}

/// `t_or_n,q,ratio,series` where `series` is `state` (`E‖X_t‖^q/(1+t)^q`)
/// or `martingale` (`E‖M_n‖^q/n^{q/2}`).
pub fn moments_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("t_or_n,q,ratio,series\n");
    for r in &report.moments {
        let _ = writeln!(out, "{},{},{},{}", fmt_num(r.t_or_n), r.q, fmt_num(r.ratio), r.series);
    }
    out
}

pub fn write_text(path: &FsPath, text: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| IoError::Write {
            path: parent.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    fs::write(path, text).map_err(|e| IoError::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &FsPath, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| IoError::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_text(path, &(text + "\n"))
}

/// Writes `report.json`, `ks.csv`, `freq.csv` and `moments.csv` into `dir`.
pub fn write_report_bundle(dir: &FsPath, report: &ConvergenceReport) -> Result<(), IoError> {
    write_json(&dir.join("report.json"), report)?;
    write_text(&dir.join("ks.csv"), &ks_csv(report))?;
    write_text(&dir.join("freq.csv"), &freq_csv(report))?;
    write_text(&dir.join("moments.csv"), &moments_csv(report))
}

/// Run metadata kept apart from the reproducible outputs: it holds the only
/// wall-clock fields.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub command: String,
    pub seed: u64,
    pub model: ModelDocument,
    pub parameters: serde_json::Value,
    pub version: &'static str,
    pub started: String,
    pub elapsed_seconds: f64,
}

impl RunMetadata {
    pub fn new(
        command: &str,
        seed: u64,
        model: ModelDocument,
        parameters: serde_json::Value,
        started: chrono::DateTime<chrono::Utc>,
    ) -> Self {
        let elapsed = (chrono::Utc::now() - started).num_milliseconds() as f64 / 1000.0;
        Self {
            command: command.into(),
            seed,
            model,
            parameters,
            version: env!("CARGO_PKG_VERSION"),
            started: started.to_rfc3339(),
            elapsed_seconds: elapsed,
        }
    }
}
