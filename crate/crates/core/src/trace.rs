//! Machine-readable run output and its independent re-verification.
//!
//! A run produces `<prefix>.trace.csv` (one row per outer iteration) and
//! `<prefix>.summary.json`. [`verify_trace`] re-folds the trace, checks the
//! certificate inequalities at every prefix, and cross-checks the summary.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::certificate::{check_step, default_check_tol, fit_rate, Certificate, IterationRecord};
use crate::error::Error as CoreError;
use crate::solver::{Method, RunResult};

/// Exact header of the trace CSV.
pub const TRACE_HEADER: [&str; 10] = [
    "t",
    "f_before",
    "f_after_x",
    "f_after_y",
    "gx_norm_sq",
    "gy_residual",
    "e_t",
    "suff_ok",
    "cum_sum",
    "rate_bound_prefix",
];

/// A trace row: the iteration record plus the certificate's running values
/// after folding it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub record: IterationRecord,
    pub cum_sum: f64,
    pub rate_bound_prefix: f64,
}

pub fn trace_rows(result: &RunResult) -> Vec<TraceRow> {
    let mut cert = Certificate::new(
        result.certificate.f0,
        result.initial_gy_residual,
        result.certificate.check_tol,
    );
    result
        .history
        .iter()
        .map(|rec| {
            // History records are in order by construction.
            cert.accumulate(rec).expect("ordered history");
            TraceRow {
                record: rec.clone(),
                cum_sum: cert.running_sum,
                rate_bound_prefix: cert.rate_bound,
            }
        })
        .collect()
}

/// Renders rows as CSV text. Floats use Rust's shortest round-trip form.
pub fn render_trace_csv(rows: &[TraceRow]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("in-memory write");
    for row in rows {
        let r = &row.record;
        w.write_record([
            r.t.to_string(),
            r.f_before.to_string(),
            r.f_after_x.to_string(),
            r.f_after_y.to_string(),
            r.gx_norm_sq.to_string(),
            r.gy_residual.to_string(),
            r.e_t.to_string(),
            u8::from(r.suff_ok).to_string(),
            row.cum_sum.to_string(),
            row.rate_bound_prefix.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("tamper detected{}: {detail}", row.map(|t| format!(" at row t={t}")).unwrap_or_default())]
    TamperDetected { row: Option<usize>, detail: String },

    #[error("certificate violated{}: {detail}", row.map(|t| format!(" at row t={t}")).unwrap_or_default())]
    CertificateViolation { row: Option<usize>, detail: String },

    #[error("{0}")]
    Io(String),
}

impl TraceError {
    /// `1` for operational problems, `2` for verification failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            TraceError::Io(_) => 1,
            _ => 2,
        }
    }
}

fn parse_f64(field: &str, name: &str, line: usize) -> Result<f64, TraceError> {
    field.parse::<f64>().map_err(|_| {
        TraceError::SchemaMismatch(format!("line {line}: `{name}` = {field:?} is not a number"))
    })
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| TraceError::SchemaMismatch(e.to_string()))?
        .clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(TraceError::SchemaMismatch(format!(
            "header is `{}`, expected `{}`",
            header.iter().collect::<Vec<_>>().join(","),
            TRACE_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| TraceError::SchemaMismatch(format!("line {line}: {e}")))?;
        if rec.len() != TRACE_HEADER.len() {
            return Err(TraceError::SchemaMismatch(format!(
                "line {line}: {} fields",
                rec.len()
            )));
        }
        let t = rec[0]
            .parse::<usize>()
            .map_err(|_| TraceError::SchemaMismatch(format!("line {line}: bad t {:?}", &rec[0])))?;
        let f = |k: usize| parse_f64(&rec[k], TRACE_HEADER[k], line);
        let suff_ok = match &rec[7] {
            "0" => false,
            "1" => true,
            other => {
                return Err(TraceError::SchemaMismatch(format!(
                    "line {line}: suff_ok must be 0 or 1, got {other:?}"
                )))
            }
        };
        rows.push(TraceRow {
            record: IterationRecord {
                t,
                f_before: f(1)?,
                f_after_x: f(2)?,
                f_after_y: f(3)?,
                gx_norm_sq: f(4)?,
                gy_residual: f(5)?,
                e_t: f(6)?,
                suff_ok,
            },
            cum_sum: f(8)?,
            rate_bound_prefix: f(9)?,
        });
    }
    Ok(rows)
}

/// Contents of `<prefix>.summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub problem: String,
    pub method: Method,
    pub f0: f64,
    pub f_final: f64,
    #[serde(rename = "T")]
    pub iterations: usize,
    pub e_min: Option<f64>,
    pub e_max: Option<f64>,
    pub min_grad_sq: Option<f64>,
    pub rate_bound: Option<f64>,
    pub running_sum: f64,
    pub check_tol: f64,
    pub all_steps_ok: bool,
    pub telescope_ok: bool,
    pub rate_ok: bool,
    pub certificate_passed: bool,
    pub initial_gy_residual: f64,
    pub max_gy_residual: f64,
    pub lower_bound: Option<f64>,
    pub gap_to_lower_bound: Option<f64>,
    pub e_growing: bool,
    pub fitted_slope: Option<f64>,
    pub stop_reason: String,
    pub error: Option<String>,
    pub error_kind: Option<String>,
    pub wall_time: f64,
    pub trace_sha256: String,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Summary {
    pub fn from_run(
        problem: &str,
        result: &RunResult,
        error: Option<&CoreError>,
        trace_csv: &str,
    ) -> Self {
        let c = &result.certificate;
        Summary {
            problem: problem.to_string(),
            method: result.method,
            f0: c.f0,
            f_final: c.f_final,
            iterations: c.iterations,
            e_min: finite(c.e_min),
            e_max: (c.iterations > 0).then_some(c.e_max).and_then(finite),
            min_grad_sq: finite(c.min_grad_sq),
            rate_bound: finite(c.rate_bound),
            running_sum: c.running_sum,
            check_tol: c.check_tol,
            all_steps_ok: c.all_steps_ok,
            telescope_ok: c.telescope_ok,
            rate_ok: c.rate_ok,
            certificate_passed: c.passed(),
            initial_gy_residual: result.initial_gy_residual,
            max_gy_residual: c.max_gy_residual,
            lower_bound: result.lower_bound,
            gap_to_lower_bound: result.lower_bound.map(|lb| c.f_final - lb),
            e_growing: result.e_growing(),
            fitted_slope: fit_rate(&result.history).ok(),
            stop_reason: result.stop_reason.as_str().to_string(),
            error: error.map(ToString::to_string),
            error_kind: error.map(|e| e.kind().to_string()),
            wall_time: result.wall_time.as_secs_f64(),
            trace_sha256: sha256_hex(trace_csv.as_bytes()),
        }
    }
}

/// Writes `contents` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

pub fn trace_path(prefix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}.trace.csv"))
}

pub fn summary_path(prefix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}.summary.json"))
}

/// The summary that belongs to a `<prefix>.trace.csv` path.
pub fn summary_path_for_trace(trace: &Path) -> Option<PathBuf> {
    let s = trace.to_str()?;
    s.strip_suffix(".trace.csv")
        .map(|p| PathBuf::from(format!("{p}.summary.json")))
}

/// Empirical rate on a verified trace.
#[derive(Debug, Clone, PartialEq)]
pub enum RateFit {
    Slope(f64),
    InsufficientHistory,
    Converged,
}

impl fmt::Display for RateFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateFit::Slope(s) => write!(f, "{s:.6}"),
            RateFit::InsufficientHistory => write!(f, "insufficient history"),
            RateFit::Converged => write!(f, "converged (gradient reached zero)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceVerification {
    pub certificate: Certificate,
    pub rate_fit: RateFit,
    pub summary_checked: bool,
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

fn same_opt(a: Option<f64>, b: f64) -> bool {
    match a {
        Some(a) => same(a, b),
        None => !b.is_finite(),
    }
}

/// Re-derives the certificate from a trace and cross-checks it.
///
/// Every recorded `suff_ok`, `cum_sum` and `rate_bound_prefix` must match a
/// fresh fold bit for bit, consecutive rows must chain
/// (`f_before[t] = f_after_y[t-1]`), and, when a summary is supplied, its
/// figures and the trace digest must agree. For coordinate-descent runs the
/// certificate inequalities must also hold at every prefix.
pub fn verify_trace(
    csv_text: &str,
    summary: Option<&Summary>,
) -> Result<TraceVerification, TraceError> {
    let rows = parse_trace_csv(csv_text)?;

    if let Some(s) = summary {
        let digest = sha256_hex(csv_text.as_bytes());
        if digest != s.trace_sha256 {
            // Locate the first semantically inconsistent row if there is one.
            replay(&rows, summary)?;
            return Err(TraceError::TamperDetected {
                row: None,
                detail: format!(
                    "trace digest {digest} differs from summary {}",
                    s.trace_sha256
                ),
            });
        }
    }
    let certificate = replay(&rows, summary)?;

    let certified_method =
        summary.is_none_or(|s| matches!(s.method, Method::BlockCoordinate { .. }));
    if certified_method {
        check_inequalities(&rows, summary)?;
    }

    let history: Vec<IterationRecord> = rows.into_iter().map(|r| r.record).collect();
    let rate_fit = match fit_rate(&history) {
        Ok(s) => RateFit::Slope(s),
        Err(CoreError::DegenerateFit) => RateFit::Converged,
        Err(_) => RateFit::InsufficientHistory,
    };
    Ok(TraceVerification {
        certificate,
        rate_fit,
        summary_checked: summary.is_some(),
    })
}

fn replay(rows: &[TraceRow], summary: Option<&Summary>) -> Result<Certificate, TraceError> {
    let f0 = summary
        .map(|s| s.f0)
        .or_else(|| rows.first().map(|r| r.record.f_before))
        .unwrap_or(0.0);
    let check_tol = summary.map_or_else(|| default_check_tol(f0), |s| s.check_tol);
    let initial_gy = summary.map_or(0.0, |s| s.initial_gy_residual);
    let mut cert = Certificate::new(f0, initial_gy, check_tol);

    let mut prev_f = f0;
    for (i, row) in rows.iter().enumerate() {
        let r = &row.record;
        if r.t != i {
            return Err(TraceError::SchemaMismatch(format!(
                "row {i} has t = {}",
                r.t
            )));
        }
        let tamper = |detail: String| TraceError::TamperDetected {
            row: Some(r.t),
            detail,
        };
        if !same(r.f_before, prev_f) {
            return Err(tamper(format!(
                "f_before = {} does not continue the previous f = {prev_f}",
                r.f_before
            )));
        }
        if check_step(r, check_tol) != r.suff_ok {
            return Err(tamper(format!(
                "recorded suff_ok = {} disagrees with recomputation",
                u8::from(r.suff_ok)
            )));
        }
        cert.accumulate(r).map_err(|e| tamper(e.to_string()))?;
        if !same(cert.running_sum, row.cum_sum) {
            return Err(tamper(format!(
                "cum_sum {} != recomputed {}",
                row.cum_sum, cert.running_sum
            )));
        }
        if !same(cert.rate_bound, row.rate_bound_prefix) {
            return Err(tamper(format!(
                "rate_bound_prefix {} != recomputed {}",
                row.rate_bound_prefix, cert.rate_bound
            )));
        }
        prev_f = r.f_after_y;
    }

    if let Some(s) = summary {
        let mismatch = |what: &str| TraceError::TamperDetected {
            row: None,
            detail: format!("summary field `{what}` disagrees with the trace"),
        };
        if s.iterations != cert.iterations {
            return Err(mismatch("T"));
        }
        if !same(s.f_final, cert.f_final) {
            return Err(mismatch("f_final"));
        }
        if !same(s.running_sum, cert.running_sum) {
            return Err(mismatch("running_sum"));
        }
        if !same_opt(s.min_grad_sq, cert.min_grad_sq) {
            return Err(mismatch("min_grad_sq"));
        }
        if !same_opt(s.rate_bound, cert.rate_bound) {
            return Err(mismatch("rate_bound"));
        }
        if !same_opt(s.e_min, cert.e_min) {
            return Err(mismatch("e_min"));
        }
        if cert.iterations > 0 && !same_opt(s.e_max, cert.e_max) {
            return Err(mismatch("e_max"));
        }
        if s.all_steps_ok != cert.all_steps_ok
            || s.telescope_ok != cert.telescope_ok
            || s.rate_ok != cert.rate_ok
        {
            return Err(mismatch("certificate flags"));
        }
    }
    Ok(cert)
}

/// Re-checks each prefix inequality; the first failing row is reported.
fn check_inequalities(rows: &[TraceRow], summary: Option<&Summary>) -> Result<(), TraceError> {
    let f0 = summary
        .map(|s| s.f0)
        .or_else(|| rows.first().map(|r| r.record.f_before))
        .unwrap_or(0.0);
    let check_tol = summary.map_or_else(|| default_check_tol(f0), |s| s.check_tol);
    let mut cert = Certificate::new(f0, 0.0, check_tol);
    for row in rows {
        let r = &row.record;
        let violation = |detail: &str| TraceError::CertificateViolation {
            row: Some(r.t),
            detail: detail.to_string(),
        };
        if !check_step(r, check_tol) {
            return Err(violation("per-step sufficient decrease fails"));
        }
        cert.accumulate(r).map_err(|e| violation(&e.to_string()))?;
        if !cert.verify_telescope(check_tol) {
            return Err(violation("telescoped sum exceeds f0 - f_T"));
        }
        if cert.min_grad_sq > cert.rate_bound + cert.rate_tolerance() {
            return Err(violation("min gradient exceeds the rate bound"));
        }
        if !(cert.e_min > 0.0) {
            return Err(violation("e_min is not positive"));
        }
    }
    Ok(())
}
