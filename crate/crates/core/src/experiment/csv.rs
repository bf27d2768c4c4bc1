//! CSV artifacts: features, classifier, trajectories and sweep summaries.
//!
//! Comma-separated, LF line endings, reals in `{:.16e}` (17 significant
//! digits, so every `f64` round-trips exactly). Labels are one-based on disk.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::metrics::MetricsReport;
use crate::model::Labels;
use crate::optimizer::Record;

pub const TRAJECTORY_COLUMNS: [&str; 18] = [
    "step",
    "objective",
    "grad_inf_norm",
    "nc1",
    "nc2",
    "nc3",
    "accuracy",
    "uniform_accuracy",
    "e_com",
    "e_dis",
    "pos_mean",
    "pos_std",
    "neg_mean",
    "neg_std",
    "bias_mean",
    "bias_std",
    "rho",
    "alpha_at_bias",
];

pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let mut first = true;
    for f in fields {
        if !first {
            out.push(',');
        }
        out.push_str(&f);
        first = false;
    }
    out.push('\n');
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// The 15 metric columns of a record, NaN when absent.
pub fn metric_fields(m: Option<&MetricsReport<f64>>) -> Vec<String> {
    let vals = match m {
        Some(m) => vec![
            m.nc1,
            m.nc2,
            m.nc3,
            m.accuracy,
            m.uniform_accuracy,
            m.e_com,
            m.e_dis,
            m.score_stats.pos_mean,
            m.score_stats.pos_std,
            m.score_stats.neg_mean,
            m.score_stats.neg_std,
            m.bias_mean,
            m.bias_std,
            m.rho,
            m.alpha_at_bias,
        ],
        None => vec![f64::NAN; 15],
    };
    vals.into_iter().map(fmt_real).collect()
}

pub fn trajectory_csv(records: &[Record<f64>]) -> String {
    let mut out = String::new();
    push_row(&mut out, TRAJECTORY_COLUMNS.iter().map(|s| s.to_string()));
    for r in records {
        let mut fields = vec![r.step.to_string(), fmt_real(r.objective), fmt_real(r.grad_inf_norm)];
        fields.extend(metric_fields(r.metrics.as_ref()));
        push_row(&mut out, fields);
    }
    out
}

pub fn write_trajectory(path: &Path, records: &[Record<f64>]) -> Result<()> {
    write_text(path, &trajectory_csv(records))
}

/// Features file: header `label,f0,...,f{d-1}`, one column of `h` per row.
pub fn features_csv(h: &Mat<f64>, labels: &Labels) -> Result<String> {
    let (d, n) = h.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {n} feature columns", labels.len())));
    }
    let mut out = String::new();
    push_row(&mut out, std::iter::once("label".to_string()).chain((0..d).map(|p| format!("f{p}"))));
    for i in 0..n {
        push_row(
            &mut out,
            std::iter::once((labels.get(i) + 1).to_string()).chain((0..d).map(|p| fmt_real(h[(p, i)]))),
        );
    }
    Ok(out)
}

pub fn write_features(path: &Path, h: &Mat<f64>, labels: &Labels) -> Result<()> {
    write_text(path, &features_csv(h, labels)?)
}

/// Classifier file: K rows of `w0,...,w{d-1},b`, no header.
pub fn classifier_csv(w: &Mat<f64>, b: &[f64]) -> Result<String> {
    let (k, d) = w.shape();
    if b.len() != k {
        return Err(Error::DimensionMismatch(format!("{} biases for {k} classifier rows", b.len())));
    }
    let mut out = String::new();
    for (c, &bc) in b.iter().enumerate() {
        push_row(&mut out, (0..d).map(|p| fmt_real(w[(c, p)])).chain(std::iter::once(fmt_real(bc))));
    }
    Ok(out)
}

pub fn write_classifier(path: &Path, w: &Mat<f64>, b: &[f64]) -> Result<()> {
    write_text(path, &classifier_csv(w, b)?)
}

fn parse_err(path: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn parse_reals(path: &Path, line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|e| parse_err(path, line, format!("bad number `{}`: {e}", f.trim())))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value `{}`", f.trim())));
            }
            Ok(v)
        })
        .collect()
}

/// Reads a classifier file into `(W, b)`.
pub fn read_classifier(path: &Path) -> Result<(Mat<f64>, Vec<f64>)> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    let mut biases = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(parse_err(path, line_no, "classifier rows need at least one weight and a bias".into()));
        }
        match width {
            None => width = Some(fields.len()),
            Some(wd) if wd != fields.len() => {
                return Err(parse_err(path, line_no, format!("expected {wd} fields, found {}", fields.len())));
            }
            _ => {}
        }
        let mut vals = parse_reals(path, line_no, &fields)?;
        biases.push(vals.pop().unwrap_or_default());
        rows.push(vals);
    }
    if rows.len() < 2 {
        return Err(parse_err(path, text.lines().count(), format!("need at least 2 classifier rows, found {}", rows.len())));
    }
    Ok((Mat::from_rows(&rows), biases))
}

/// Reads a features file into `(H, labels)`, checking labels against `k`.
pub fn read_features(path: &Path, k: usize) -> Result<(Mat<f64>, Labels)> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (header_idx, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty features file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let d = cols.len().saturating_sub(1);
    let header_ok = cols.first() == Some(&"label") && d > 0 && cols[1..].iter().enumerate().all(|(p, c)| *c == format!("f{p}"));
    if !header_ok {
        return Err(parse_err(path, header_idx + 1, "header must be `label,f0,...,f{d-1}`".into()));
    }
    let mut columns = Vec::new();
    let mut classes = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(parse_err(path, line_no, format!("expected {} fields, found {}", d + 1, fields.len())));
        }
        let label: usize = fields[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("bad label `{}`: {e}", fields[0].trim())))?;
        if label == 0 || label > k {
            return Err(parse_err(path, line_no, format!("label {label} out of range 1..={k}")));
        }
        classes.push(label - 1);
        columns.push(parse_reals(path, line_no, &fields[1..])?);
    }
    if columns.is_empty() {
        return Err(parse_err(path, header_idx + 1, "no samples".into()));
    }
    let h = Mat::from_fn(d, columns.len(), |p, i| columns[i][p]);
    Ok((h, Labels::new(classes, k)?))
}

pub(crate) fn summary_header(variable: &str) -> String {
    let mut out = String::new();
    let mut cols = vec!["run".to_string(), variable.to_string(), "outcome".into(), "steps_taken".into()];
    cols.extend(TRAJECTORY_COLUMNS[1..].iter().map(|s| s.to_string()));
    push_row(&mut out, cols);
    out
}

pub(crate) fn summary_row(out: &mut String, run: usize, value: f64, outcome: &str, steps: usize, last: Option<&Record<f64>>) {
    let mut fields = vec![run.to_string(), fmt_real(value), outcome.to_string(), steps.to_string()];
    match last {
        Some(r) => {
            fields.push(fmt_real(r.objective));
            fields.push(fmt_real(r.grad_inf_norm));
            fields.extend(metric_fields(r.metrics.as_ref()));
        }
        None => fields.extend(std::iter::repeat_n(fmt_real(f64::NAN), 17)),
    }
    push_row(out, fields);
}
