//! Dataset readers and CSV writers.
//!
//! Files are row-major (one sample per line); in memory samples are columns.
//!
//! * CSV: comma-separated floats, optionally with an integer label column.
//! * Sparse: `label idx:val idx:val ...` with 1-based, unique indices.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::corruption::ConvergenceRow;
use crate::denoise::DataMatrix;
use crate::error::{Result, SlideError};
use crate::widths::TraceRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Sparse,
}

impl std::str::FromStr for Format {
    type Err = SlideError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "sparse" => Ok(Format::Sparse),
            other => Err(SlideError::InvalidParameter(format!("unknown format {other:?} (csv|sparse)"))),
        }
    }
}

/// Where the label sits in a CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    None,
    Last,
    /// Zero-based column index.
    Index(usize),
    /// Last column if rows have `dim + 1` fields, none if they have `dim`.
    /// Without a known dimension, no labels.
    Auto,
}

impl std::str::FromStr for LabelColumn {
    type Err = SlideError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LabelColumn::None),
            "last" => Ok(LabelColumn::Last),
            "auto" => Ok(LabelColumn::Auto),
            other => other
                .parse::<usize>()
                .map(LabelColumn::Index)
                .map_err(|_| SlideError::InvalidParameter(format!("bad label column {other:?} (none|last|auto|<index>)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub labels: LabelColumn,
    /// Expected feature count; required to disambiguate `Auto` and to size
    /// sparse data whose highest index is below `d`.
    pub dim: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { labels: LabelColumn::None, dim: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: DataMatrix,
    pub labels: Option<Vec<i64>>,
}

impl LabeledDataset {
    pub fn n(&self) -> usize {
        self.features.n()
    }

    pub fn d(&self) -> usize {
        self.features.d()
    }

    pub fn require_labels(&self) -> Result<&[i64]> {
        self.labels
            .as_deref()
            .ok_or_else(|| SlideError::UnsupportedLabels("dataset has no label column".into()))
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format, opts: LoadOptions) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, format, opts)
}

pub fn parse_dataset(text: &str, format: Format, opts: LoadOptions) -> Result<LabeledDataset> {
    match format {
        Format::Csv => parse_csv(text, opts),
        Format::Sparse => parse_sparse(text, opts),
    }
}

fn parse_label(tok: &str, line: usize) -> Result<i64> {
    let tok = tok.trim();
    if let Ok(v) = tok.parse::<i64>() {
        return Ok(v);
    }
    match tok.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(SlideError::Parse { line, msg: format!("label {tok:?} is not an integer") }),
    }
}

fn parse_value(tok: &str, line: usize) -> Result<f64> {
    let tok = tok.trim();
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(SlideError::Parse { line, msg: format!("non-finite value {tok:?}") }),
        Err(_) => Err(SlideError::Parse { line, msg: format!("non-numeric token {tok:?}") }),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_csv(text: &str, opts: LoadOptions) -> Result<LabeledDataset> {
    let mut width = None;
    let mut label_col: Option<usize> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (line, l) in content_lines(text) {
        let fields: Vec<&str> = l.split(',').collect();
        match width {
            None => {
                width = Some(fields.len());
                label_col = match opts.labels {
                    LabelColumn::None => None,
                    LabelColumn::Last => Some(fields.len() - 1),
                    LabelColumn::Index(i) if i < fields.len() => Some(i),
                    LabelColumn::Index(i) => {
                        return Err(SlideError::Parse { line, msg: format!("label column {i} out of range") })
                    }
                    LabelColumn::Auto => match opts.dim {
                        Some(d) if fields.len() == d + 1 => Some(d),
                        Some(d) if fields.len() == d => None,
                        Some(d) => {
                            return Err(SlideError::Parse {
                                line,
                                msg: format!("{} fields, expected {d} features with an optional label", fields.len()),
                            })
                        }
                        None => None,
                    },
                };
            }
            Some(w) if w != fields.len() => {
                return Err(SlideError::Parse { line, msg: format!("{} fields, previous rows have {w}", fields.len()) })
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(fields.len());
        for (k, f) in fields.iter().enumerate() {
            if Some(k) == label_col {
                labels.push(parse_label(f, line)?);
            } else {
                row.push(parse_value(f, line)?);
            }
        }
        rows.push(row);
    }
    if let (Some(d), None) = (opts.dim, label_col) {
        if width.is_some_and(|w| w != d) {
            return Err(SlideError::Shape(format!("file has {} features, expected {d}", width.unwrap_or(0))));
        }
    }
    let features = DataMatrix::from_sample_rows(&rows)?;
    if let Some(d) = opts.dim {
        if features.d() != d {
            return Err(SlideError::Shape(format!("file has {} features, expected {d}", features.d())));
        }
    }
    Ok(LabeledDataset { features, labels: label_col.map(|_| labels) })
}

fn parse_sparse(text: &str, opts: LoadOptions) -> Result<LabeledDataset> {
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0;
    for (line, l) in content_lines(text) {
        let mut toks = l.split_whitespace();
        let label = parse_label(toks.next().expect("non-empty line"), line)?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| SlideError::Parse { line, msg: format!("expected idx:val, got {tok:?}") })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| SlideError::Parse { line, msg: format!("bad index {idx:?}") })?;
            if idx == 0 {
                return Err(SlideError::Parse { line, msg: "indices are 1-based".into() });
            }
            if row.iter().any(|&(i, _)| i == idx - 1) {
                return Err(SlideError::Parse { line, msg: format!("duplicate index {idx}") });
            }
            if let Some(d) = opts.dim {
                if idx > d {
                    return Err(SlideError::Parse { line, msg: format!("index {idx} exceeds dimension {d}") });
                }
            }
            max_index = max_index.max(idx);
            row.push((idx - 1, parse_value(val, line)?));
        }
        labels.push(label);
        entries.push(row);
    }
    if entries.is_empty() {
        return Err(SlideError::EmptyDataset("no samples".into()));
    }
    let d = opts.dim.unwrap_or(max_index);
    let mut m = DMatrix::zeros(d, entries.len());
    for (c, row) in entries.iter().enumerate() {
        for &(r, v) in row {
            m[(r, c)] = v;
        }
    }
    let labels = match opts.labels {
        LabelColumn::None => None,
        _ => Some(labels),
    };
    Ok(LabeledDataset { features: DataMatrix::new(m)?, labels })
}

/// Renders `m` (features x samples) as CSV, one sample per line. Values use
/// the shortest representation that parses back to the same bits.
pub fn matrix_to_csv(m: &DMatrix<f64>, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for c in 0..m.ncols() {
        let line: Vec<String> = m.column(c).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| SlideError::Io(e.error))?;
    Ok(())
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("m,seed,frobenius_error\n");
    for r in rows {
        out.push_str(&format!("{},{},{:?}\n", r.m, r.seed, r.frobenius_error));
    }
    out
}

pub fn width_trace_csv(trace: &[TraceRow]) -> String {
    let n = trace.first().map_or(0, |r| r.sigmas.len());
    let mut out = String::from("iteration,criterion");
    for t in 0..n {
        out.push_str(&format!(",sigma_{t}"));
    }
    out.push('\n');
    for r in trace {
        out.push_str(&format!("{},{:?}", r.iteration, r.criterion));
        for s in &r.sigmas {
            out.push_str(&format!(",{s:?}"));
        }
        out.push('\n');
    }
    out
}
