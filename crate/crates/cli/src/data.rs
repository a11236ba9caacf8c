//! CSV schemas for training data, queries and predictions.
//!
//! A table has covariate columns `x1..xp` followed by response columns:
//! `y1..yd` for vectors, `q1..qm` for quantile functions and `c11..crr` for
//! correlation matrices (row-major; `c{i}_{j}` when `r >= 10`). Quantile
//! tables carry the grid levels in the first row after the header, with the
//! covariate cells left empty. Lines starting with `#` are comments.

use std::io::{Read, Write};
use std::path::Path;

use clap::ValueEnum;
use frechet_svt::{CorrelationMatrix, Matrix, MetricPoint, MetricSpaceKind, QuantileFunction, QuantileGrid, Vector};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Euclidean,
    L1,
    Linf,
    Wasserstein,
    Correlation,
}

impl KindArg {
    fn prefix(self) -> char {
        match self {
            KindArg::Euclidean | KindArg::L1 | KindArg::Linf => 'y',
            KindArg::Wasserstein => 'q',
            KindArg::Correlation => 'c',
        }
    }

    fn name(self) -> &'static str {
        match self {
            KindArg::Euclidean => "euclidean",
            KindArg::L1 => "l1",
            KindArg::Linf => "linf",
            KindArg::Wasserstein => "wasserstein",
            KindArg::Correlation => "correlation",
        }
    }
}

/// Covariates with their responses.
#[derive(Debug, Clone)]
pub struct Table {
    pub covariates: Matrix,
    pub responses: Vec<MetricPoint>,
    pub kind: MetricSpaceKind,
}

/// Shortest text that parses back to the same `f64`; infinities are `inf`/`-inf`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

fn parse_float(cell: &str, line: u64, column: &str) -> CliResult<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| CliError::Input(format!("line {line}, column {column}: cannot parse {cell:?} as a number")))?;
    if !v.is_finite() {
        return Err(CliError::Input(format!("line {line}, column {column}: value {cell} is not finite")));
    }
    Ok(v)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn csv_error(source: &str, e: csv::Error) -> CliError {
    CliError::Input(format!("{source}: {e}"))
}

fn open(path: &Path) -> CliResult<std::fs::File> {
    std::fs::File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Number of leading `x1..xp` columns; the remaining names must follow.
fn covariate_count(header: &csv::StringRecord, source: &str) -> CliResult<usize> {
    let p = header.iter().take_while(|h| h.starts_with('x')).count();
    for (j, h) in header.iter().take(p).enumerate() {
        if h != format!("x{}", j + 1) {
            return Err(CliError::Input(format!(
                "{source}: column {} is {h:?}, expected \"x{}\"",
                j + 1,
                j + 1
            )));
        }
    }
    Ok(p)
}

fn correlation_names(r: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(r * r);
    for i in 1..=r {
        for j in 1..=r {
            names.push(if r < 10 { format!("c{i}{j}") } else { format!("c{i}_{j}") });
        }
    }
    names
}

fn response_names(kind: KindArg, count: usize) -> Option<Vec<String>> {
    match kind {
        KindArg::Correlation => {
            let r = (count as f64).sqrt().round() as usize;
            (r * r == count).then(|| correlation_names(r))
        }
        _ => Some((1..=count).map(|k| format!("{}{k}", kind.prefix())).collect()),
    }
}

/// Header names for `points` of `kind`.
pub fn response_header(kind: &MetricSpaceKind, width: usize) -> Vec<String> {
    match kind {
        MetricSpaceKind::Euclidean | MetricSpaceKind::L1Vector | MetricSpaceKind::LinfVector => {
            (1..=width).map(|k| format!("y{k}")).collect()
        }
        MetricSpaceKind::Wasserstein(_) => (1..=width).map(|k| format!("q{k}")).collect(),
        MetricSpaceKind::Correlation(r) => correlation_names(*r),
    }
}

/// Reads a table of `kind` from `input`; `source` names the input in errors.
pub fn parse_table<R: Read>(input: R, kind: KindArg, source: &str) -> CliResult<Table> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    let p = covariate_count(&header, source)?;
    let names: Vec<&str> = header.iter().skip(p).collect();
    if names.is_empty() {
        return Err(CliError::Input(format!("{source}: no response columns")));
    }
    if let Some(other) = names.iter().find(|h| !h.starts_with(kind.prefix())) {
        return Err(CliError::Input(format!(
            "{source}: column {other:?} does not match --kind {}, whose responses are named {}1, {}2, ...",
            kind.name(),
            kind.prefix(),
            kind.prefix()
        )));
    }
    let expected = response_names(kind, names.len()).ok_or_else(|| {
        CliError::Input(format!(
            "{source}: {} correlation columns is not a perfect square",
            names.len()
        ))
    })?;
    if let Some((got, want)) = names.iter().zip(&expected).find(|(g, w)| *g != w) {
        return Err(CliError::Input(format!("{source}: column {got:?}, expected {want:?}")));
    }
    let width = names.len();

    let mut records = rdr.records();
    let metric = match kind {
        KindArg::Euclidean => MetricSpaceKind::Euclidean,
        KindArg::L1 => MetricSpaceKind::L1Vector,
        KindArg::Linf => MetricSpaceKind::LinfVector,
        KindArg::Correlation => MetricSpaceKind::Correlation((width as f64).sqrt().round() as usize),
        KindArg::Wasserstein => {
            let record = records
                .next()
                .ok_or_else(|| CliError::Input(format!("{source}: missing the grid-levels row")))?
                .map_err(|e| csv_error(source, e))?;
            let line = record.position().map_or(0, |pos| pos.line());
            if record.iter().take(p).any(|c| !c.is_empty()) {
                return Err(CliError::Input(format!(
                    "{source}: line {line}: the grid-levels row must leave the covariate cells empty"
                )));
            }
            let levels = record
                .iter()
                .skip(p)
                .zip(&expected)
                .map(|(c, name)| parse_float(c, line, name))
                .collect::<CliResult<Vec<f64>>>()?;
            let grid = QuantileGrid::new(levels).map_err(|e| CliError::Input(format!("{source}: line {line}: {e}")))?;
            MetricSpaceKind::Wasserstein(grid)
        }
    };

    let mut x = Vec::new();
    let mut responses = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(source, e))?;
        let line = record.position().map_or(0, |pos| pos.line());
        for (j, cell) in record.iter().take(p).enumerate() {
            x.push(parse_float(cell, line, &format!("x{}", j + 1))?);
        }
        let values = record
            .iter()
            .skip(p)
            .zip(&expected)
            .map(|(c, name)| parse_float(c, line, name))
            .collect::<CliResult<Vec<f64>>>()?;
        let point = match &metric {
            MetricSpaceKind::Wasserstein(grid) => QuantileFunction::new(values, grid).map(MetricPoint::Quantile),
            MetricSpaceKind::Correlation(r) => {
                CorrelationMatrix::new(Matrix::from_row_slice(*r, *r, &values)).map(MetricPoint::Correlation)
            }
            _ => Ok(MetricPoint::Euclidean(Vector::from_vec(values))),
        }
        .map_err(|e| CliError::Input(format!("{source}: line {line}: {e}")))?;
        responses.push(point);
    }
    let n = responses.len();
    Ok(Table {
        covariates: Matrix::from_row_slice(n, p, &x),
        responses,
        kind: metric,
    })
}

pub fn read_table(path: &Path, kind: KindArg) -> CliResult<Table> {
    parse_table(open(path)?, kind, &path.display().to_string())
}

/// Reads a covariate-only table with header `x1..xp`.
pub fn parse_covariates<R: Read>(input: R, source: &str) -> CliResult<Matrix> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    let p = covariate_count(&header, source)?;
    if p == 0 || p != header.len() {
        return Err(CliError::Input(format!(
            "{source}: expected only covariate columns x1..xp, got {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut x = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(source, e))?;
        let line = record.position().map_or(0, |pos| pos.line());
        for (j, cell) in record.iter().enumerate() {
            x.push(parse_float(cell, line, &format!("x{}", j + 1))?);
        }
    }
    Ok(Matrix::from_row_slice(x.len() / p, p, &x))
}

pub fn read_covariates(path: &Path) -> CliResult<Matrix> {
    parse_covariates(open(path)?, &path.display().to_string())
}

/// Writes a table in the schema read by [`parse_table`], after `comments`
/// (each written as a `# ` line).
pub fn write_table<W: Write>(
    mut out: W,
    comments: &[String],
    covariates: &Matrix,
    responses: &[MetricPoint],
    kind: &MetricSpaceKind,
) -> std::io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let p = covariates.ncols();
    let width = responses.first().map_or(0, MetricPoint::coordinate_len);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.extend(response_header(kind, width));
    w.write_record(&header)?;
    if let MetricSpaceKind::Wasserstein(grid) = kind {
        let row = std::iter::repeat_n(String::new(), p).chain(grid.levels().iter().map(|&t| format_float(t)));
        w.write_record(row)?;
    }
    for (i, point) in responses.iter().enumerate() {
        let row: Vec<String> = covariates
            .row(i)
            .iter()
            .map(|&v| format_float(v))
            .chain(point.coordinates().into_iter().map(format_float))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()
}
