//! Tabular input: CSV ingestion, per-column transforms, feature expansion
//! and reversible standardization.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What to do with rows containing non-finite cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonFinitePolicy {
    #[default]
    Reject,
    DropRow,
}

/// Identifies a column by header name or zero-based index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnSelector {
    Name(String),
    Index(usize),
}

impl From<&str> for ColumnSelector {
    fn from(s: &str) -> Self {
        ColumnSelector::Name(s.to_string())
    }
}

impl From<usize> for ColumnSelector {
    fn from(i: usize) -> Self {
        ColumnSelector::Index(i)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub non_finite: NonFinitePolicy,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            non_finite: NonFinitePolicy::Reject,
        }
    }
}

impl CsvOptions {
    /// The UCI wine-quality files are `;`-separated.
    pub fn wine() -> Self {
        CsvOptions {
            delimiter: b';',
            ..Default::default()
        }
    }
}

/// A numeric table with designated output columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub values: DMatrix<f64>,
    pub output_columns: Vec<usize>,
    /// Rows dropped during ingestion because of non-finite cells.
    pub rejected_rows: usize,
}

impl RawTable {
    pub fn new(
        column_names: Vec<String>,
        values: DMatrix<f64>,
        output_columns: Vec<usize>,
    ) -> Result<Self> {
        if column_names.len() != values.ncols() {
            return Err(Error::dim(format!(
                "{} column names for {} columns",
                column_names.len(),
                values.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate column name {name:?}")));
            }
        }
        if values.nrows() == 0 {
            return Err(Error::invalid("no rows"));
        }
        for &o in &output_columns {
            if o >= values.ncols() {
                return Err(Error::invalid(format!("output column {o} out of range")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("table contains non-finite values"));
        }
        Ok(RawTable {
            column_names,
            values,
            output_columns,
            rejected_rows: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn input_columns(&self) -> Vec<usize> {
        (0..self.values.ncols())
            .filter(|c| !self.output_columns.contains(c))
            .collect()
    }

    pub fn input_names(&self) -> Vec<String> {
        self.input_columns()
            .into_iter()
            .map(|c| self.column_names[c].clone())
            .collect()
    }

    pub fn output_names(&self) -> Vec<String> {
        self.output_columns
            .iter()
            .map(|&c| self.column_names[c].clone())
            .collect()
    }

    /// n×p block of the non-output columns.
    pub fn x_block(&self) -> DMatrix<f64> {
        select_columns(&self.values, &self.input_columns())
    }

    /// n×q block of the output columns.
    pub fn y_block(&self) -> DMatrix<f64> {
        select_columns(&self.values, &self.output_columns)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }
}

pub(crate) fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub(crate) fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Reads a delimited numeric table with a header row.
pub fn load_csv(path: &Path, outputs: &[ColumnSelector], opts: CsvOptions) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let table = parse_csv(file, outputs, opts)?;
    log::info!(
        "loaded {}: {} rows, {} rejected",
        path.display(),
        table.n_rows(),
        table.rejected_rows
    );
    Ok(table)
}

/// Same as [`load_csv`] but from any reader.
pub fn parse_csv<R: Read>(reader: R, outputs: &[ColumnSelector], opts: CsvOptions) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::invalid("no columns"));
    }

    let mut output_columns = Vec::with_capacity(outputs.len());
    for sel in outputs {
        let idx = match sel {
            ColumnSelector::Name(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::invalid(format!("unknown output column {name:?}")))?,
            ColumnSelector::Index(i) if *i < headers.len() => *i,
            ColumnSelector::Index(i) => {
                return Err(Error::invalid(format!("output column index {i} out of range")))
            }
        };
        if output_columns.contains(&idx) {
            return Err(Error::invalid(format!("output column {idx} listed twice")));
        }
        output_columns.push(idx);
    }

    let m = headers.len();
    let mut data = Vec::new();
    let mut rows = 0usize;
    let mut rejected = 0usize;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        if record.len() != m {
            return Err(Error::Parse(format!(
                "row {line}: expected {m} fields, found {}",
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(m);
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Parse(format!(
                    "row {line}, column {:?}: non-numeric cell {cell:?}",
                    headers[col]
                ))
            })?;
            row.push(v);
        }
        if row.iter().any(|v| !v.is_finite()) {
            match opts.non_finite {
                NonFinitePolicy::Reject => {
                    return Err(Error::Parse(format!("row {line}: non-finite value")))
                }
                NonFinitePolicy::DropRow => {
                    rejected += 1;
                    continue;
                }
            }
        }
        data.extend(row);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::invalid("no rows"));
    }
    let values = DMatrix::from_row_slice(rows, m, &data);
    let mut table = RawTable::new(headers, values, output_columns)?;
    table.rejected_rows = rejected;
    Ok(table)
}

/// Per-column monotone transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    None,
    Log,
    Log1p,
    Sqrt,
}

impl Transform {
    pub fn tag(self) -> &'static str {
        match self {
            Transform::None => "none",
            Transform::Log => "log",
            Transform::Log1p => "log1p",
            Transform::Sqrt => "sqrt",
        }
    }

    fn apply(self, v: f64) -> Option<f64> {
        match self {
            Transform::None => Some(v),
            Transform::Log if v > 0.0 => Some(v.ln()),
            Transform::Log1p if v > -1.0 => Some(v.ln_1p()),
            Transform::Sqrt if v >= 0.0 => Some(v.sqrt()),
            _ => None,
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Transform::None),
            "log" => Ok(Transform::Log),
            "log1p" => Ok(Transform::Log1p),
            "sqrt" => Ok(Transform::Sqrt),
            other => Err(Error::invalid(format!("unknown transform {other:?}"))),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Transforms keyed by column name; unlisted columns are left alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub columns: Vec<(String, Transform)>,
}

/// Right-skewed white-wine characteristics that get `log1p` by default.
pub const WINE_LOG1P_COLUMNS: [&str; 5] = [
    "volatile acidity",
    "residual sugar",
    "chlorides",
    "free sulfur dioxide",
    "total sulfur dioxide",
];

impl TransformSpec {
    pub fn new(columns: Vec<(String, Transform)>) -> Self {
        TransformSpec { columns }
    }

    /// Default transforms for the UCI wine-quality inputs.
    pub fn wine_default() -> Self {
        TransformSpec {
            columns: WINE_LOG1P_COLUMNS
                .iter()
                .map(|c| (c.to_string(), Transform::Log1p))
                .collect(),
        }
    }

    /// Parses `name=tag,name=tag`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut columns = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, tag) = part
                .rsplit_once('=')
                .ok_or_else(|| Error::invalid(format!("transform entry {part:?} is not name=tag")))?;
            columns.push((name.trim().to_string(), tag.trim().parse()?));
        }
        Ok(TransformSpec { columns })
    }

    pub fn get(&self, column: &str) -> Transform {
        self.columns
            .iter()
            .find(|(c, _)| c == column)
            .map(|(_, t)| *t)
            .unwrap_or_default()
    }
}

/// Applies `spec` column-wise. Transformed columns are renamed `tag(name)`.
pub fn apply_transforms(table: &RawTable, spec: &TransformSpec) -> Result<RawTable> {
    for (name, _) in &spec.columns {
        if table.column_index(name).is_none() {
            return Err(Error::invalid(format!("transform for unknown column {name:?}")));
        }
    }
    let mut out = table.clone();
    for (j, name) in table.column_names.iter().enumerate() {
        let t = spec.get(name);
        if t == Transform::None {
            continue;
        }
        let mut col = out.values.column_mut(j);
        for (i, v) in col.iter_mut().enumerate() {
            *v = t.apply(*v).ok_or_else(|| {
                Error::invalid(format!("{t} domain violation at row {i} of column {name:?}"))
            })?;
        }
        out.column_names[j] = format!("{t}({name})");
    }
    Ok(out)
}

/// Which blocks the Hoadley-style expansion emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionSpec {
    pub include_linear: bool,
    pub include_quadratics: bool,
    pub include_pairwise_interactions: bool,
}

impl ExpansionSpec {
    pub fn full() -> Self {
        ExpansionSpec {
            include_linear: true,
            include_quadratics: true,
            include_pairwise_interactions: true,
        }
    }

    pub fn linear_only() -> Self {
        ExpansionSpec {
            include_linear: true,
            include_quadratics: false,
            include_pairwise_interactions: false,
        }
    }

    pub fn expanded_width(&self, p: usize) -> usize {
        let mut w = 0;
        if self.include_linear {
            w += p;
        }
        if self.include_quadratics {
            w += p;
        }
        if self.include_pairwise_interactions {
            w += p * p.saturating_sub(1) / 2;
        }
        w
    }

    /// Names of the expanded columns, in output order.
    pub fn expanded_names(&self, names: &[String]) -> Vec<String> {
        let p = names.len();
        let mut out = Vec::with_capacity(self.expanded_width(p));
        if self.include_linear {
            out.extend(names.iter().cloned());
        }
        if self.include_quadratics {
            out.extend(names.iter().map(|n| format!("{n}^2")));
        }
        if self.include_pairwise_interactions {
            for i in 0..p {
                for j in (i + 1)..p {
                    out.push(format!("{}*{}", names[i], names[j]));
                }
            }
        }
        out
    }
}

/// Expands an n×p block into linear, squared and pairwise-product columns
/// (in that order; products ordered by index pairs `i < j`).
pub fn expand_features(x: &DMatrix<f64>, spec: &ExpansionSpec) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if p == 0 {
        return Err(Error::invalid("feature expansion needs at least one column"));
    }
    let width = p
        .checked_mul(p)
        .and_then(|pp| pp.checked_add(2 * p))
        .ok_or_else(|| Error::invalid("feature expansion overflows"))
        .map(|_| spec.expanded_width(p))?;
    if width == 0 {
        return Err(Error::invalid("feature expansion selects no blocks"));
    }
    let mut out = DMatrix::zeros(n, width);
    let mut c = 0;
    if spec.include_linear {
        out.columns_mut(0, p).copy_from(x);
        c += p;
    }
    if spec.include_quadratics {
        for j in 0..p {
            out.set_column(c, &x.column(j).map(|v| v * v));
            c += 1;
        }
    }
    if spec.include_pairwise_interactions {
        for i in 0..p {
            for j in (i + 1)..p {
                out.set_column(c, &x.column(i).component_mul(&x.column(j)));
                c += 1;
            }
        }
    }
    Ok(out)
}

/// Per-column centering and scaling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Sample standard deviations (n−1 denominator); 1 for degenerate columns.
    pub scales: Vec<f64>,
    /// Columns with zero sample variance (or a single row).
    pub degenerate: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let mut means = Vec::with_capacity(x.ncols());
        let mut scales = Vec::with_capacity(x.ncols());
        let mut degenerate = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mean = col.sum() / n as f64;
            let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
            let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
            // relative test so columns with a large offset still count as constant
            let constant = !(sd > 1e-14 * mean.abs().max(f64::MIN_POSITIVE));
            means.push(mean);
            scales.push(if constant { 1.0 } else { sd });
            degenerate.push(constant);
        }
        Standardizer {
            means,
            scales,
            degenerate,
        }
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            if self.degenerate[j] {
                0.0
            } else {
                (x[(i, j)] - self.means[j]) / self.scales[j]
            }
        }))
    }

    pub fn invert(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(z)?;
        Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
            z[(i, j)] * self.scales[j] + self.means[j]
        }))
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.width() {
            return Err(Error::dim(format!(
                "expected {} columns, found {}",
                self.width(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn means_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.means)
    }

    pub fn scales_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.scales)
    }
}

/// A block standardized column-wise, with the parameters needed to undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedMatrix {
    pub values: DMatrix<f64>,
    pub params: Standardizer,
}

impl StandardizedMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

pub fn standardize(x: &DMatrix<f64>) -> StandardizedMatrix {
    let params = Standardizer::fit(x);
    let values = params.apply(x).expect("width matches by construction");
    StandardizedMatrix { values, params }
}

pub fn destandardize(s: &StandardizedMatrix) -> DMatrix<f64> {
    s.params
        .invert(&s.values)
        .expect("width matches by construction")
}
