//! Data ingestion: daily returns tables and realized-covariance series.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::matrix::SymMatrix;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: duplicate date {date}")]
    DuplicateDate { row: usize, date: String },
    #[error("row {row}: dates must be strictly increasing (got {date})")]
    NonIncreasingDate { row: usize, date: String },
    #[error("row {row}: invalid ISO date '{date}' (expected YYYY-MM-DD)")]
    BadDate { row: usize, date: String },
    #[error("row {row}, column {column}: missing or non-numeric value")]
    BadCell { row: usize, column: String },
    #[error("row {row}: expected {expected} fields, got {got}")]
    RaggedRow { row: usize, expected: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("missing realized covariance for dates: {0}")]
    MissingDates(String),
    #[error("{0}")]
    Format(String),
}

/// Ingested daily returns, de-meaned with full-sample means unless disabled.
#[derive(Debug, Clone)]
pub struct ReturnsTable {
    pub dates: Vec<String>,
    pub asset_names: Vec<String>,
    pub returns: DMatrix<f64>,
    /// Column means removed during de-meaning (zeros when disabled).
    pub column_means: Vec<f64>,
}

fn valid_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(|c| c.is_ascii_digit());
    if !digits(0..4) || !digits(5..7) || !digits(8..10) {
        return false;
    }
    let month: u32 = s[5..7].parse().unwrap_or(0);
    let day: u32 = s[8..10].parse().unwrap_or(0);
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

/// Reads a `date,asset_1,...,asset_n` CSV with strictly increasing ISO
/// dates.
pub fn ingest_returns(path: &Path, demean: bool) -> Result<ReturnsTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || headers.get(0) != Some("date") {
        return Err(IngestError::Format(
            "header must be `date,asset_1,...,asset_n`".into(),
        ));
    }
    let asset_names: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    let n = asset_names.len();

    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row_no = i + 2; // header is row 1
        let record = record?;
        if record.len() != n + 1 {
            return Err(IngestError::RaggedRow { row: row_no, expected: n + 1, got: record.len() });
        }
        let date = record.get(0).unwrap_or_default().trim().to_string();
        if !valid_iso_date(&date) {
            return Err(IngestError::BadDate { row: row_no, date });
        }
        if let Some(last) = dates.last() {
            let last: &String = last;
            if date == *last {
                return Err(IngestError::DuplicateDate { row: row_no, date });
            }
            if date < *last {
                return Err(IngestError::NonIncreasingDate { row: row_no, date });
            }
        }
        let mut row = Vec::with_capacity(n);
        for (k, cell) in record.iter().skip(1).enumerate() {
            let parsed: Option<f64> = cell.trim().parse().ok();
            match parsed {
                Some(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(IngestError::BadCell {
                        row: row_no,
                        column: asset_names[k].clone(),
                    })
                }
            }
        }
        dates.push(date);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IngestError::Format("no data rows".into()));
    }

    let t_len = rows.len();
    let mut returns = DMatrix::zeros(t_len, n);
    for (t, row) in rows.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            returns[(t, k)] = v;
        }
    }
    let mut column_means = vec![0.0; n];
    if demean {
        for k in 0..n {
            let mean = returns.column(k).sum() / t_len as f64;
            column_means[k] = mean;
            for t in 0..t_len {
                returns[(t, k)] -= mean;
            }
        }
    }
    Ok(ReturnsTable { dates, asset_names, returns, column_means })
}

/// Realized covariance matrices keyed by ISO date.
#[derive(Debug, Clone)]
pub struct RealizedCovSet {
    pub by_date: BTreeMap<String, SymMatrix>,
    /// Dates whose matrix needed symmetrization beyond 1e-8.
    pub warnings: Vec<String>,
}

const REALIZED_ASYMMETRY_WARN: f64 = 1e-8;

fn finish_matrix(
    date: &str,
    mat: DMatrix<f64>,
    warnings: &mut Vec<String>,
) -> Result<SymMatrix, IngestError> {
    let mut max_asym = 0.0f64;
    for j in 0..mat.ncols() {
        for i in (j + 1)..mat.nrows() {
            max_asym = max_asym.max((mat[(i, j)] - mat[(j, i)]).abs());
        }
    }
    if max_asym > REALIZED_ASYMMETRY_WARN {
        warnings.push(format!("{date}: asymmetry {max_asym:.3e} symmetrized"));
    }
    Ok(SymMatrix::symmetrized(mat))
}

/// Reads realized covariances from either a directory of per-date
/// `YYYY-MM-DD.csv` matrices or a single long-format file
/// `date,i,j,value` with 1-based indices (lower triangle sufficient).
pub fn ingest_realized_cov(path: &Path) -> Result<RealizedCovSet, IngestError> {
    if path.is_dir() {
        ingest_realized_dir(path)
    } else {
        ingest_realized_long(path)
    }
}

fn ingest_realized_dir(dir: &Path) -> Result<RealizedCovSet, IngestError> {
    let mut by_date = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "csv").unwrap_or(false))
        .collect();
    entries.sort();
    for file in entries {
        let stem = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if !valid_iso_date(&stem) {
            return Err(IngestError::Format(format!(
                "file name '{}' is not a YYYY-MM-DD date",
                file.display()
            )));
        }
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(&file)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(record.len());
            for cell in record.iter() {
                let v: f64 = cell.trim().parse().map_err(|_| IngestError::BadCell {
                    row: i + 1,
                    column: stem.clone(),
                })?;
                row.push(v);
            }
            rows.push(row);
        }
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(IngestError::Dimension(format!("{stem}: matrix is not square")));
        }
        let mat = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let sym = finish_matrix(&stem, mat, &mut warnings)?;
        by_date.insert(stem, sym);
    }
    Ok(RealizedCovSet { by_date, warnings })
}

fn ingest_realized_long(path: &Path) -> Result<RealizedCovSet, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected = ["date", "i", "j", "value"];
    if headers.iter().take(4).collect::<Vec<_>>() != expected {
        return Err(IngestError::Format("long format needs header `date,i,j,value`".into()));
    }
    // collect entries per date
    let mut raw: BTreeMap<String, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let row_no = idx + 2;
        let record = record?;
        let date = record.get(0).unwrap_or_default().to_string();
        if !valid_iso_date(&date) {
            return Err(IngestError::BadDate { row: row_no, date });
        }
        let parse_idx = |k: usize, name: &str| -> Result<usize, IngestError> {
            record
                .get(k)
                .and_then(|c| c.trim().parse::<usize>().ok())
                .filter(|&v| v >= 1)
                .ok_or_else(|| IngestError::BadCell { row: row_no, column: name.into() })
        };
        let i = parse_idx(1, "i")?;
        let j = parse_idx(2, "j")?;
        let value: f64 = record
            .get(3)
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| IngestError::BadCell { row: row_no, column: "value".into() })?;
        raw.entry(date).or_default().push((i - 1, j - 1, value));
    }

    let mut by_date = BTreeMap::new();
    let mut warnings = Vec::new();
    for (date, entries) in raw {
        let n = entries.iter().map(|&(i, j, _)| i.max(j)).max().unwrap_or(0) + 1;
        let mut mat = DMatrix::from_element(n, n, f64::NAN);
        for &(i, j, v) in &entries {
            mat[(i, j)] = v;
            if mat[(j, i)].is_nan() {
                mat[(j, i)] = v;
            }
        }
        if mat.iter().any(|x| x.is_nan()) {
            return Err(IngestError::Dimension(format!(
                "{date}: entries do not cover a full {n}x{n} matrix"
            )));
        }
        let sym = finish_matrix(&date, mat, &mut warnings)?;
        by_date.insert(date, sym);
    }
    Ok(RealizedCovSet { by_date, warnings })
}
