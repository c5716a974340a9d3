//! CSV ingestion.

use std::path::Path;

use crate::data::{Covariates, Dataset};
use crate::error::{ConformalError, Result};

/// Which column holds the response.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ResponseColumn {
    #[default]
    Last,
    Named(String),
    Index(usize),
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub response: ResponseColumn,
    pub delimiter: u8,
    /// Without a header, columns are named `x1..xd` and `y`.
    pub has_header: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            response: ResponseColumn::Last,
            delimiter: b',',
            has_header: true,
        }
    }
}

/// Parsed table: column names and row-major numeric cells.
struct Table {
    names: Vec<String>,
    cells: Vec<f64>,
    width: usize,
}

fn read_table(path: &Path, delimiter: u8, has_header: bool) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut names: Vec<String> = if has_header {
        reader.headers()?.iter().map(str::to_owned).collect()
    } else {
        Vec::new()
    };
    let mut cells = Vec::new();
    let mut width = names.len();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if width == 0 {
            width = record.len();
        }
        if names.is_empty() {
            names = (1..=width).map(|j| format!("column{j}")).collect();
        }
        if record.len() != width {
            return Err(ConformalError::Ingest {
                row,
                column: names.get(record.len().min(width)).cloned().unwrap_or_default(),
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (field, name) in record.iter().zip(&names) {
            if field.is_empty() {
                return Err(ConformalError::Ingest {
                    row,
                    column: name.clone(),
                    message: "missing value".into(),
                });
            }
            let v: f64 = field.parse().map_err(|_| ConformalError::Ingest {
                row,
                column: name.clone(),
                message: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(ConformalError::Ingest {
                    row,
                    column: name.clone(),
                    message: format!("'{field}' is not a finite value"),
                });
            }
            cells.push(v);
        }
    }
    if width == 0 || cells.is_empty() {
        return Err(ConformalError::EmptyData);
    }
    Ok(Table {
        names,
        cells,
        width,
    })
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    ingest_csv_with(path, &IngestOptions::default())
}

pub fn ingest_csv_with(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Dataset> {
    let mut table = read_table(path.as_ref(), opts.delimiter, opts.has_header)?;
    if table.width < 2 {
        return Err(ConformalError::InvalidInput(
            "need at least one covariate column and a response column".into(),
        ));
    }
    if !opts.has_header {
        table.names = (1..table.width)
            .map(|j| format!("x{j}"))
            .chain(std::iter::once("y".to_string()))
            .collect();
    }
    let response = match &opts.response {
        ResponseColumn::Last => table.width - 1,
        ResponseColumn::Index(j) if *j < table.width => *j,
        ResponseColumn::Index(j) => {
            return Err(ConformalError::InvalidInput(format!(
                "response column {j} out of range for {} columns",
                table.width
            )))
        }
        ResponseColumn::Named(name) => table
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ConformalError::InvalidInput(format!("no column named '{name}'")))?,
    };
    let d = table.width - 1;
    let mut x = Vec::with_capacity(table.cells.len() - table.cells.len() / table.width);
    let mut y = Vec::with_capacity(table.cells.len() / table.width);
    for row in table.cells.chunks_exact(table.width) {
        for (j, v) in row.iter().enumerate() {
            if j == response {
                y.push(*v);
            } else {
                x.push(*v);
            }
        }
    }
    let names = table
        .names
        .into_iter()
        .enumerate()
        .filter(|(j, _)| *j != response)
        .map(|(_, n)| n)
        .collect();
    Dataset::with_names(Covariates::new(x, d)?, y, names)
}

/// Reads a covariate-only table (every column is a covariate).
pub fn ingest_covariates(path: impl AsRef<Path>) -> Result<(Covariates, Vec<String>)> {
    let table = read_table(path.as_ref(), b',', true)?;
    Ok((Covariates::new(table.cells, table.width)?, table.names))
}

/// Writes `dataset` with a header, covariates first and the response last.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = dataset.names().iter().map(String::as_str).collect();
    header.push("y");
    w.write_record(&header)?;
    for (x, y) in dataset.iter() {
        let fields: Vec<String> = x
            .iter()
            .chain(std::iter::once(&y))
            .map(|v| v.to_string())
            .collect();
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_rows_round_trip() {
        let f = file("a,b,target\n0.1,-2.5,3.75\n1e-3,4,0.3333333333333333\n");
        let ds = ingest_csv(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.x().row(0), &[0.1, -2.5]);
        assert_eq!(ds.y(), &[3.75, 0.3333333333333333]);

        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path()).unwrap();
        let back = ingest_csv(out.path()).unwrap();
        assert_eq!(back.x(), ds.x());
        assert_eq!(back.y(), ds.y());
    }

    #[test]
    fn missing_cell_reports_coordinates() {
        let f = file("a,b,y\n1,2,3\n4,,6\n");
        match ingest_csv(f.path()) {
            Err(ConformalError::Ingest { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_ragged_rows() {
        let f = file("a,y\n1,2\nx,3\n");
        assert!(matches!(
            ingest_csv(f.path()),
            Err(ConformalError::Ingest { row: 2, .. })
        ));
        let f = file("a,b,y\n1,2,3\n4,5\n");
        assert!(matches!(
            ingest_csv(f.path()),
            Err(ConformalError::Ingest { row: 2, .. })
        ));
        let f = file("a,y\n1,NaN\n");
        assert!(ingest_csv(f.path()).is_err());
    }

    #[test]
    fn named_response_and_headerless_tabs() {
        let f = file("y,a,b\n1,2,3\n");
        let opts = IngestOptions {
            response: ResponseColumn::Named("y".into()),
            ..Default::default()
        };
        let ds = ingest_csv_with(f.path(), &opts).unwrap();
        assert_eq!(ds.y(), &[1.0]);
        assert_eq!(ds.x().row(0), &[2.0, 3.0]);

        let f = file("800\t0\t0.3048\t71.3\t0.00266337\t126.201\n1000\t0\t0.3048\t71.3\t0.00266337\t125.201\n");
        let opts = IngestOptions {
            delimiter: b'\t',
            has_header: false,
            ..Default::default()
        };
        let ds = ingest_csv_with(f.path(), &opts).unwrap();
        assert_eq!((ds.len(), ds.dim()), (2, 5));
        assert_eq!(ds.y(), &[126.201, 125.201]);
    }
}
