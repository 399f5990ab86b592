//! CSV and JSON persistence for fields, series and manifests.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{Field, GridError, GridSpec};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, source: csv::Error) -> IoError {
    IoError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Writes named columns of equal length. Values are printed with full
/// round-trip precision.
pub fn write_columns(path: &Path, names: &[&str], cols: &[&[f64]]) -> Result<(), IoError> {
    let rows = cols.first().map_or(0, |c| c.len());
    if names.len() != cols.len() || cols.iter().any(|c| c.len() != rows) {
        return Err(IoError::Format {
            path: path.display().to_string(),
            msg: "column names and lengths disagree".into(),
        });
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(names).map_err(|e| csv_err(path, e))?;
    let mut rec = Vec::with_capacity(cols.len());
    for i in 0..rows {
        rec.clear();
        rec.extend(cols.iter().map(|c| format!("{:?}", c[i])));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

/// Reads a numeric CSV with a header row into `(names, columns)`.
pub fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let names: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for (c, v) in cols.iter_mut().zip(rec.iter()) {
            let x = v.trim().parse::<f64>().map_err(|e| IoError::Format {
                path: path.display().to_string(),
                msg: format!("bad number {v:?}: {e}"),
            })?;
            c.push(x);
        }
    }
    Ok((names, cols))
}

/// Column `name` from a table read by [`read_columns`].
pub fn column<'a>(
    table: &'a (Vec<String>, Vec<Vec<f64>>),
    name: &str,
) -> Option<&'a [f64]> {
    table
        .0
        .iter()
        .position(|n| n == name)
        .map(|i| table.1[i].as_slice())
}

pub fn write_field(path: &Path, label: &str, f: &Field) -> Result<(), IoError> {
    let x = f.grid().points();
    write_columns(path, &["x", label], &[&x, f.values()])
}

/// Reads an `(x, value)` CSV written by [`write_field`] and checks it against
/// `grid`.
pub fn read_field(path: &Path, grid: GridSpec) -> Result<Field, IoError> {
    let table = read_columns(path)?;
    if table.1.len() < 2 {
        return Err(IoError::Format {
            path: path.display().to_string(),
            msg: "expected two columns".into(),
        });
    }
    let x = &table.1[0];
    if x.len() != grid.n_points
        || x.iter()
            .enumerate()
            .any(|(k, &v)| (v - grid.x(k)).abs() > 1e-9 * grid.length)
    {
        return Err(IoError::Format {
            path: path.display().to_string(),
            msg: "sample positions do not match the grid".into(),
        });
    }
    Ok(Field::new(grid, table.1[1].clone())?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let f = File::create(path).map_err(|e| file_err(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let f = File::open(path).map_err(|e| file_err(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn create_dir(path: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(path).map_err(|e| file_err(path, e))
}
