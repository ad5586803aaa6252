//! Scenario and result files.
//!
//! Inputs are tidy CSV with a fixed header. Every float is written with
//! Rust's shortest round-trip formatting, so saving and loading is lossless.

pub mod export;
pub mod scenario_file;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use hdevcs_core::model::{ModelError, TimeGrid};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}: expected header `{expected}`, found `{found}`")]
    Header {
        file: String,
        expected: String,
        found: String,
    },
    #[error("{file}:{line}: {reason}")]
    Row {
        file: String,
        line: u64,
        reason: String,
    },
    #[error("{file}: missing steps for {what}: {steps:?}")]
    Gap {
        file: String,
        what: String,
        steps: Vec<usize>,
    },
    #[error("{file}: {reason}")]
    Content { file: String, reason: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub(crate) fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Rows of a headed CSV file, each with its 1-based line number.
pub(crate) struct Rows {
    pub file: String,
    pub rows: Vec<(u64, csv::StringRecord)>,
}

impl Rows {
    pub fn read<R: Read>(reader: R, file: &str, header: &[&str]) -> Result<Self, IoError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let found = rdr.headers()?.clone();
        if found.iter().ne(header.iter().copied()) {
            return Err(IoError::Header {
                file: file.to_string(),
                expected: header.join(","),
                found: found.iter().collect::<Vec<_>>().join(","),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| IoError::Row {
                file: file.to_string(),
                line: e.position().map_or(0, |p| p.line()),
                reason: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != header.len() {
                return Err(IoError::Row {
                    file: file.to_string(),
                    line,
                    reason: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            rows.push((line, rec));
        }
        Ok(Rows {
            file: file.to_string(),
            rows,
        })
    }

    pub fn parse<T: std::str::FromStr>(&self, line: u64, rec: &csv::StringRecord, col: usize, name: &str) -> Result<T, IoError> {
        rec[col].parse().map_err(|_| IoError::Row {
            file: self.file.clone(),
            line,
            reason: format!("invalid {name} `{}`", &rec[col]),
        })
    }

    pub fn float(&self, line: u64, rec: &csv::StringRecord, col: usize, name: &str) -> Result<f64, IoError> {
        let v: f64 = self.parse(line, rec, col, name)?;
        if !v.is_finite() {
            return Err(IoError::Row {
                file: self.file.clone(),
                line,
                reason: format!("{name} must be finite"),
            });
        }
        Ok(v)
    }
}

/// Collects keyed per-step values and checks that every key covers the grid.
pub(crate) struct SeriesTable<const K: usize> {
    file: String,
    t0: usize,
    n: usize,
    data: BTreeMap<u32, Vec<Option<[f64; K]>>>,
}

impl<const K: usize> SeriesTable<K> {
    pub fn new(file: &str, grid: &TimeGrid) -> Self {
        SeriesTable {
            file: file.to_string(),
            t0: grid.t0,
            n: grid.horizon,
            data: BTreeMap::new(),
        }
    }

    /// Record a value. Steps outside the grid are ignored so that longer
    /// files can be sliced.
    pub fn insert(&mut self, line: u64, key: u32, step: usize, value: [f64; K]) -> Result<(), IoError> {
        if step < self.t0 || step >= self.t0 + self.n {
            return Ok(());
        }
        let slot = &mut self.data.entry(key).or_insert_with(|| vec![None; self.n])[step - self.t0];
        if slot.is_some() {
            return Err(IoError::Row {
                file: self.file.clone(),
                line,
                reason: format!("duplicate step {step}"),
            });
        }
        *slot = Some(value);
        Ok(())
    }

    pub fn finish(self, what: &str) -> Result<BTreeMap<u32, Vec<[f64; K]>>, IoError> {
        let mut out = BTreeMap::new();
        for (key, series) in self.data {
            let gaps: Vec<usize> = series
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_none())
                .map(|(t, _)| t + self.t0)
                .collect();
            if !gaps.is_empty() {
                return Err(IoError::Gap {
                    file: self.file,
                    what: format!("{what} {key}"),
                    steps: gaps,
                });
            }
            out.insert(key, series.into_iter().map(|v| v.expect("gaps checked")).collect());
        }
        Ok(out)
    }
}

fn read_keyed<R: Read>(
    reader: R,
    name: &str,
    header: &[&str; 3],
    grid: &TimeGrid,
) -> Result<BTreeMap<u32, Vec<f64>>, IoError> {
    let rows = Rows::read(reader, name, header)?;
    let mut table = SeriesTable::<1>::new(name, grid);
    for (line, rec) in &rows.rows {
        let id = rows.parse(*line, rec, 0, header[0])?;
        let step = rows.parse(*line, rec, 1, "step")?;
        let v = rows.float(*line, rec, 2, header[2])?;
        table.insert(*line, id, step, [v])?;
    }
    Ok(table
        .finish(header[0])?
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().map(|[x]| x).collect()))
        .collect())
}

/// Per-building netload from `building_id,step,kw` rows.
pub fn read_netload<R: Read>(reader: R, name: &str, grid: &TimeGrid) -> Result<BTreeMap<u32, Vec<f64>>, IoError> {
    read_keyed(reader, name, &["building_id", "step", "kw"], grid)
}

pub(crate) fn load_keyed_csv(
    path: &Path,
    header: &[&str; 3],
    grid: &TimeGrid,
) -> Result<BTreeMap<u32, Vec<f64>>, IoError> {
    read_keyed(open(path)?, &path.display().to_string(), header, grid)
}

pub fn load_netload_csv(path: &Path, grid: &TimeGrid) -> Result<BTreeMap<u32, Vec<f64>>, IoError> {
    read_netload(open(path)?, &path.display().to_string(), grid)
}

/// Price series from `step,price` rows, $/kWh.
pub fn read_price<R: Read>(reader: R, name: &str, grid: &TimeGrid) -> Result<Vec<f64>, IoError> {
    let rows = Rows::read(reader, name, &["step", "price"])?;
    let mut table = SeriesTable::<1>::new(name, grid);
    for (line, rec) in &rows.rows {
        let step = rows.parse(*line, rec, 0, "step")?;
        let price = rows.float(*line, rec, 1, "price")?;
        table.insert(*line, 0, step, [price])?;
    }
    let mut map = table.finish("price")?;
    match map.remove(&0) {
        Some(v) => Ok(v.into_iter().map(|[x]| x).collect()),
        None => Err(IoError::Gap {
            file: name.to_string(),
            what: "price".into(),
            steps: (grid.t0..grid.t0 + grid.horizon).collect(),
        }),
    }
}

pub fn load_price_csv(path: &Path, grid: &TimeGrid) -> Result<Vec<f64>, IoError> {
    read_price(open(path)?, &path.display().to_string(), grid)
}
