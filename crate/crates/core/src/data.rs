//! CSV ingestion, train/test splitting and z-score normalization.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};
use crate::training::Samples;

/// Floor on the standard deviation used as a divisor.
pub const ZSCORE_EPS: f64 = 1e-12;

/// Default fraction of rows assigned to training.
pub const TRAIN_FRACTION: f64 = 0.7;

/// A parsed table in original units. The trailing `D` columns are targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.features.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.targets.ncols()
    }

    /// Rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Table {
        Table {
            columns: self.columns.clone(),
            features: self.features.select(Axis(0), idx),
            targets: self.targets.select(Axis(0), idx),
        }
    }

    /// Writes the table with its header; values use shortest round-trip formatting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| FlsError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(&self.columns).map_err(|e| csv_error(path, e))?;
        for (f, t) in self.features.outer_iter().zip(self.targets.outer_iter()) {
            let record: Vec<String> = f.iter().chain(t.iter()).map(|v| v.to_string()).collect();
            w.write_record(&record).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(io)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> FlsError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => FlsError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => FlsError::Data(format!("{}: {:?}", path.display(), other)),
    }
}

/// Reads a comma-separated file with one header row.
pub fn load_csv(path: &Path, targets: usize) -> Result<Table> {
    let file = File::open(path).map_err(|source| FlsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(file, targets).map_err(|e| match e {
        FlsError::Data(msg) => FlsError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses CSV text from any reader; see [`load_csv`].
pub fn parse_csv<R: Read>(reader: R, targets: usize) -> Result<Table> {
    if targets == 0 {
        return Err(FlsError::Config("at least one target column is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let columns: Vec<String> = rdr
        .headers()
        .map_err(|e| FlsError::Data(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let width = columns.len();
    if width == 0 || columns.iter().all(String::is_empty) {
        return Err(FlsError::Data("empty file".into()));
    }
    if targets >= width {
        return Err(FlsError::Config(format!(
            "{targets} target columns requested but the file has only {width} columns"
        )));
    }

    let mut values = Vec::new();
    let mut rows = 0;
    for (ri, record) in rdr.records().enumerate() {
        let line = ri + 2;
        let record = record.map_err(|e| FlsError::Data(format!("line {line}: {e}")))?;
        if record.len() != width {
            return Err(FlsError::Data(format!(
                "line {line}: expected {width} fields, found {}",
                record.len()
            )));
        }
        for (ci, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                FlsError::Data(format!(
                    "non-numeric value {cell:?} at line {line}, column {} ({})",
                    ci + 1,
                    columns[ci]
                ))
            })?;
            if !v.is_finite() {
                return Err(FlsError::Data(format!(
                    "non-finite value at line {line}, column {}",
                    ci + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(FlsError::Data("no data rows".into()));
    }
    let all = Array2::from_shape_vec((rows, width), values).expect("row-major fill");
    let m = width - targets;
    Ok(Table {
        columns,
        features: all.slice(ndarray::s![.., ..m]).to_owned(),
        targets: all.slice(ndarray::s![.., m..]).to_owned(),
    })
}

/// Seeded permutation; the first `⌊frac·N⌋` rows train, the rest test.
pub fn split(table: &Table, train_frac: f64, seed: u64) -> Result<(Table, Table)> {
    let n = table.rows();
    if n < 2 {
        return Err(FlsError::Data(format!("need at least 2 rows to split, got {n}")));
    }
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(FlsError::Config(format!("train fraction {train_frac} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_frac * n as f64).floor() as usize;
    Ok((table.select(&order[..cut]), table.select(&order[cut..])))
}

/// Per-column mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

fn column_stats(a: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = a.nrows() as f64;
    a.columns()
        .into_iter()
        .map(|col| {
            // Shifted by the first value so constant columns get an exact mean.
            let k = col[0];
            let mean = k + col.iter().fold(0.0, |s, v| s + (v - k)) / n;
            let ss = col.iter().fold(0.0, |s, v| s + (v - mean) * (v - mean));
            (mean, (ss / (n - 1.0)).sqrt())
        })
        .unzip()
}

fn normalize(a: ArrayView2<f64>, mean: &[f64], std: &[f64]) -> Array2<f64> {
    let mut out = a.to_owned();
    for (mut col, (&mu, &s)) in out.columns_mut().into_iter().zip(mean.iter().zip(std)) {
        let s = s.max(ZSCORE_EPS);
        col.mapv_inplace(|v| (v - mu) / s);
    }
    out
}

impl ZScore {
    /// Fits statistics on `table`, which must have at least two rows.
    pub fn fit(table: &Table) -> Result<Self> {
        if table.rows() < 2 {
            return Err(FlsError::Data(format!(
                "z-score needs at least 2 rows, got {}",
                table.rows()
            )));
        }
        let (feature_mean, feature_std) = column_stats(table.features.view());
        let (target_mean, target_std) = column_stats(table.targets.view());
        Ok(ZScore {
            feature_mean,
            feature_std,
            target_mean,
            target_std,
        })
    }

    pub fn inputs(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn outputs(&self) -> usize {
        self.target_mean.len()
    }

    pub fn apply(&self, table: &Table) -> Result<Dataset> {
        if table.inputs() != self.inputs() || table.outputs() != self.outputs() {
            return Err(FlsError::Config(format!(
                "table has {} inputs and {} outputs, normalization expects {} and {}",
                table.inputs(),
                table.outputs(),
                self.inputs(),
                self.outputs()
            )));
        }
        Ok(Dataset {
            columns: table.columns.clone(),
            features: normalize(table.features.view(), &self.feature_mean, &self.feature_std),
            targets: normalize(table.targets.view(), &self.target_mean, &self.target_std),
            normalization: self.clone(),
        })
    }

    /// Maps normalized targets back to original units.
    pub fn denormalize_targets(&self, y: ArrayView2<f64>) -> Array2<f64> {
        let mut out = y.to_owned();
        for (mut col, (&mu, &s)) in out
            .columns_mut()
            .into_iter()
            .zip(self.target_mean.iter().zip(&self.target_std))
        {
            let s = s.max(ZSCORE_EPS);
            col.mapv_inplace(|v| v * s + mu);
        }
        out
    }
}

/// Normalized features and targets with the statistics that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
    pub normalization: ZScore,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn samples(&self) -> Samples<'_> {
        Samples {
            x: self.features.view(),
            y: self.targets.view(),
        }
    }
}

/// Splits, fits normalization on the training part, and normalizes both parts.
pub fn prepare(table: &Table, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split(table, train_frac, seed)?;
    let z = ZScore::fit(&train)?;
    Ok((z.apply(&train)?, z.apply(&test)?))
}

/// Column means of `a`, for tests and diagnostics.
pub fn column_means(a: ArrayView2<f64>) -> Array1<f64> {
    a.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(a.ncols()))
}
