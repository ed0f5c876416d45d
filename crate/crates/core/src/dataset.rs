//! CSV ingestion, min-max normalization and deterministic splitting.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Moments;

pub const DATE_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Rows of a sensor CSV as parsed, before any scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    /// Numeric columns in header order. The date column is not included.
    pub columns: Vec<String>,
    pub target: String,
    /// One entry per row when the file has a `date` column, otherwise empty.
    pub timestamps: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Rows dropped because of a wrong cell count or an unparseable cell.
    pub rejected: usize,
}

impl RawFrame {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn target_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| *c == self.target)
            .expect("target column checked at construction")
    }

    pub fn feature_columns(&self) -> Vec<String> {
        self.columns.iter().filter(|c| **c != self.target).cloned().collect()
    }
}

pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<RawFrame> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_csv(File::open(path)?, target_column)
}

pub fn read_csv<R: Read>(reader: R, target_column: &str) -> Result<RawFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if !header.iter().any(|h| h == target_column) {
        return Err(Error::MissingTargetColumn(target_column.to_string()));
    }
    let date_idx = header.iter().position(|h| h.eq_ignore_ascii_case("date"));
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != date_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows = Vec::new();
    let mut timestamps = Vec::new();
    let mut rejected = 0usize;
    for (line, record) in rdr.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                log::warn!("row {}: unreadable record: {e}", line + 2);
                rejected += 1;
                continue;
            }
        };
        if record.len() != header.len() {
            log::warn!(
                "row {}: expected {} cells, found {}",
                line + 2,
                header.len(),
                record.len()
            );
            rejected += 1;
            continue;
        }
        let mut values = Vec::with_capacity(columns.len());
        let mut stamp = None;
        let mut ok = true;
        for (i, cell) in record.iter().enumerate() {
            if Some(i) == date_idx {
                if NaiveDateTime::parse_from_str(cell, DATE_FORMAT).is_err() {
                    ok = false;
                    break;
                }
                stamp = Some(cell.to_string());
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            log::warn!("row {}: unparseable cell, row rejected", line + 2);
            rejected += 1;
            continue;
        }
        rows.push(values);
        if let Some(s) = stamp {
            timestamps.push(s);
        }
    }
    if rejected > 0 {
        log::info!("ingested {} rows, rejected {}", rows.len(), rejected);
    }
    if rows.is_empty() {
        return Err(Error::NoParseableRows { rejected });
    }
    Ok(RawFrame {
        columns,
        target: target_column.to_string(),
        timestamps,
        rows,
        rejected,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    RandomShuffle,
    Chronological,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.70,
            validation_fraction: 0.15,
            test_fraction: 0.15,
            seed: 0,
            mode: SplitMode::RandomShuffle,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.validation_fraction, self.test_fraction];
        if fr.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::config("split fractions must be positive"));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::config("split fractions must sum to 1"));
        }
        Ok(())
    }

    /// Split label for each of `n` rows.
    pub fn assign(&self, n: usize) -> Result<Vec<Split>> {
        self.validate()?;
        let n_train = (self.train_fraction * n as f64).round() as usize;
        let n_val = (self.validation_fraction * n as f64).round() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= n {
            return Err(Error::config(format!("{n} rows cannot populate all three splits")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        if self.mode == SplitMode::RandomShuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        }
        let mut labels = vec![Split::Test; n];
        for (rank, &row) in order.iter().enumerate() {
            labels[row] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
        Ok(labels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Min-max scaling parameters of one column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut it = values.into_iter();
        let first = it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Some(Self { min, max })
    }

    pub fn is_constant(&self) -> bool {
        !(self.max > self.min)
    }

    /// Scale into `[0, 1]` relative to the fitted range. Constant columns map to 0.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, v: f64) -> Result<f64> {
        if self.is_constant() {
            return Err(Error::ConstantTarget(self.min));
        }
        Ok(v * (self.max - self.min) + self.min)
    }
}

pub fn denormalize_target(value: f64, params: &MinMax) -> Result<f64> {
    params.denormalize(value)
}

/// The normalized sensor matrix and target, with the split each row belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataFrameNorm {
    pub feature_columns: Vec<String>,
    pub target_column: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_params: Vec<MinMax>,
    pub target_params: MinMax,
    pub split: Vec<Split>,
    pub split_mode: SplitMode,
    /// Feature columns that were constant on the training rows.
    pub constant_columns: Vec<usize>,
    pub constant_target: bool,
    /// Validation/test cells clipped back into `[0, 1]`.
    pub clipped_cells: usize,
}

pub fn normalize_split(frame: &RawFrame, spec: &SplitSpec) -> Result<DataFrameNorm> {
    if frame.is_empty() {
        return Err(Error::Empty("frame has no rows"));
    }
    let labels = spec.assign(frame.len())?;
    let target_idx = frame.target_index();
    let feature_idx: Vec<usize> = (0..frame.columns.len()).filter(|&i| i != target_idx).collect();
    let train_rows: Vec<usize> = (0..frame.len()).filter(|&r| labels[r] == Split::Train).collect();

    let fit =
        |col: usize| MinMax::fit(train_rows.iter().map(|&r| frame.rows[r][col])).expect("train split is non-empty");
    let feature_params: Vec<MinMax> = feature_idx.iter().map(|&c| fit(c)).collect();
    let target_params = fit(target_idx);
    let constant_columns: Vec<usize> = feature_params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_constant())
        .map(|(i, _)| i)
        .collect();
    for &c in &constant_columns {
        log::warn!(
            "column `{}` is constant on the training rows",
            frame.columns[feature_idx[c]]
        );
    }

    let mut clipped = 0usize;
    let mut scale = |p: &MinMax, v: f64, split: Split| {
        let s = p.normalize(v);
        if split != Split::Train && !(0.0..=1.0).contains(&s) {
            clipped += 1;
            s.clamp(0.0, 1.0)
        } else {
            s
        }
    };
    let n = frame.len();
    let d = feature_idx.len();
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    for r in 0..n {
        for (j, &c) in feature_idx.iter().enumerate() {
            x[(r, j)] = scale(&feature_params[j], frame.rows[r][c], labels[r]);
        }
        y[r] = scale(&target_params, frame.rows[r][target_idx], labels[r]);
    }

    Ok(DataFrameNorm {
        feature_columns: feature_idx.iter().map(|&c| frame.columns[c].clone()).collect(),
        target_column: frame.target.clone(),
        x,
        y,
        feature_params,
        constant_target: target_params.is_constant(),
        target_params,
        split: labels,
        split_mode: spec.mode,
        constant_columns,
        clipped_cells: clipped,
    })
}

impl DataFrameNorm {
    pub fn rows(&self, split: Split) -> Vec<usize> {
        (0..self.split.len()).filter(|&r| self.split[r] == split).collect()
    }

    pub fn dataset(&self, split: Split) -> Dataset {
        self.subset(&self.rows(split))
    }

    pub fn train(&self) -> Dataset {
        self.dataset(Split::Train)
    }

    pub fn validation(&self) -> Dataset {
        self.dataset(Split::Validation)
    }

    pub fn test(&self) -> Dataset {
        self.dataset(Split::Test)
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self.feature_columns.clone(),
            target: self.target_column.clone(),
            x: self.x.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r])),
            source_rows: rows.to_vec(),
        }
    }
}

/// A block of normalized rows: feature matrix plus response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub target: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Row index of each observation in the frame it came from.
    pub source_rows: Vec<usize>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset rows",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        let columns = (0..x.ncols()).map(|j| format!("x{}", j + 1)).collect();
        let source_rows = (0..x.nrows()).collect();
        Ok(Self {
            columns,
            target: "y".to_string(),
            x,
            y,
            source_rows,
        })
    }

    pub fn with_columns(mut self, columns: Vec<String>, target: &str) -> Result<Self> {
        if columns.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                context: "column names",
                expected: self.x.ncols(),
                got: columns.len(),
            });
        }
        self.columns = columns;
        self.target = target.to_string();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, r: usize) -> DVector<f64> {
        self.x.row(r).transpose()
    }

    pub fn moments(&self) -> Moments {
        Moments::from_data(&self.x, &self.y)
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.clone(),
            target: self.target.clone(),
            x: self.x.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r])),
            source_rows: rows.iter().map(|&r| self.source_rows[r]).collect(),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context: "concatenated datasets",
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let n = self.len() + other.len();
        let mut x = DMatrix::zeros(n, self.dim());
        x.rows_mut(0, self.len()).copy_from(&self.x);
        x.rows_mut(self.len(), other.len()).copy_from(&other.x);
        let y = DVector::from_iterator(n, self.y.iter().chain(other.y.iter()).cloned());
        let mut source_rows = self.source_rows.clone();
        source_rows.extend(&other.source_rows);
        Ok(Dataset {
            columns: self.columns.clone(),
            target: self.target.clone(),
            x,
            y,
            source_rows,
        })
    }

    /// Header: feature columns then the target. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.columns.clone();
        header.push(self.target.clone());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(r).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[r].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`Dataset::write_csv`]: the last column is the target.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 {
            return Err(Error::Empty("dataset csv needs at least one feature and a target"));
        }
        let d = header.len() - 1;
        let mut values = Vec::new();
        let mut y = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::DimensionMismatch {
                    context: "dataset csv row",
                    expected: header.len(),
                    got: rec.len(),
                });
            }
            for (i, cell) in rec.iter().enumerate() {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(format!("unparseable value `{cell}`")))?;
                if i < d {
                    values.push(v);
                } else {
                    y.push(v);
                }
            }
        }
        let n = y.len();
        let ds = Dataset::new(DMatrix::from_row_slice(n, d, &values), DVector::from_vec(y))?;
        ds.with_columns(header[..d].to_vec(), &header[d])
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Dataset::read_csv(File::open(path)?)
    }
}
