//! Sparse false-data injection on sensor readings in transit.
//!
//! The attack is an additive matrix `i` over the feature block whose
//! non-zero cells lie only in columns the attacker can reach, so the server
//! stores `s_a = s + i`.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Largest poisoning rate accepted anywhere in the crate.
pub const MAX_RATE: f64 = 0.25;

/// Perturbations are multiples of this step.
const DELTA_QUANTUM: f64 = 1.0 / (1u64 << 20) as f64;

/// Feature columns the attacker can write to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorAccessSet {
    accessible: BTreeSet<usize>,
}

impl SensorAccessSet {
    pub fn new(indices: impl IntoIterator<Item = usize>, n_features: usize) -> Result<Self> {
        let accessible: BTreeSet<usize> = indices.into_iter().collect();
        if accessible.is_empty() {
            return Err(Error::config("sensor access set is empty"));
        }
        if let Some(&bad) = accessible.iter().find(|&&i| i >= n_features) {
            return Err(Error::config(format!(
                "sensor index {bad} out of range for {n_features} features"
            )));
        }
        Ok(Self { accessible })
    }

    pub fn from_names(columns: &[String], names: &[impl AsRef<str>]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                columns
                    .iter()
                    .position(|c| c == n.as_ref())
                    .ok_or_else(|| Error::config(format!("unknown sensor column `{}`", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(idx, columns.len())
    }

    /// Indoor and outdoor temperature channels (`T1`…`T9`, `T_out`).
    pub fn temperature(columns: &[String]) -> Result<Self> {
        let idx = columns.iter().enumerate().filter_map(|(i, c)| {
            let rest = c.strip_prefix('T')?;
            (rest == "_out" || (!rest.is_empty() && rest.chars().all(|ch| ch.is_ascii_digit()))).then_some(i)
        });
        Self::new(idx, columns.len())
    }

    pub fn all(n_features: usize) -> Result<Self> {
        Self::new(0..n_features, n_features)
    }

    pub fn contains(&self, col: usize) -> bool {
        self.accessible.contains(&col)
    }

    pub fn len(&self) -> usize {
        self.accessible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accessible.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.accessible.iter().copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Pick whole rows (captured transmission frames) and perturb every
    /// accessible column in them.
    RowWise,
    /// Pick individual accessible cells.
    CellWise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdiConfig {
    pub rate: f64,
    /// Range of `|delta|` in normalized units.
    pub magnitude: (f64, f64),
    pub seed: u64,
    pub mode: SelectionMode,
}

impl Default for FdiConfig {
    fn default() -> Self {
        Self {
            rate: 0.05,
            magnitude: (0.1, 0.5),
            seed: 0,
            mode: SelectionMode::RowWise,
        }
    }
}

impl FdiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= MAX_RATE) {
            return Err(Error::config(format!("fdi rate {} outside (0, 0.25]", self.rate)));
        }
        let (lo, hi) = self.magnitude;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config("fdi magnitude range must satisfy 0 <= lo <= hi"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

/// Sparse additive attack matrix, stored as triplets sorted by `(row, col)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackVector {
    pub rows: usize,
    pub cols: usize,
    entries: Vec<Perturbation>,
}

impl AttackVector {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    /// Build from arbitrary triplets. Duplicate coordinates are rejected.
    pub fn from_entries(rows: usize, cols: usize, mut entries: Vec<Perturbation>) -> Result<Self> {
        entries.sort_by_key(|e| (e.row, e.col));
        for w in entries.windows(2) {
            if (w[0].row, w[0].col) == (w[1].row, w[1].col) {
                return Err(Error::config(format!(
                    "duplicate attack coordinate ({}, {})",
                    w[0].row, w[0].col
                )));
            }
        }
        if let Some(e) = entries.iter().find(|e| e.row >= rows || e.col >= cols) {
            return Err(Error::config(format!(
                "attack coordinate ({}, {}) outside {rows}x{cols}",
                e.row, e.col
            )));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn entries(&self) -> &[Perturbation] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn density(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            0.0
        } else {
            self.entries.len() as f64 / (self.rows * self.cols) as f64
        }
    }

    pub fn support(&self) -> BTreeSet<(usize, usize)> {
        self.entries.iter().map(|e| (e.row, e.col)).collect()
    }

    pub fn support_rows(&self) -> BTreeSet<usize> {
        self.entries.iter().map(|e| e.row).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for e in &self.entries {
            m[(e.row, e.col)] = e.delta;
        }
        m
    }

    /// Cells of `m` with magnitude above `threshold`.
    pub fn from_dense(m: &DMatrix<f64>, threshold: f64) -> Self {
        let mut entries = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v.abs() > threshold {
                    entries.push(Perturbation {
                        row: r,
                        col: c,
                        delta: v,
                    });
                }
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            entries,
        }
    }

    /// Sparse-triplet CSV with header `row,column,delta`.
    pub fn write_csv<W: Write>(&self, writer: W, columns: &[String]) -> Result<()> {
        if columns.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "attack vector column names",
                expected: self.cols,
                got: columns.len(),
            });
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "column", "delta"])?;
        for e in &self.entries {
            w.write_record([e.row.to_string(), columns[e.col].clone(), e.delta.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, rows: usize, columns: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let bad = || Error::config(format!("malformed attack triplet {rec:?}"));
            let row: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let col = rec.get(1).and_then(|s| index.get(s).copied()).ok_or_else(bad)?;
            let delta: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            entries.push(Perturbation { row, col, delta });
        }
        Self::from_entries(rows, columns.len(), entries)
    }
}

fn quantize(v: f64) -> f64 {
    (v / DELTA_QUANTUM).round() * DELTA_QUANTUM
}

/// Draw a random sparse attack restricted to the accessible sensors.
pub fn build_attack_vector(data: &Dataset, access: &SensorAccessSet, cfg: &FdiConfig) -> Result<AttackVector> {
    cfg.validate()?;
    let (q, p) = (data.len(), data.dim());
    if let Some(max) = access.indices().max() {
        if max >= p {
            return Err(Error::config(format!(
                "sensor index {max} out of range for {p} features"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.magnitude;
    let draw = |rng: &mut ChaCha8Rng| {
        let mag = lo + (hi - lo) * rng.random::<f64>();
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        quantize(sign * mag)
    };
    let cols: Vec<usize> = access.indices().collect();
    let mut entries = Vec::new();
    match cfg.mode {
        SelectionMode::RowWise => {
            let k = (cfg.rate * q as f64 + 1e-9).floor() as usize;
            if k < 1 {
                return Err(Error::AttackTooSmall {
                    rate: cfg.rate,
                    rows: q,
                });
            }
            let mut order: Vec<usize> = (0..q).collect();
            order.shuffle(&mut rng);
            let mut chosen = order[..k].to_vec();
            chosen.sort_unstable();
            for row in chosen {
                for &col in &cols {
                    entries.push(Perturbation {
                        row,
                        col,
                        delta: draw(&mut rng),
                    });
                }
            }
        }
        SelectionMode::CellWise => {
            let total = q * cols.len();
            let k = (cfg.rate * total as f64 + 1e-9).floor() as usize;
            if k < 1 {
                return Err(Error::AttackTooSmall {
                    rate: cfg.rate,
                    rows: q,
                });
            }
            let mut cells: Vec<usize> = (0..total).collect();
            cells.shuffle(&mut rng);
            let mut chosen = cells[..k].to_vec();
            chosen.sort_unstable();
            for cell in chosen {
                let (row, col) = (cell / cols.len(), cols[cell % cols.len()]);
                entries.push(Perturbation {
                    row,
                    col,
                    delta: draw(&mut rng),
                });
            }
        }
    }
    AttackVector::from_entries(q, p, entries)
}

fn check_shape(data: &Dataset, attack: &AttackVector) -> Result<()> {
    if data.len() != attack.rows {
        return Err(Error::DimensionMismatch {
            context: "attack rows",
            expected: data.len(),
            got: attack.rows,
        });
    }
    if data.dim() != attack.cols {
        return Err(Error::DimensionMismatch {
            context: "attack columns",
            expected: data.dim(),
            got: attack.cols,
        });
    }
    Ok(())
}

/// `s_a = s + i`. The input is left untouched; the target column is never modified.
pub fn inject(data: &Dataset, attack: &AttackVector) -> Result<Dataset> {
    check_shape(data, attack)?;
    let mut out = data.clone();
    for e in attack.entries() {
        out.x[(e.row, e.col)] += e.delta;
    }
    Ok(out)
}

/// Subtract a previously injected attack.
pub fn revert(data: &Dataset, attack: &AttackVector) -> Result<Dataset> {
    check_shape(data, attack)?;
    let mut out = data.clone();
    for e in attack.entries() {
        out.x[(e.row, e.col)] -= e.delta;
    }
    Ok(out)
}

/// F1 score of an estimated support against the true one.
pub fn support_f1(estimated: &AttackVector, truth: &AttackVector) -> f64 {
    let est = estimated.support();
    let tru = truth.support();
    if est.is_empty() && tru.is_empty() {
        return 1.0;
    }
    let tp = est.intersection(&tru).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / est.len() as f64;
    let recall = tp / tru.len() as f64;
    2.0 * precision * recall / (precision + recall)
}
