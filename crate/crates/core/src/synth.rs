//! Seeded synthetic data: planted low-rank + sparse matrices, noisy linear
//! regression sets, and a CSV with the column layout of the UCI appliances
//! energy file for running the pipeline without the real download.

use std::f64::consts::PI;
use std::fmt::Write as _;

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{Dataset, DATE_FORMAT};
use crate::fdi::{AttackVector, Perturbation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// A low-rank matrix with a planted sparse corruption.
#[derive(Clone, Debug)]
pub struct Planted {
    pub low_rank: DMatrix<f64>,
    pub sparse: AttackVector,
    pub observed: DMatrix<f64>,
}

/// `U·Vᵀ` with Gaussian factors plus `±magnitude` on a uniformly random
/// `sparsity` fraction of cells.
pub fn planted_low_rank_sparse(
    rows: usize,
    cols: usize,
    rank: usize,
    sparsity: f64,
    magnitude: f64,
    seed: u64,
) -> Planted {
    let mut rng = rng(seed);
    let u = gaussian_matrix(rows, rank, &mut rng);
    let v = gaussian_matrix(cols, rank, &mut rng);
    let low_rank = &u * v.transpose();
    let k = (sparsity * (rows * cols) as f64).round() as usize;
    let mut cells: Vec<usize> = (0..rows * cols).collect();
    cells.shuffle(&mut rng);
    let mut entries: Vec<Perturbation> = cells[..k]
        .iter()
        .map(|&c| Perturbation {
            row: c / cols,
            col: c % cols,
            delta: if rng.random::<bool>() { magnitude } else { -magnitude },
        })
        .collect();
    entries.sort_by_key(|e| (e.row, e.col));
    let sparse = AttackVector::from_entries(rows, cols, entries).expect("distinct cells");
    let observed = &low_rank + sparse.to_dense();
    Planted {
        low_rank,
        sparse,
        observed,
    }
}

/// A low-rank sensor block in `[0, 1]`: `rank` smooth latent signals mixed
/// into `cols` channels, rescaled per column.
pub fn low_rank_sensor_block(rows: usize, cols: usize, rank: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng(seed);
    let phases: Vec<f64> = (0..rank).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let latent = DMatrix::from_fn(rows, rank, |r, k| {
        let period = 24.0 + 17.0 * k as f64;
        (2.0 * PI * r as f64 / period + phases[k]).sin()
    });
    let mix = gaussian_matrix(rank, cols, &mut rng);
    let mut m = &latent * mix;
    // affine column rescaling keeps rank ≤ rank + 1
    for mut c in m.column_iter_mut() {
        let (lo, hi) = (c.min(), c.max());
        let span = if hi > lo { hi - lo } else { 1.0 };
        c.apply(|v| *v = 0.1 + 0.8 * (*v - lo) / span);
    }
    m
}

/// Linear regression data on `[0, 1]^d` with responses clipped to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct LinearTask {
    pub weights: DVector<f64>,
    pub bias: f64,
    pub noise: f64,
}

impl LinearTask {
    pub fn random(dim: usize, noise: f64, rng: &mut ChaCha8Rng) -> Self {
        let raw = DVector::from_fn(dim, |_, _| rng.random::<f64>() - 0.3);
        // keep the noiseless response inside [0.2, 0.8]
        let l1 = raw.lp_norm(1).max(1e-12);
        let weights = raw * (0.5 / l1);
        let lo: f64 = weights.iter().filter(|w| **w < 0.0).sum();
        Self {
            weights,
            bias: 0.2 - lo,
            noise,
        }
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let d = self.weights.len();
        let x = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>());
        let noise = Normal::new(0.0, self.noise.max(0.0)).expect("finite noise");
        let y = DVector::from_fn(n, |r, _| {
            let clean = x.row(r).transpose().dot(&self.weights) + self.bias;
            (clean + noise.sample(rng)).clamp(0.0, 1.0)
        });
        Dataset::new(x, y).expect("consistent shapes")
    }
}

/// Column layout of the UCI appliances energy file, minus `date`.
pub const UCI_COLUMNS: [&str; 28] = [
    "Appliances",
    "lights",
    "T1",
    "RH_1",
    "T2",
    "RH_2",
    "T3",
    "RH_3",
    "T4",
    "RH_4",
    "T5",
    "RH_5",
    "T6",
    "RH_6",
    "T7",
    "RH_7",
    "T8",
    "RH_8",
    "T9",
    "RH_9",
    "T_out",
    "Press_mm_hg",
    "RH_out",
    "Windspeed",
    "Visibility",
    "Tdewpoint",
    "rv1",
    "rv2",
];

/// A CSV with the UCI appliances schema: 10-minute cadence, indoor
/// temperature/humidity pairs driven by shared daily and weekly cycles,
/// weather channels, two identical random variables, and an appliance load
/// in watt-hours (multiples of 10) that depends linearly on the sensors.
pub fn uci_like_csv(rows: usize, seed: u64) -> String {
    let mut rng = rng(seed);
    let start = NaiveDate::from_ymd_opt(2016, 1, 11)
        .and_then(|d| d.and_hms_opt(17, 0, 0))
        .expect("valid start");
    let noise = |rng: &mut ChaCha8Rng, s: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        s * z
    };
    let room_offsets: Vec<f64> = (0..9).map(|_| 17.0 + 6.0 * rng.random::<f64>()).collect();
    let room_phase: Vec<f64> = (0..9).map(|_| 0.6 * rng.random::<f64>()).collect();
    let load_w: Vec<f64> = (0..9).map(|_| rng.random::<f64>() - 0.5).collect();

    let mut out = String::new();
    out.push_str("date");
    for c in UCI_COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    let mut weather = 0.0_f64;
    for r in 0..rows {
        let t = r as f64;
        let day = (2.0 * PI * t / 144.0).sin();
        let week = (2.0 * PI * t / 1008.0).sin();
        weather = 0.995 * weather + noise(&mut rng, 0.1);
        let occupancy = (day + 0.3 * week).max(0.0);
        let lights = (10.0 * (3.0 * occupancy + noise(&mut rng, 0.8)).round()).clamp(0.0, 70.0);

        let mut temps = [0.0; 9];
        let mut hums = [0.0; 9];
        for k in 0..9 {
            let cyc = (2.0 * PI * t / 144.0 + room_phase[k]).sin();
            temps[k] = room_offsets[k] + 1.5 * cyc + 0.8 * week + 0.5 * weather + noise(&mut rng, 0.15);
            hums[k] = 40.0 - 3.0 * cyc + 2.0 * weather + noise(&mut rng, 0.6);
        }
        let t_out = 6.0 + 5.0 * day + 3.0 * week + 2.0 * weather + noise(&mut rng, 0.3);
        let press = 755.0 + 6.0 * week + noise(&mut rng, 0.5);
        let rh_out = (80.0 - 10.0 * day + 5.0 * weather + noise(&mut rng, 2.0)).clamp(20.0, 100.0);
        let wind = (4.0 + 2.0 * weather + noise(&mut rng, 1.0)).max(0.0);
        let vis = (40.0 + 10.0 * week + noise(&mut rng, 5.0)).clamp(1.0, 66.0);
        let dew = t_out - (100.0 - rh_out) / 5.0;
        let rv = 50.0 * rng.random::<f64>();

        let sensor_load: f64 = (0..9).map(|k| load_w[k] * (temps[k] - room_offsets[k]) * 40.0).sum();
        let appliances = 10.0
            * ((60.0 + 150.0 * occupancy + 2.0 * lights + sensor_load - 2.0 * t_out
                + 60.0 * noise(&mut rng, 1.0).abs())
                / 10.0)
                .round();
        let appliances = appliances.clamp(10.0, 1080.0);

        let stamp = start + Duration::minutes(10 * r as i64);
        let _ = write!(out, "{},{},{}", stamp.format(DATE_FORMAT), appliances, lights);
        for k in 0..9 {
            let _ = write!(out, ",{:.4},{:.4}", temps[k], hums[k]);
        }
        let _ = writeln!(
            out,
            ",{:.4},{:.2},{:.2},{:.3},{:.2},{:.4},{:.6},{:.6}",
            t_out, press, rh_out, wind, vis, dew, rv, rv
        );
    }
    out
}
