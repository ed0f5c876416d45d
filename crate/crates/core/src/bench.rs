//! Experiment grid: ingest, attack at both levels, defend at both levels,
//! and write plot-ready reports.
//!
//! Every grid cell is a `(model, rate)` pair. A cell records `no-attack`,
//! `attacked`, and one `defended` row per enabled defense (`apg`, `trim`,
//! `apg+trim`). Cells that fail leave a single `failed` record and the run
//! carries on.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_csv, normalize_split, DataFrameNorm, Dataset, MinMax, SplitSpec};
use crate::error::{Error, Result};
use crate::fdi::{build_attack_vector, inject, FdiConfig, SelectionMode, SensorAccessSet, MAX_RATE};
use crate::poison::{
    build_blackbox_surrogate, run_poisoning_attack, AttackerKnowledge, KnowledgeMode, LineSearch, ObservedDataset,
    PoisonConfig,
};
use crate::regress::{fit, mse, predict, Learner, LinearModel, TrainConfig};
use crate::rpca::{sanitize_frame, ApgConfig};
use crate::trim::{trim_fit_with, TrimConfig, TrimInit};

/// Percent change in the reference prediction at 1–10% poisoning, as published
/// for the full appliances data set (OLS, ridge, lasso).
pub const PUBLISHED_PERCENT_CHANGE: [(f64, [f64; 3]); 10] = [
    (0.01, [44.07, 23.25, 27.46]),
    (0.02, [91.10, 53.11, 51.62]),
    (0.03, [70.61, 70.64, 103.65]),
    (0.04, [95.17, 105.28, 118.17]),
    (0.05, [139.25, 128.53, 145.64]),
    (0.06, [186.28, 158.39, 169.79]),
    (0.07, [165.79, 175.92, 221.83]),
    (0.08, [190.35, 210.56, 236.34]),
    (0.09, [234.43, 233.82, 263.81]),
    (0.10, [281.46, 263.67, 287.96]),
];

pub const PERCENT_CHANGE_DEFINITION: &str =
    "|prediction_wh(stage) - prediction_wh(no-attack)| / |prediction_wh(no-attack)| * 100, \
     on the test row whose actual consumption is closest to reference_wh";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackStages {
    pub fdi: bool,
    pub poison: bool,
}

impl Default for AttackStages {
    fn default() -> Self {
        Self {
            fdi: true,
            poison: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseStages {
    pub apg: bool,
    pub trim: bool,
}

impl Default for DefenseStages {
    fn default() -> Self {
        Self { apg: true, trim: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lambdas {
    pub ridge: f64,
    pub lasso: f64,
    pub lasso_max_iter: usize,
    pub lasso_tol: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        let tc = TrainConfig::default();
        Self {
            ridge: Learner::Ridge.default_lambda(),
            lasso: Learner::Lasso.default_lambda(),
            lasso_max_iter: tc.lasso_max_iter,
            lasso_tol: tc.lasso_tol,
        }
    }
}

impl Lambdas {
    pub fn for_learner(&self, learner: Learner) -> f64 {
        match learner {
            Learner::Ols => 0.0,
            Learner::Ridge => self.ridge,
            Learner::Lasso => self.lasso,
        }
    }

    pub fn train_config(&self, learner: Learner) -> TrainConfig {
        TrainConfig {
            lambda: self.for_learner(learner),
            lasso_max_iter: self.lasso_max_iter,
            lasso_tol: self.lasso_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdiSettings {
    /// Fixed injection rate; `None` uses the grid rate.
    pub rate: Option<f64>,
    pub magnitude: (f64, f64),
    pub mode: SelectionMode,
    /// Feature columns the attacker can reach; empty means all of them.
    pub sensors: Vec<String>,
}

impl Default for FdiSettings {
    fn default() -> Self {
        let d = FdiConfig::default();
        Self {
            rate: None,
            magnitude: d.magnitude,
            mode: d.mode,
            sensors: Vec::new(),
        }
    }
}

/// Which set the poisoning attacker treats as the victim's training data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    /// The stored set after in-transit corruption.
    Stored,
    /// The uncorrupted training split.
    CleanTrain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoisonSettings {
    pub tolerance: f64,
    pub max_outer_iter: usize,
    pub line_search: LineSearch,
    pub mode: KnowledgeMode,
    pub optimize_response: bool,
    pub composition: Composition,
}

impl Default for PoisonSettings {
    fn default() -> Self {
        let d = PoisonConfig::default();
        Self {
            tolerance: d.tolerance,
            max_outer_iter: d.max_outer_iter,
            line_search: d.line_search,
            mode: d.mode,
            optimize_response: d.optimize_response,
            composition: Composition::Stored,
        }
    }
}

/// What the first-level defense hands to training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApgOutput {
    /// The recovered low-rank feature block.
    LowRank,
    /// The observed features minus the estimated sparse attack cells.
    RemoveSparse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrimSettings {
    pub max_iter: usize,
    pub restarts: usize,
    pub loss_tol: f64,
    pub include_penalty: bool,
    pub init: TrimInit,
}

impl Default for TrimSettings {
    fn default() -> Self {
        let d = TrimConfig::default();
        Self {
            max_iter: d.max_iter,
            restarts: d.restarts,
            loss_tol: d.loss_tol,
            include_penalty: d.include_penalty,
            init: d.init,
        }
    }
}

/// Full description of one experiment run. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: PathBuf,
    pub target: String,
    /// Keep only the first this-many parseable rows.
    pub max_rows: Option<usize>,
    pub split: SplitSpec,
    pub models: Vec<Learner>,
    pub rates: Vec<f64>,
    pub attacks: AttackStages,
    pub defenses: DefenseStages,
    pub lambda: Lambdas,
    pub fdi: FdiSettings,
    pub poison: PoisonSettings,
    pub apg: ApgConfig,
    pub apg_output: ApgOutput,
    pub trim: TrimSettings,
    /// Actual consumption (WH) used to pick the reference test row.
    pub reference_wh: f64,
    pub seed: u64,
    /// Output directory. Not part of the config hash.
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("energydata_complete.csv"),
            target: "Appliances".into(),
            max_rows: Some(2000),
            split: SplitSpec::default(),
            models: Learner::ALL.to_vec(),
            rates: default_rates(),
            attacks: AttackStages::default(),
            defenses: DefenseStages::default(),
            lambda: Lambdas::default(),
            fdi: FdiSettings::default(),
            poison: PoisonSettings::default(),
            apg: ApgConfig::default(),
            apg_output: ApgOutput::RemoveSparse,
            trim: TrimSettings::default(),
            reference_wh: 580.0,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

/// 1%, 2%, ..., 25%.
pub fn default_rates() -> Vec<f64> {
    (1..=25).map(|k| k as f64 / 100.0).collect()
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.rates.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for &r in &self.rates {
            if !(r > 0.0 && r <= MAX_RATE) {
                return Err(Error::config(format!("rate {r} outside (0, 0.25]")));
            }
        }
        if let Some(r) = self.fdi.rate {
            if !(r > 0.0 && r <= MAX_RATE) {
                return Err(Error::config(format!("fdi rate {r} outside (0, 0.25]")));
            }
        }
        if self.max_rows == Some(0) {
            return Err(Error::config("max_rows must be positive"));
        }
        if !(self.lambda.ridge >= 0.0 && self.lambda.lasso >= 0.0) {
            return Err(Error::config("lambdas must be non-negative"));
        }
        if !(self.reference_wh.is_finite()) {
            return Err(Error::config("reference_wh must be finite"));
        }
        self.split.validate()?;
        self.apg.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the spec, hex-encoded.
    pub fn config_hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}

/// Seed for one grid cell, derived from the global seed, the model and the rate.
pub fn cell_seed(seed: u64, learner: Learner, rate: f64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(learner.name().as_bytes());
    h.update(rate.to_bits().to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// `|poisoned − clean| / |clean| × 100`.
pub fn percent_change(pred_poisoned: f64, pred_clean: f64) -> Result<f64> {
    if pred_clean == 0.0 {
        return Err(Error::config("percent change undefined for a zero clean prediction"));
    }
    Ok((pred_poisoned - pred_clean).abs() / pred_clean.abs() * 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    NoAttack,
    Attacked,
    Defended,
    Failed,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::NoAttack => "no-attack",
            Stage::Attacked => "attacked",
            Stage::Defended => "defended",
            Stage::Failed => "failed",
        }
    }
}

/// Defense applied before the model was trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Defense {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "apg")]
    Apg,
    #[serde(rename = "trim")]
    Trim,
    #[serde(rename = "apg+trim")]
    ApgTrim,
}

impl Defense {
    pub fn name(self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::Apg => "apg",
            Defense::Trim => "trim",
            Defense::ApgTrim => "apg+trim",
        }
    }
}

/// One row of `report.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub model: Learner,
    pub rate: f64,
    pub stage: Stage,
    pub defense: Defense,
    /// Test-set MSE in normalized units.
    pub mse: f64,
    /// MSE on the untainted validation set.
    pub validation_mse: f64,
    /// Reference-row prediction in WH.
    pub prediction_wh: f64,
    pub percent_change: f64,
    /// Relative Frobenius error of the sanitized features against the clean ones.
    pub apg_residual: Option<f64>,
    pub poison_points: usize,
    pub elapsed_attack_s: f64,
    pub elapsed_defense_s: f64,
    pub seed: u64,
    pub config_hash: String,
    pub message: String,
}

/// Wall-clock cost of each stage of one cell, in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub model: Option<Learner>,
    pub rate: f64,
    pub fdi_s: f64,
    pub poison_s: f64,
    pub apg_s: f64,
    pub trim_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    /// Position within the test split.
    pub test_index: usize,
    pub actual_wh: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub config_hash: String,
    pub reference: ReferenceRow,
    pub records: Vec<ReportRecord>,
    pub timings: Vec<CellTiming>,
    pub rows: usize,
    pub rejected_rows: usize,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.stage == Stage::Failed).count()
    }

    /// First record for the cell and stage; for `defended` that is the first enabled defense.
    pub fn record(&self, model: Learner, rate: f64, stage: Stage) -> Option<&ReportRecord> {
        self.records
            .iter()
            .find(|r| r.model == model && r.rate == rate && r.stage == stage)
    }

    pub fn defended(&self, model: Learner, rate: f64, defense: Defense) -> Option<&ReportRecord> {
        self.records
            .iter()
            .find(|r| r.model == model && r.rate == rate && r.stage == Stage::Defended && r.defense == defense)
    }
}

/// Data shared by every cell.
struct Context<'a> {
    spec: &'a ExperimentSpec,
    norm: DataFrameNorm,
    train: Dataset,
    validation: Dataset,
    test: Dataset,
    access: SensorAccessSet,
    reference: ReferenceRow,
    hash: String,
}

struct CellOutput {
    records: Vec<ReportRecord>,
    timing: CellTiming,
}

impl Context<'_> {
    fn target_params(&self) -> &MinMax {
        &self.norm.target_params
    }

    fn predict_wh(&self, model: &LinearModel) -> Result<f64> {
        let x = self.test.row(self.reference.test_index);
        self.target_params().denormalize(model.predict_one(&x))
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        learner: Learner,
        rate: f64,
        stage: Stage,
        defense: Defense,
        model: &LinearModel,
        clean_wh: Option<f64>,
        seed: u64,
    ) -> Result<ReportRecord> {
        let test_mse = mse(&predict(model, &self.test.x)?, &self.test.y)?;
        let validation_mse = mse(&predict(model, &self.validation.x)?, &self.validation.y)?;
        let prediction_wh = self.predict_wh(model)?;
        let percent = match clean_wh {
            Some(c) => percent_change(prediction_wh, c)?,
            None => 0.0,
        };
        Ok(ReportRecord {
            model: learner,
            rate,
            stage,
            defense,
            mse: test_mse,
            validation_mse,
            prediction_wh,
            percent_change: percent,
            apg_residual: None,
            poison_points: 0,
            elapsed_attack_s: 0.0,
            elapsed_defense_s: 0.0,
            seed,
            config_hash: self.hash.clone(),
            message: String::new(),
        })
    }

    fn run_cell(&self, learner: Learner, rate: f64) -> Result<CellOutput> {
        let spec = self.spec;
        let seed = cell_seed(spec.seed, learner, rate);
        let tc = spec.lambda.train_config(learner);
        let lambda = tc.lambda;
        let mut timing = CellTiming {
            model: Some(learner),
            rate,
            ..Default::default()
        };

        let clean = fit(learner, &self.train.x, &self.train.y, lambda, &tc)?;
        let base = self.record(learner, rate, Stage::NoAttack, Defense::None, &clean, None, seed)?;
        let clean_wh = base.prediction_wh;

        // level 1: corruption in transit
        let started = Instant::now();
        let stored = if spec.attacks.fdi {
            let cfg = FdiConfig {
                rate: spec.fdi.rate.unwrap_or(rate),
                magnitude: spec.fdi.magnitude,
                seed,
                mode: spec.fdi.mode,
            };
            inject(&self.train, &build_attack_vector(&self.train, &self.access, &cfg)?)?
        } else {
            self.train.clone()
        };
        timing.fdi_s = started.elapsed().as_secs_f64();

        // level 2: poisoning
        let started = Instant::now();
        let poison = if spec.attacks.poison {
            let target = match spec.poison.composition {
                Composition::Stored => stored.clone(),
                Composition::CleanTrain => self.train.clone(),
            };
            let observed = ObservedDataset::new(target);
            let knowledge = match spec.poison.mode {
                KnowledgeMode::WhiteBox => AttackerKnowledge::white_box(&observed, learner, tc.clone())?,
                KnowledgeMode::BlackBox => build_blackbox_surrogate(&self.validation, learner, tc.clone(), seed)?,
            };
            let cfg = PoisonConfig {
                rate,
                tolerance: spec.poison.tolerance,
                max_outer_iter: spec.poison.max_outer_iter,
                line_search: spec.poison.line_search.clone(),
                mode: spec.poison.mode,
                seed,
                optimize_response: spec.poison.optimize_response,
            };
            Some(run_poisoning_attack(&observed, &self.validation, &knowledge, &cfg)?.as_dataset())
        } else {
            None
        };
        timing.poison_s = started.elapsed().as_secs_f64();

        let with_poison = |d: &Dataset| match &poison {
            Some(p) => d.concat(p),
            None => Ok(d.clone()),
        };
        let attacked_set = with_poison(&stored)?;
        let attacked = fit(learner, &attacked_set.x, &attacked_set.y, lambda, &tc)?;
        let mut attacked_rec = self.record(
            learner,
            rate,
            Stage::Attacked,
            Defense::None,
            &attacked,
            Some(clean_wh),
            seed,
        )?;
        let poison_points = poison.as_ref().map_or(0, Dataset::len);
        attacked_rec.poison_points = poison_points;
        attacked_rec.elapsed_attack_s = millis(timing.fdi_s + timing.poison_s);

        let mut records = vec![base, attacked_rec];
        let attack_s = millis(timing.fdi_s + timing.poison_s);
        let mut defended = |defense: Defense, model: &LinearModel, residual: Option<f64>, spent: f64| {
            let mut rec = self.record(learner, rate, Stage::Defended, defense, model, Some(clean_wh), seed)?;
            rec.apg_residual = residual;
            rec.poison_points = poison_points;
            rec.elapsed_attack_s = attack_s;
            rec.elapsed_defense_s = millis(spent);
            records.push(rec);
            Ok::<(), Error>(())
        };

        let trim_cfg = |n_clean: usize| TrimConfig {
            n_clean: Some(n_clean),
            rate: None,
            max_iter: spec.trim.max_iter,
            restarts: spec.trim.restarts,
            seed,
            loss_tol: spec.trim.loss_tol,
            include_penalty: spec.trim.include_penalty,
            init: spec.trim.init,
        };

        let sanitized = if spec.defenses.apg {
            let started = Instant::now();
            let s = sanitize_frame(&stored, &spec.apg)?;
            let features = match spec.apg_output {
                ApgOutput::LowRank => s.clean,
                ApgOutput::RemoveSparse => s.repaired(&stored)?,
            };
            timing.apg_s = started.elapsed().as_secs_f64();
            let residual = (&features.x - &self.train.x).norm() / self.train.x.norm().max(f64::MIN_POSITIVE);
            let set = with_poison(&features)?;
            let model = fit(learner, &set.x, &set.y, lambda, &tc)?;
            defended(Defense::Apg, &model, Some(residual), timing.apg_s)?;
            Some((features, residual))
        } else {
            None
        };

        if spec.defenses.trim {
            let started = Instant::now();
            let model = trim_fit_with(&attacked_set, learner, lambda, &trim_cfg(stored.len()), &tc)?.model;
            timing.trim_s = started.elapsed().as_secs_f64();
            defended(Defense::Trim, &model, None, timing.trim_s)?;

            if let Some((features, residual)) = &sanitized {
                let started = Instant::now();
                let set = with_poison(features)?;
                let model = trim_fit_with(&set, learner, lambda, &trim_cfg(features.len()), &tc)?.model;
                let spent = timing.apg_s + started.elapsed().as_secs_f64();
                defended(Defense::ApgTrim, &model, Some(*residual), spent)?;
            }
        }
        Ok(CellOutput { records, timing })
    }
}

fn millis(s: f64) -> f64 {
    (s * 1000.0).round() / 1000.0
}

/// Test row whose actual consumption is closest to `wh`; ties go to the earlier row.
fn reference_row(test: &Dataset, params: &MinMax, wh: f64) -> Result<ReferenceRow> {
    let mut best: Option<ReferenceRow> = None;
    for i in 0..test.len() {
        let actual = params.denormalize(test.y[i])?;
        if best
            .as_ref()
            .is_none_or(|b| (actual - wh).abs() < (b.actual_wh - wh).abs())
        {
            best = Some(ReferenceRow {
                test_index: i,
                actual_wh: actual,
            });
        }
    }
    best.ok_or(Error::Empty("test split is empty"))
}

/// Run the whole grid. Errors here are configuration or data errors; a
/// failing cell becomes a `failed` record instead.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut frame = load_csv(&spec.dataset, &spec.target)?;
    if let Some(max) = spec.max_rows {
        frame.rows.truncate(max);
        frame.timestamps.truncate(max);
    }
    let norm = normalize_split(&frame, &spec.split)?;
    if norm.constant_target {
        return Err(Error::ConstantTarget(norm.target_params.min));
    }
    let (train, validation, test) = (norm.train(), norm.validation(), norm.test());
    let access = if spec.fdi.sensors.is_empty() {
        SensorAccessSet::all(train.dim())?
    } else {
        SensorAccessSet::from_names(&train.columns, &spec.fdi.sensors)?
    };
    let reference = reference_row(&test, &norm.target_params, spec.reference_wh)?;
    let ctx = Context {
        spec,
        hash: spec.config_hash()?,
        norm,
        train,
        validation,
        test,
        access,
        reference: reference.clone(),
    };

    let mut records = Vec::new();
    let mut timings = Vec::new();
    for &learner in &spec.models {
        for &rate in &spec.rates {
            match ctx.run_cell(learner, rate) {
                Ok(out) => {
                    records.extend(out.records);
                    timings.push(out.timing);
                }
                Err(e) => {
                    log::warn!("cell {learner} @ {rate} failed: {e}");
                    records.push(ReportRecord {
                        model: learner,
                        rate,
                        stage: Stage::Failed,
                        defense: Defense::None,
                        mse: f64::NAN,
                        validation_mse: f64::NAN,
                        prediction_wh: f64::NAN,
                        percent_change: f64::NAN,
                        apg_residual: None,
                        poison_points: 0,
                        elapsed_attack_s: 0.0,
                        elapsed_defense_s: 0.0,
                        seed: cell_seed(spec.seed, learner, rate),
                        config_hash: ctx.hash.clone(),
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    Ok(ExperimentReport {
        spec: spec.clone(),
        config_hash: ctx.hash,
        reference,
        records,
        timings,
        rows: frame.rows.len(),
        rejected_rows: frame.rejected,
    })
}

/// `%g`-style formatting with 6 significant digits.
pub fn fmt_g(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Column order of `report.csv`.
pub const REPORT_COLUMNS: [&str; 13] = [
    "model",
    "rate",
    "stage",
    "defense",
    "mse",
    "validation_mse",
    "prediction_wh",
    "percent_change",
    "apg_residual",
    "poison_points",
    "seed",
    "config_hash",
    "message",
];

pub const TIMING_COLUMNS: [&str; 8] = [
    "model",
    "rate",
    "fdi_s",
    "poison_s",
    "apg_s",
    "trim_s",
    "attack_s",
    "defense_s",
];

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn report_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            vec![
                r.model.name().to_string(),
                fmt_g(r.rate),
                r.stage.name().to_string(),
                r.defense.name().to_string(),
                fmt_g(r.mse),
                fmt_g(r.validation_mse),
                fmt_g(r.prediction_wh),
                fmt_g(r.percent_change),
                r.apg_residual.map(fmt_g).unwrap_or_default(),
                r.poison_points.to_string(),
                r.seed.to_string(),
                r.config_hash.clone(),
                r.message.clone(),
            ]
        })
        .collect();
    csv_bytes(&REPORT_COLUMNS, &rows)
}

/// Percent change of the attacked stage, one row per rate, one column per model.
pub fn table1_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let models = &report.spec.models;
    let mut header = vec!["rate".to_string(), "actual_wh".to_string()];
    header.extend(models.iter().map(|m| format!("{m}_clean_wh")));
    header.extend(models.iter().map(|m| m.name().to_string()));
    header.extend(models.iter().map(|m| format!("published_{m}")));
    let mut rates = report.spec.rates.clone();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let mut rows = Vec::new();
    for &rate in &rates {
        let mut row = vec![fmt_g(rate), fmt_g(report.reference.actual_wh)];
        let cell = |m: Learner, stage: Stage, f: fn(&ReportRecord) -> f64| {
            report.record(m, rate, stage).map(|r| fmt_g(f(r))).unwrap_or_default()
        };
        row.extend(models.iter().map(|&m| cell(m, Stage::NoAttack, |r| r.prediction_wh)));
        row.extend(models.iter().map(|&m| cell(m, Stage::Attacked, |r| r.percent_change)));
        let published = PUBLISHED_PERCENT_CHANGE.iter().find(|(r, _)| (r - rate).abs() < 1e-12);
        row.extend(models.iter().map(|&m| {
            let col = Learner::ALL.iter().position(|&l| l == m).expect("known learner");
            published.map(|(_, v)| fmt_g(v[col])).unwrap_or_default()
        }));
        rows.push(row);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(&header, &rows)
}

pub fn timing_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let ms = |s: f64| format!("{:.3}", millis(s));
    let rows: Vec<Vec<String>> = report
        .timings
        .iter()
        .map(|t| {
            vec![
                t.model.map(|m| m.name().to_string()).unwrap_or_default(),
                fmt_g(t.rate),
                ms(t.fdi_s),
                ms(t.poison_s),
                ms(t.apg_s),
                ms(t.trim_s),
                ms(t.fdi_s + t.poison_s),
                ms(t.apg_s + t.trim_s),
            ]
        })
        .collect();
    csv_bytes(&TIMING_COLUMNS, &rows)
}

pub fn run_json(report: &ExperimentReport) -> Result<Vec<u8>> {
    let doc = serde_json::json!({
        "software": {
            "name": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
        },
        "config_hash": report.config_hash,
        "spec": report.spec,
        "percent_change_definition": PERCENT_CHANGE_DEFINITION,
        "reference_row": report.reference,
        "rows_loaded": report.rows,
        "rows_rejected": report.rejected_rows,
        "records": report.records.len(),
        "failures": report.failures(),
        "timing_note": "wall-clock times are written to timing.csv only",
    });
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Files written by [`emit_report`].
pub const REPORT_FILES: [&str; 4] = ["report.csv", "table1.csv", "timing.csv", "run.json"];

/// Write the four report files into `dir`, creating it if needed.
pub fn emit_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if report.records.is_empty() {
        return Err(Error::Empty("no records to write"));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let contents = [
        report_csv(report)?,
        table1_csv(report)?,
        timing_csv(report)?,
        run_json(report)?,
    ];
    let mut written = Vec::new();
    for (name, bytes) in REPORT_FILES.iter().zip(contents) {
        let path = dir.join(name);
        write_file(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
