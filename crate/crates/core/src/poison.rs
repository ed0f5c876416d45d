//! Optimization-based training-set poisoning of linear regressors.
//!
//! The attacker controls `p = ⌊β·n⌋` extra training points and moves them,
//! one at a time, along the gradient of the clean-set loss with respect to
//! the point. The gradient flows through the retrained parameters and is
//! obtained by implicitly differentiating the learner's stationarity
//! conditions. Every step is projected onto `[0, 1]` and kept only if the
//! clean-set loss goes up.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fdi::MAX_RATE;
use crate::linalg::{solve_spd_strict, Moments};
use crate::regress::{fit_moments, Learner, LinearModel, Regularizer, TrainConfig};

/// Central-difference step for the fallback gradient.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnowledgeMode {
    WhiteBox,
    BlackBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearch {
    pub initial_step: f64,
    pub shrink_factor: f64,
    pub max_halvings: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            initial_step: 0.05,
            shrink_factor: 0.5,
            max_halvings: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoisonConfig {
    /// Poisoning rate β in `(0, 0.25]`.
    pub rate: f64,
    /// Stop when the clean-set loss changes by less than this over a sweep.
    pub tolerance: f64,
    pub max_outer_iter: usize,
    pub line_search: LineSearch,
    pub mode: KnowledgeMode,
    pub seed: u64,
    /// Also move the response of each poison point (features only by default).
    pub optimize_response: bool,
}

impl Default for PoisonConfig {
    fn default() -> Self {
        Self {
            rate: 0.1,
            tolerance: 1e-6,
            max_outer_iter: 50,
            line_search: LineSearch::default(),
            mode: KnowledgeMode::WhiteBox,
            seed: 0,
            optimize_response: false,
        }
    }
}

impl PoisonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= MAX_RATE) {
            return Err(Error::config(format!("poisoning rate {} outside (0, 0.25]", self.rate)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("poisoning tolerance must be positive"));
        }
        let ls = &self.line_search;
        if !(ls.initial_step > 0.0 && ls.shrink_factor > 0.0 && ls.shrink_factor < 1.0) {
            return Err(Error::config("line search needs step > 0 and shrink in (0, 1)"));
        }
        Ok(())
    }

    pub fn poison_count(&self, n: usize) -> usize {
        (self.rate * n as f64 + 1e-9).floor() as usize
    }
}

/// A training set whose row reads are counted, so black-box runs can prove
/// they never looked at it.
#[derive(Debug)]
pub struct ObservedDataset {
    data: Dataset,
    reads: AtomicUsize,
}

impl ObservedDataset {
    pub fn new(data: Dataset) -> Self {
        Self {
            data,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn read(&self) -> &Dataset {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.data
    }

    /// Row count is public knowledge (it bounds the attacker's budget) and is not logged.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> Dataset {
        self.data
    }
}

/// What the attacker knows about the victim.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackerKnowledge {
    pub mode: KnowledgeMode,
    pub learner: Learner,
    pub train_cfg: TrainConfig,
    /// Trained parameters: the victim's in white-box mode, estimated on the
    /// surrogate in black-box mode.
    pub params: LinearModel,
    /// The substitute training set (black-box only).
    pub surrogate: Option<Dataset>,
}

impl AttackerKnowledge {
    pub fn white_box(train: &ObservedDataset, learner: Learner, train_cfg: TrainConfig) -> Result<Self> {
        let data = train.read();
        let params = crate::regress::fit(learner, &data.x, &data.y, train_cfg.lambda, &train_cfg)?;
        Ok(Self {
            mode: KnowledgeMode::WhiteBox,
            learner,
            train_cfg,
            params,
            surrogate: None,
        })
    }

    pub fn regularizer(&self) -> Regularizer {
        self.learner.regularizer(self.train_cfg.lambda)
    }
}

/// Sample a substitute training set from data the defender did not train
/// on, and estimate the victim's parameters on it.
pub fn build_blackbox_surrogate(
    pool: &Dataset,
    learner: Learner,
    train_cfg: TrainConfig,
    seed: u64,
) -> Result<AttackerKnowledge> {
    if pool.len() < 50 {
        return Err(Error::PoolTooSmall(pool.len()));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let surrogate = pool.select(&order);
    let params = crate::regress::fit(learner, &surrogate.x, &surrogate.y, train_cfg.lambda, &train_cfg)?;
    Ok(AttackerKnowledge {
        mode: KnowledgeMode::BlackBox,
        learner,
        train_cfg,
        params,
        surrogate: Some(surrogate),
    })
}

/// The attacker's points and the history of the attack objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoisonSet {
    pub columns: Vec<String>,
    pub target: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Row of the attacker's training source each point was seeded from.
    pub provenance: Vec<usize>,
    /// Clean-set loss before the first sweep and after every sweep.
    pub loss_trajectory: Vec<f64>,
    pub outer_iterations: usize,
    pub accepted_steps: usize,
    /// Gradients that had to be taken by finite differences.
    pub fd_fallbacks: usize,
    /// Model the attacker trained on its base set plus these points.
    pub final_model: Option<LinearModel>,
}

impl PoisonSet {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn as_dataset(&self) -> Dataset {
        Dataset {
            columns: self.columns.clone(),
            target: self.target.clone(),
            x: self.x.clone(),
            y: self.y.clone(),
            source_rows: self.provenance.clone(),
        }
    }

    /// Header: features, target, `source_row`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.columns.clone();
        header.push(self.target.clone());
        header.push("source_row".into());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(r).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[r].to_string());
            rec.push(self.provenance[r].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads back the points written by [`PoisonSet::write_csv`]; the trajectory is not part of the CSV.
    pub fn read_csv<R: Read>(reader: R) -> Result<PoisonSet> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3 {
            return Err(Error::Empty("poison csv needs features, target and source_row"));
        }
        let d = header.len() - 2;
        let (mut xs, mut ys, mut prov) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let bad = || Error::config("malformed poison csv row");
            for (i, cell) in rec.iter().enumerate() {
                if i < d {
                    xs.push(cell.parse::<f64>().map_err(|_| bad())?);
                } else if i == d {
                    ys.push(cell.parse::<f64>().map_err(|_| bad())?);
                } else {
                    prov.push(cell.parse::<usize>().map_err(|_| bad())?);
                }
            }
        }
        let n = ys.len();
        Ok(PoisonSet {
            columns: header[..d].to_vec(),
            target: header[d].clone(),
            x: DMatrix::from_row_slice(n, d, &xs),
            y: DVector::from_vec(ys),
            provenance: prov,
            loss_trajectory: Vec::new(),
            outer_iterations: 0,
            accepted_steps: 0,
            fd_fallbacks: 0,
            final_model: None,
        })
    }

    pub fn trajectory_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.loss_trajectory)?)
    }
}

/// Seed `p` poison points by sampling training rows without replacement and
/// flipping their response to `1 − y`.
pub fn init_poison_points(train: &Dataset, p: usize, seed: u64) -> Result<PoisonSet> {
    if p == 0 {
        return Err(Error::Empty("no poison points requested"));
    }
    if train.is_empty() {
        return Err(Error::Empty("training set is empty"));
    }
    if p >= train.len() {
        return Err(Error::MajorityViolated {
            poison: p,
            clean: train.len(),
        });
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let picked = &order[..p];
    let x = train.x.select_rows(picked).map(|v| v.clamp(0.0, 1.0));
    let y = DVector::from_iterator(p, picked.iter().map(|&r| (1.0 - train.y[r]).clamp(0.0, 1.0)));
    Ok(PoisonSet {
        columns: train.columns.clone(),
        target: train.target.clone(),
        x,
        y,
        provenance: picked.to_vec(),
        loss_trajectory: Vec::new(),
        outer_iterations: 0,
        accepted_steps: 0,
        fd_fallbacks: 0,
        final_model: None,
    })
}

/// Mean squared error of `model` on the untainted set.
pub fn loss_on_clean(model: &LinearModel, clean: &Dataset) -> Result<f64> {
    if clean.is_empty() {
        return Err(Error::Empty("clean set is empty"));
    }
    let pred = crate::regress::predict(model, &clean.x)?;
    crate::regress::mse(&pred, &clean.y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMethod {
    Implicit,
    FiniteDifference,
}

/// `∂LF/∂x_c` and `∂LF/∂y_c` for one poison point.
#[derive(Clone, Debug, PartialEq)]
pub struct PoisonGradient {
    pub dx: DVector<f64>,
    pub dy: f64,
    pub method: GradientMethod,
}

/// Gradient of the clean-set loss with respect to row `row` of
/// `train_plus_poison`, where `model` is the learner's optimum on that set.
pub fn poison_gradient(
    train_plus_poison: &Dataset,
    row: usize,
    model: &LinearModel,
    clean: &Dataset,
    train_cfg: &TrainConfig,
) -> Result<PoisonGradient> {
    if row >= train_plus_poison.len() {
        return Err(Error::config(format!("poison row {row} out of range")));
    }
    if clean.is_empty() {
        return Err(Error::Empty("clean set is empty"));
    }
    if train_plus_poison.dim() != model.dim() || clean.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "poison gradient",
            expected: model.dim(),
            got: train_plus_poison.dim(),
        });
    }
    let objective = Objective {
        regularizer: model.regularizer,
        train_cfg: train_cfg.clone(),
        clean: clean.moments(),
    };
    let total = train_plus_poison.moments();
    let xc = train_plus_poison.row(row);
    let yc = train_plus_poison.y[row];
    match implicit_gradient(&total, &objective.clean, model, &xc, yc) {
        Some((dx, dy)) => Ok(PoisonGradient {
            dx,
            dy,
            method: GradientMethod::Implicit,
        }),
        None => {
            let (dx, dy) = objective.finite_difference(&total, model, &xc, yc, FD_STEP)?;
            Ok(PoisonGradient {
                dx,
                dy,
                method: GradientMethod::FiniteDifference,
            })
        }
    }
}

/// Implicit-function gradient. `None` when the stationarity system is singular.
///
/// With `θ = (w_A, b)` over the active weights `A` and `z = (x_A, 1)`, the
/// learner's optimum satisfies `F(θ) = (2/m)·Σ rᵢzᵢ + λ∇Ω = 0`. Solving
/// `H u = ∇_θ LF` with `H = ∂F/∂θ` gives
/// `∂LF/∂x_c = −(2/m)(r_c·u_w + w·(z_cᵀu))` and `∂LF/∂y_c = (2/m)·z_cᵀu`.
fn implicit_gradient(
    total: &Moments,
    clean: &Moments,
    model: &LinearModel,
    xc: &DVector<f64>,
    yc: f64,
) -> Option<(DVector<f64>, f64)> {
    let d = model.dim();
    let w = &model.weights;
    let b = model.bias;
    let active: Vec<usize> = match model.regularizer {
        Regularizer::Lasso(_) => (0..d).filter(|&j| w[j] != 0.0).collect(),
        _ => (0..d).collect(),
    };
    let k = active.len();
    let m = total.count;
    let ridge = match model.regularizer {
        Regularizer::Ridge(l) => l,
        _ => 0.0,
    };

    let mut h = DMatrix::zeros(k + 1, k + 1);
    for (a, &ja) in active.iter().enumerate() {
        for (c, &jc) in active.iter().enumerate() {
            h[(a, c)] = 2.0 / m * total.sxx[(ja, jc)];
        }
        h[(a, a)] += 2.0 * ridge;
        h[(a, k)] = 2.0 / m * total.sum_x[ja];
        h[(k, a)] = h[(a, k)];
    }
    h[(k, k)] = 2.0;

    let v = clean.count;
    let sxx_w = &clean.sxx * w;
    let mut g = DVector::zeros(k + 1);
    for (a, &ja) in active.iter().enumerate() {
        g[a] = 2.0 / v * (sxx_w[ja] + clean.sum_x[ja] * b - clean.sxy[ja]);
    }
    g[k] = 2.0 / v * (clean.sum_x.dot(w) + v * b - clean.sum_y);

    let u = solve_spd_strict(&h, &g)?;
    let z_dot_u: f64 = active.iter().enumerate().map(|(a, &j)| xc[j] * u[a]).sum::<f64>() + u[k];
    let r_c = w.dot(xc) + b - yc;
    let mut dx = w * (-2.0 / m * z_dot_u);
    for (a, &j) in active.iter().enumerate() {
        dx[j] -= 2.0 / m * r_c * u[a];
    }
    let dy = 2.0 / m * z_dot_u;
    Some((dx, dy))
}

struct Objective {
    regularizer: Regularizer,
    train_cfg: TrainConfig,
    clean: Moments,
}

impl Objective {
    fn refit(&self, total: &Moments, warm: Option<&DVector<f64>>) -> Result<LinearModel> {
        fit_moments(total, self.regularizer, &self.train_cfg, warm)
    }

    fn loss(&self, model: &LinearModel) -> f64 {
        self.clean.mse(&model.weights, model.bias)
    }

    fn loss_with_point(
        &self,
        total: &Moments,
        model: &LinearModel,
        xc: &DVector<f64>,
        yc: f64,
        x_new: &DVector<f64>,
        y_new: f64,
    ) -> Result<(f64, Moments, LinearModel)> {
        let mut trial = total.clone();
        trial.update(xc, yc, -1.0);
        trial.update(x_new, y_new, 1.0);
        let fitted = self.refit(&trial, Some(&model.weights))?;
        Ok((self.loss(&fitted), trial, fitted))
    }

    fn finite_difference(
        &self,
        total: &Moments,
        model: &LinearModel,
        xc: &DVector<f64>,
        yc: f64,
        h: f64,
    ) -> Result<(DVector<f64>, f64)> {
        let d = xc.len();
        let mut dx = DVector::zeros(d);
        for j in 0..d {
            let mut plus = xc.clone();
            plus[j] += h;
            let mut minus = xc.clone();
            minus[j] -= h;
            let (lp, _, _) = self.loss_with_point(total, model, xc, yc, &plus, yc)?;
            let (lm, _, _) = self.loss_with_point(total, model, xc, yc, &minus, yc)?;
            dx[j] = (lp - lm) / (2.0 * h);
        }
        let (lp, _, _) = self.loss_with_point(total, model, xc, yc, xc, yc + h)?;
        let (lm, _, _) = self.loss_with_point(total, model, xc, yc, xc, yc - h)?;
        Ok((dx, (lp - lm) / (2.0 * h)))
    }
}

/// Run the bi-level attack.
///
/// `train` is the set the victim will train on (possibly already corrupted
/// in transit). It is only read in white-box mode; black-box runs use the
/// surrogate held in `knowledge`. `clean_validation` is the untainted set
/// whose loss the attacker maximizes.
pub fn run_poisoning_attack(
    train: &ObservedDataset,
    clean_validation: &Dataset,
    knowledge: &AttackerKnowledge,
    cfg: &PoisonConfig,
) -> Result<PoisonSet> {
    cfg.validate()?;
    if knowledge.mode != cfg.mode {
        return Err(Error::config("attacker knowledge does not match the configured mode"));
    }
    if clean_validation.is_empty() {
        return Err(Error::Empty("clean validation set is empty"));
    }
    let base_set: &Dataset = match knowledge.mode {
        KnowledgeMode::WhiteBox => train.read(),
        KnowledgeMode::BlackBox => knowledge
            .surrogate
            .as_ref()
            .ok_or_else(|| Error::config("black-box knowledge without a surrogate set"))?,
    };
    if base_set.dim() != clean_validation.dim() {
        return Err(Error::DimensionMismatch {
            context: "validation features",
            expected: base_set.dim(),
            got: clean_validation.dim(),
        });
    }
    let objective = Objective {
        regularizer: knowledge.regularizer(),
        train_cfg: knowledge.train_cfg.clone(),
        clean: clean_validation.moments(),
    };
    let base = base_set.moments();
    let p = cfg.poison_count(train.len());

    if p == 0 {
        let model = objective.refit(&base, None)?;
        let lf = objective.loss(&model);
        return Ok(PoisonSet {
            columns: base_set.columns.clone(),
            target: base_set.target.clone(),
            x: DMatrix::zeros(0, base_set.dim()),
            y: DVector::zeros(0),
            provenance: Vec::new(),
            loss_trajectory: vec![lf],
            outer_iterations: 0,
            accepted_steps: 0,
            fd_fallbacks: 0,
            final_model: Some(model),
        });
    }

    let mut poison = init_poison_points(base_set, p, cfg.seed)?;
    let mut total = base.merged(&Moments::from_data(&poison.x, &poison.y));
    let mut model = objective.refit(&total, None)?;
    let mut lf = objective.loss(&model);
    poison.loss_trajectory.push(lf);

    let ls = &cfg.line_search;
    let is_lasso = matches!(objective.regularizer, Regularizer::Lasso(_));
    for _ in 0..cfg.max_outer_iter {
        let lf_start = lf;
        for c in 0..p {
            let xc = poison.x.row(c).transpose();
            let yc = poison.y[c];
            let mut grad = implicit_gradient(&total, &objective.clean, &model, &xc, yc);
            let mut used_fd = false;
            if grad.is_none() {
                grad = Some(objective.finite_difference(&total, &model, &xc, yc, FD_STEP)?);
                used_fd = true;
                poison.fd_fallbacks += 1;
            }
            loop {
                let (dx, dy) = grad.take().expect("gradient computed above");
                let dy = if cfg.optimize_response { dy } else { 0.0 };
                let norm = (dx.norm_squared() + dy * dy).sqrt();
                let mut accepted = false;
                if norm.is_finite() && norm > 0.0 {
                    let mut step = ls.initial_step;
                    for _ in 0..=ls.max_halvings {
                        let x_new = (&xc + &dx * (step / norm)).map(|v| v.clamp(0.0, 1.0));
                        let y_new = (yc + dy * step / norm).clamp(0.0, 1.0);
                        if x_new == xc && y_new == yc {
                            break;
                        }
                        let (lf_new, trial, fitted) =
                            objective.loss_with_point(&total, &model, &xc, yc, &x_new, y_new)?;
                        if lf_new > lf {
                            total = trial;
                            model = fitted;
                            lf = lf_new;
                            poison.x.set_row(c, &x_new.transpose());
                            poison.y[c] = y_new;
                            poison.accepted_steps += 1;
                            accepted = true;
                            break;
                        }
                        step *= ls.shrink_factor;
                    }
                }
                // the active set may have moved under the step; retry once with a numeric gradient
                if !accepted && is_lasso && !used_fd {
                    grad = Some(objective.finite_difference(&total, &model, &xc, yc, FD_STEP)?);
                    used_fd = true;
                    poison.fd_fallbacks += 1;
                    continue;
                }
                break;
            }
        }
        poison.outer_iterations += 1;
        poison.loss_trajectory.push(lf);
        if (lf - lf_start).abs() < cfg.tolerance {
            break;
        }
    }
    poison.final_model = Some(model);
    Ok(poison)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::fit;
    use crate::synth::{rng, LinearTask};

    fn task(n: usize, d: usize, seed: u64) -> (Dataset, Dataset) {
        let mut r = rng(seed);
        let t = LinearTask::random(d, 0.05, &mut r);
        (t.sample(n, &mut r), t.sample(n / 2, &mut r))
    }

    #[test]
    fn init_flips_responses() {
        let x = DMatrix::from_row_slice(3, 1, &[0.1, 0.2, 0.3]);
        let train = Dataset::new(x, DVector::from_vec(vec![0.3, 0.3, 0.3])).unwrap();
        let s = init_poison_points(&train, 1, 4).unwrap();
        assert!((s.y[0] - 0.7).abs() < 1e-15);
        let r = s.provenance[0];
        assert_eq!(s.x[(0, 0)], train.x[(r, 0)]);
        assert!(init_poison_points(&train, 0, 4).is_err());
        assert!(matches!(
            init_poison_points(&train, 3, 4),
            Err(Error::MajorityViolated { .. })
        ));
        assert_eq!(
            init_poison_points(&train, 2, 9).unwrap(),
            init_poison_points(&train, 2, 9).unwrap()
        );
    }

    #[test]
    fn loss_on_clean_examples() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let line = Dataset::new(x.clone(), DVector::from_vec(vec![0.0, 1.0])).unwrap();
        let perfect = fit(Learner::Ols, &line.x, &line.y, 0.0, &TrainConfig::default()).unwrap();
        assert!(loss_on_clean(&perfect, &line).unwrap() < 1e-24);
        let halves = Dataset::new(x.clone(), DVector::from_vec(vec![0.5, 0.5])).unwrap();
        assert_eq!(loss_on_clean(&LinearModel::constant(1, 0.5), &halves).unwrap(), 0.0);
        let ones = Dataset::new(x, DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(loss_on_clean(&LinearModel::constant(1, 0.0), &ones).unwrap(), 1.0);
        let empty = Dataset::new(DMatrix::zeros(0, 1), DVector::zeros(0)).unwrap();
        assert!(loss_on_clean(&perfect, &empty).is_err());
    }

    #[test]
    fn huge_ridge_makes_feature_gradient_vanish() {
        let (train, val) = task(40, 3, 1);
        let cfg = TrainConfig::with_lambda(1e9);
        let model = fit(Learner::Ridge, &train.x, &train.y, 1e9, &cfg).unwrap();
        let g = poison_gradient(&train, 0, &model, &val, &cfg).unwrap();
        assert_eq!(g.method, GradientMethod::Implicit);
        assert!(g.dx.amax() < 1e-6, "{}", g.dx.amax());
    }

    #[test]
    fn singular_system_falls_back_to_finite_differences() {
        // duplicated column makes the OLS stationarity system singular
        let (mut train, val) = task(30, 2, 2);
        let col = train.x.column(0).clone_owned();
        train.x.set_column(1, &col);
        let mut val = val;
        let vcol = val.x.column(0).clone_owned();
        val.x.set_column(1, &vcol);
        let cfg = TrainConfig::default();
        let model = fit(Learner::Ols, &train.x, &train.y, 0.0, &cfg).unwrap();
        let g = poison_gradient(&train, 3, &model, &val, &cfg).unwrap();
        assert_eq!(g.method, GradientMethod::FiniteDifference);
        assert!(g.dx.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn no_poison_reproduces_clean_model() {
        let (train, val) = task(30, 3, 3);
        let tc = TrainConfig::with_lambda(0.01);
        let clean = fit(Learner::Ridge, &train.x, &train.y, 0.01, &tc).unwrap();
        let observed = ObservedDataset::new(train);
        let know = AttackerKnowledge::white_box(&observed, Learner::Ridge, tc).unwrap();
        // 0.02 * 30 < 1 point
        let cfg = PoisonConfig {
            rate: 0.02,
            ..Default::default()
        };
        let set = run_poisoning_attack(&observed, &val, &know, &cfg).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.final_model.as_ref(), Some(&clean));
        assert_eq!(set.loss_trajectory.len(), 1);
        assert!((set.loss_trajectory[0] - loss_on_clean(&clean, &val).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn attack_raises_loss_and_stays_in_box() {
        let (train, val) = task(200, 2, 4);
        let tc = TrainConfig::default();
        let observed = ObservedDataset::new(train.clone());
        let know = AttackerKnowledge::white_box(&observed, Learner::Ols, tc.clone()).unwrap();
        let cfg = PoisonConfig {
            rate: 0.1,
            max_outer_iter: 10,
            ..Default::default()
        };
        let set = run_poisoning_attack(&observed, &val, &know, &cfg).unwrap();
        assert_eq!(set.len(), 20);
        assert!(set.x.iter().chain(set.y.iter()).all(|v| (0.0..=1.0).contains(v)));
        assert!(set.loss_trajectory.windows(2).all(|w| w[1] >= w[0]));
        // independent re-evaluation of the final loss
        let all = train.concat(&set.as_dataset()).unwrap();
        let m = fit(Learner::Ols, &all.x, &all.y, 0.0, &tc).unwrap();
        let lf = loss_on_clean(&m, &val).unwrap();
        assert!((lf - set.loss_trajectory.last().unwrap()).abs() < 1e-9);
        assert!(lf > set.loss_trajectory[0]);
    }

    #[test]
    fn black_box_never_reads_the_true_training_set() {
        let (train, val) = task(200, 3, 5);
        let (pool, _) = task(120, 3, 6);
        let observed = ObservedDataset::new(train);
        let know = build_blackbox_surrogate(&pool, Learner::Ridge, TrainConfig::with_lambda(0.01), 1).unwrap();
        let cfg = PoisonConfig {
            mode: KnowledgeMode::BlackBox,
            max_outer_iter: 3,
            ..Default::default()
        };
        let set = run_poisoning_attack(&observed, &val, &know, &cfg).unwrap();
        assert_eq!(observed.reads(), 0);
        assert_eq!(set.len(), 20);
        // mode mismatch is rejected
        let wb = PoisonConfig {
            mode: KnowledgeMode::WhiteBox,
            ..cfg
        };
        assert!(run_poisoning_attack(&observed, &val, &know, &wb).is_err());
    }

    #[test]
    fn surrogate_errors_and_determinism() {
        let (pool, _) = task(60, 2, 7);
        let tc = TrainConfig::default();
        let a = build_blackbox_surrogate(&pool, Learner::Ols, tc.clone(), 3).unwrap();
        let b = build_blackbox_surrogate(&pool, Learner::Ols, tc.clone(), 3).unwrap();
        assert_eq!(a, b);
        let empty = Dataset::new(DMatrix::zeros(0, 2), DVector::zeros(0)).unwrap();
        assert!(matches!(
            build_blackbox_surrogate(&empty, Learner::Ols, tc, 3),
            Err(Error::PoolTooSmall(0))
        ));
    }

    #[test]
    fn poison_csv_round_trip() {
        let (train, _) = task(40, 3, 8);
        let s = init_poison_points(&train, 4, 1).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = PoisonSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!((back.x, back.y, back.provenance), (s.x, s.y, s.provenance));
    }
}
