//! TRIM: trimmed regression that alternates between keeping the `n`
//! lowest-residual rows and refitting on them.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::regress::{fit, predict, Learner, LinearModel, TrainConfig};

/// How each restart picks its initial size-`n` subset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrimInit {
    /// Uniformly random size-`n` subset.
    RandomSubset,
    /// Fit on `d + 1` random rows, then keep the `n` rows it fits best.
    Elemental,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrimConfig {
    /// Number of rows assumed legitimate. When `None`, it is derived from `rate`.
    pub n_clean: Option<usize>,
    /// Poisoning rate β used to derive `n_clean` from the row count.
    pub rate: Option<f64>,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    pub loss_tol: f64,
    /// Whether the trimmed loss includes the learner's penalty term.
    pub include_penalty: bool,
    pub init: TrimInit,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self {
            n_clean: None,
            rate: None,
            max_iter: 100,
            restarts: 5,
            seed: 0,
            loss_tol: 1e-9,
            include_penalty: true,
            init: TrimInit::Elemental,
        }
    }
}

impl TrimConfig {
    /// Resolve the subset size for a data set of `total` rows.
    ///
    /// From a rate, `n` is the largest count with `n + ⌊β·n⌋ ≤ total`.
    pub fn resolve_n(&self, total: usize) -> Result<usize> {
        let n = match (self.n_clean, self.rate) {
            (Some(n), _) => n,
            (None, Some(beta)) => {
                if !(0.0..=1.0).contains(&beta) {
                    return Err(Error::config(format!("trim rate {beta} outside [0, 1]")));
                }
                (0..=total)
                    .rev()
                    .find(|&n| n + (beta * n as f64 + 1e-9).floor() as usize <= total)
                    .unwrap_or(0)
            }
            (None, None) => return Err(Error::config("trim needs n_clean or rate")),
        };
        if n == 0 || n > total {
            return Err(Error::config(format!("n_clean {n} out of range for {total} rows")));
        }
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::config("trim needs at least one restart"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("trim max_iter must be positive"));
        }
        if !(self.loss_tol >= 0.0) {
            return Err(Error::config("trim loss_tol must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimResult {
    pub model: LinearModel,
    /// Sorted row indices of the retained subset.
    pub selected: Vec<usize>,
    /// Trimmed loss after the initial fit and after every iteration.
    pub loss_trajectory: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub restart: usize,
}

impl TrimResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trajectory.last().expect("trajectory holds the initial loss")
    }

    pub fn selected_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.selected)?)
    }
}

struct Trimmer<'a> {
    data: &'a Dataset,
    learner: Learner,
    lambda: f64,
    train_cfg: TrainConfig,
    include_penalty: bool,
}

impl Trimmer<'_> {
    fn fit_subset(&self, rows: &[usize]) -> Result<LinearModel> {
        let sub = self.data.select(rows);
        fit(self.learner, &sub.x, &sub.y, self.lambda, &self.train_cfg)
    }

    fn squared_residuals(&self, model: &LinearModel) -> Result<Vec<f64>> {
        let pred = predict(model, &self.data.x)?;
        Ok(pred
            .iter()
            .zip(self.data.y.iter())
            .map(|(p, y)| (p - y) * (p - y))
            .collect())
    }

    fn trimmed_loss(&self, model: &LinearModel, sq: &[f64], rows: &[usize]) -> f64 {
        let mse = rows.iter().map(|&r| sq[r]).sum::<f64>() / rows.len() as f64;
        if self.include_penalty {
            mse + model.regularizer.penalty(&model.weights)
        } else {
            mse
        }
    }

    /// The `n` rows with the smallest squared residual, ties by row index, sorted.
    fn lowest(&self, sq: &[f64], n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.sort_by(|&a, &b| sq[a].partial_cmp(&sq[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        order.truncate(n);
        order.sort_unstable();
        order
    }

    fn initial_subset(&self, init: TrimInit, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let total = self.data.len();
        let mut rows = match init {
            TrimInit::RandomSubset => sample(rng, total, n).into_vec(),
            TrimInit::Elemental => {
                let k = (self.data.dim() + 1).min(n);
                let mut seed_rows = sample(rng, total, k).into_vec();
                seed_rows.sort_unstable();
                let seed_model = self.fit_subset(&seed_rows)?;
                return Ok(self.lowest(&self.squared_residuals(&seed_model)?, n));
            }
        };
        rows.sort_unstable();
        Ok(rows)
    }

    fn run(&self, initial: Vec<usize>, cfg: &TrimConfig, restart: usize) -> Result<TrimResult> {
        let n = initial.len();
        let mut selected = initial;
        let mut model = self.fit_subset(&selected)?;
        let mut sq = self.squared_residuals(&model)?;
        let mut loss = self.trimmed_loss(&model, &sq, &selected);
        let mut trajectory = vec![loss];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < cfg.max_iter {
            iterations += 1;
            let next = self.lowest(&sq, n);
            if next == selected {
                // refitting the same subset reproduces the same model
                trajectory.push(loss);
                converged = true;
                break;
            }
            let next_model = self.fit_subset(&next)?;
            let next_sq = self.squared_residuals(&next_model)?;
            let next_loss = self.trimmed_loss(&next_model, &next_sq, &next);
            if next_loss > loss {
                // only rounding can push the loss up; keep the better state
                trajectory.push(loss);
                converged = true;
                break;
            }
            let delta = loss - next_loss;
            selected = next;
            model = next_model;
            sq = next_sq;
            loss = next_loss;
            trajectory.push(loss);
            if delta <= cfg.loss_tol {
                converged = true;
                break;
            }
        }
        Ok(TrimResult {
            model,
            selected,
            loss_trajectory: trajectory,
            converged,
            iterations,
            restart,
        })
    }
}

/// Fit `learner` robustly on `data`, best of `cfg.restarts` random starts.
pub fn trim_fit(data: &Dataset, learner: Learner, lambda: f64, cfg: &TrimConfig) -> Result<TrimResult> {
    trim_fit_with(data, learner, lambda, cfg, &TrainConfig::with_lambda(lambda))
}

pub fn trim_fit_with(
    data: &Dataset,
    learner: Learner,
    lambda: f64,
    cfg: &TrimConfig,
    train_cfg: &TrainConfig,
) -> Result<TrimResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("trim input has no rows"));
    }
    let total = data.len();
    let n = cfg.resolve_n(total)?;
    let trimmer = Trimmer {
        data,
        learner,
        lambda,
        train_cfg: TrainConfig {
            lambda,
            ..train_cfg.clone()
        },
        include_penalty: cfg.include_penalty,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<TrimResult> = None;
    for restart in 0..cfg.restarts {
        let initial = trimmer.initial_subset(cfg.init, n, &mut rng)?;
        let result = trimmer.run(initial, cfg, restart)?;
        // strict comparison keeps the lowest restart index on ties
        if best.as_ref().is_none_or(|b| result.final_loss() < b.final_loss()) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// TRIM-defended and undefended test errors for one poisoned training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseOutcome {
    pub trim: TrimResult,
    pub defended_mse: f64,
    pub undefended_mse: f64,
}

pub fn defended_pipeline(
    poisoned_train: &Dataset,
    test: &Dataset,
    learner: Learner,
    lambda: f64,
    cfg: &TrimConfig,
) -> Result<DefenseOutcome> {
    if test.is_empty() {
        return Err(Error::Empty("test set is empty"));
    }
    let trim = trim_fit(poisoned_train, learner, lambda, cfg)?;
    let tc = TrainConfig::with_lambda(lambda);
    let plain = fit(learner, &poisoned_train.x, &poisoned_train.y, lambda, &tc)?;
    let defended_mse = crate::regress::mse(&predict(&trim.model, &test.x)?, &test.y)?;
    let undefended_mse = crate::regress::mse(&predict(&plain, &test.x)?, &test.y)?;
    Ok(DefenseOutcome {
        trim,
        defended_mse,
        undefended_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn line_with_outliers() -> Dataset {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let mut ys: Vec<f64> = xs.iter().map(|x| 0.2 + 0.5 * x).collect();
        ys[3] = 0.95;
        ys[7] = 0.0;
        Dataset::new(DMatrix::from_vec(10, 1, xs), DVector::from_vec(ys)).unwrap()
    }

    #[test]
    fn drops_gross_outliers() {
        let data = line_with_outliers();
        let cfg = TrimConfig {
            n_clean: Some(8),
            ..Default::default()
        };
        let r = trim_fit(&data, Learner::Ols, 0.0, &cfg).unwrap();
        assert_eq!(r.selected, vec![0, 1, 2, 4, 5, 6, 8, 9]);
        assert!((r.model.weights[0] - 0.5).abs() < 1e-10);
        assert!((r.model.bias - 0.2).abs() < 1e-10);
        assert!(r.final_loss() < 1e-20);
    }

    #[test]
    fn full_subset_is_a_plain_fit() {
        let data = line_with_outliers();
        let cfg = TrimConfig {
            n_clean: Some(10),
            ..Default::default()
        };
        let r = trim_fit(&data, Learner::Ridge, 0.01, &cfg).unwrap();
        assert_eq!(r.iterations, 1);
        let plain = fit(Learner::Ridge, &data.x, &data.y, 0.01, &TrainConfig::with_lambda(0.01)).unwrap();
        assert_eq!(r.model, plain);
    }

    #[test]
    fn subset_size_from_rate() {
        let cfg = TrimConfig {
            rate: Some(0.1),
            ..Default::default()
        };
        assert_eq!(cfg.resolve_n(330).unwrap(), 300);
        assert_eq!(cfg.resolve_n(10).unwrap(), 9);
        let bad = TrimConfig {
            n_clean: Some(11),
            ..Default::default()
        };
        assert!(bad.resolve_n(10).is_err());
        let zero = TrimConfig {
            n_clean: Some(0),
            ..Default::default()
        };
        assert!(zero.resolve_n(10).is_err());
        assert!(TrimConfig::default().resolve_n(10).is_err());
        assert!(TrimConfig {
            restarts: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn refit_on_selection_is_idempotent() {
        let data = line_with_outliers();
        for learner in Learner::ALL {
            let cfg = TrimConfig {
                n_clean: Some(7),
                seed: 3,
                ..Default::default()
            };
            let lambda = learner.default_lambda();
            let r = trim_fit(&data, learner, lambda, &cfg).unwrap();
            let sub = data.select(&r.selected);
            let again = fit(learner, &sub.x, &sub.y, lambda, &TrainConfig::with_lambda(lambda)).unwrap();
            assert_eq!(again, r.model);
            assert!(r.loss_trajectory.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
