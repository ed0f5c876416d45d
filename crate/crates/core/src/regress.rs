//! Linear regression fitters: OLS, ridge and lasso.
//!
//! All three minimize the mean squared residual plus an optional penalty on
//! the weights; the bias is never penalized. Fitting goes through the first
//! and second moments of the data ([`Moments`]) so that a model is a pure
//! function of the rows it saw.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_psd, solve_spd_strict, Moments};

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-3;
pub const DEFAULT_LASSO_LAMBDA: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    Ols,
    Ridge,
    Lasso,
}

impl Learner {
    pub const ALL: [Learner; 3] = [Learner::Ols, Learner::Ridge, Learner::Lasso];

    pub fn name(self) -> &'static str {
        match self {
            Learner::Ols => "ols",
            Learner::Ridge => "ridge",
            Learner::Lasso => "lasso",
        }
    }

    pub fn regularizer(self, lambda: f64) -> Regularizer {
        match self {
            Learner::Ols => Regularizer::None,
            Learner::Ridge => Regularizer::Ridge(lambda),
            Learner::Lasso => Regularizer::Lasso(lambda),
        }
    }

    pub fn default_lambda(self) -> f64 {
        match self {
            Learner::Ols => 0.0,
            Learner::Ridge => DEFAULT_RIDGE_LAMBDA,
            Learner::Lasso => DEFAULT_LASSO_LAMBDA,
        }
    }
}

impl std::str::FromStr for Learner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ols" => Ok(Learner::Ols),
            "ridge" => Ok(Learner::Ridge),
            "lasso" => Ok(Learner::Lasso),
            other => Err(Error::config(format!("unknown learner `{other}`"))),
        }
    }
}

impl std::fmt::Display for Learner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "lambda", rename_all = "lowercase")]
pub enum Regularizer {
    None,
    Ridge(f64),
    Lasso(f64),
}

impl Regularizer {
    pub fn lambda(&self) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::Ridge(l) | Regularizer::Lasso(l) => l,
        }
    }

    pub fn learner(&self) -> Learner {
        match self {
            Regularizer::None => Learner::Ols,
            Regularizer::Ridge(_) => Learner::Ridge,
            Regularizer::Lasso(_) => Learner::Lasso,
        }
    }

    pub fn penalty(&self, w: &DVector<f64>) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::Ridge(l) => l * w.norm_squared(),
            Regularizer::Lasso(l) => l * w.lp_norm(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lasso_max_iter: usize,
    pub lasso_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            lasso_max_iter: 10_000,
            lasso_tol: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda must be non-negative"));
        }
        if self.lasso_max_iter == 0 || !(self.lasso_tol > 0.0) {
            return Err(Error::config("lasso needs max_iter >= 1 and tol > 0"));
        }
        Ok(())
    }
}

/// `f(x) = wᵀx + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: DVector<f64>,
    pub bias: f64,
    pub regularizer: Regularizer,
    /// Always true for the closed-form fitters.
    pub converged: bool,
    /// Coordinate-descent sweeps (0 for closed form).
    pub iterations: usize,
    /// The Gram matrix was singular and the minimum-norm solution was used.
    pub pseudoinverse: bool,
}

impl LinearModel {
    pub fn constant(dim: usize, bias: f64) -> Self {
        Self {
            weights: DVector::zeros(dim),
            bias,
            regularizer: Regularizer::None,
            converged: true,
            iterations: 0,
            pseudoinverse: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn learner(&self) -> Learner {
        self.regularizer.learner()
    }

    pub fn predict_one(&self, x: &DVector<f64>) -> f64 {
        self.weights.dot(x) + self.bias
    }

    /// Training objective: mean squared residual plus penalty.
    pub fn objective(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        let p = predict(self, x)?;
        Ok(mse(&p, y)? + self.regularizer.penalty(&self.weights))
    }

    pub fn objective_from_moments(&self, m: &Moments) -> f64 {
        m.mse(&self.weights, self.bias) + self.regularizer.penalty(&self.weights)
    }
}

fn check_xy(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Empty("training data has no rows"));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "design matrix vs response",
            expected: x.nrows(),
            got: y.len(),
        });
    }
    Ok(())
}

pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearModel> {
    check_xy(x, y)?;
    fit_moments(
        &Moments::from_data(x, y),
        Regularizer::None,
        &TrainConfig::default(),
        None,
    )
}

pub fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LinearModel> {
    check_xy(x, y)?;
    fit_moments(
        &Moments::from_data(x, y),
        Regularizer::Ridge(lambda),
        &TrainConfig::with_lambda(lambda),
        None,
    )
}

pub fn fit_lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, cfg: &TrainConfig) -> Result<LinearModel> {
    check_xy(x, y)?;
    fit_moments(&Moments::from_data(x, y), Regularizer::Lasso(lambda), cfg, None)
}

pub fn fit(
    learner: Learner,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<LinearModel> {
    check_xy(x, y)?;
    fit_moments(&Moments::from_data(x, y), learner.regularizer(lambda), cfg, None)
}

/// Fit from precomputed moments. `warm` seeds lasso coordinate descent and
/// is ignored by the closed-form fitters.
pub fn fit_moments(
    m: &Moments,
    regularizer: Regularizer,
    cfg: &TrainConfig,
    warm: Option<&DVector<f64>>,
) -> Result<LinearModel> {
    if m.count <= 0.0 {
        return Err(Error::Empty("training data has no rows"));
    }
    let lambda = regularizer.lambda();
    if !(lambda >= 0.0) {
        return Err(Error::config("lambda must be non-negative"));
    }
    let (cov, cxy) = m.centered();
    let d = m.dim();
    let (w, converged, iterations, pinv) = match regularizer {
        Regularizer::None => {
            let (w, pinv) = solve_psd(&cov, &cxy)?;
            (w, true, 0, pinv)
        }
        Regularizer::Ridge(l) => {
            let a = &cov + DMatrix::identity(d, d) * l;
            let (w, pinv) = solve_psd(&a, &cxy)?;
            (w, true, 0, pinv)
        }
        Regularizer::Lasso(l) => {
            cfg.validate()?;
            let start = match warm {
                Some(w0) if w0.len() == d => w0.clone(),
                _ => DVector::zeros(d),
            };
            let (w, converged, iters) =
                lasso_coordinate_descent(&cov, &cxy, l, start, cfg.lasso_max_iter, cfg.lasso_tol);
            if !converged {
                log::debug!("lasso stopped after {iters} sweeps without converging");
            }
            (w, converged, iters, false)
        }
    };
    let bias = m.mean_y() - w.dot(&m.mean_x());
    Ok(LinearModel {
        weights: w,
        bias,
        regularizer,
        converged,
        iterations,
        pseudoinverse: pinv,
    })
}

/// Cyclic coordinate descent on `wᵀCw − 2cᵀw + λ‖w‖₁` (the centered lasso
/// objective). Stops when the largest coordinate move in a sweep is below `tol`.
fn lasso_coordinate_descent(
    cov: &DMatrix<f64>,
    cxy: &DVector<f64>,
    lambda: f64,
    mut w: DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> (DVector<f64>, bool, usize) {
    let d = w.len();
    // cw tracks C·w so each coordinate update is O(d)
    let mut cw = cov * &w;
    for sweep in 1..=max_iter {
        let mut max_delta = 0.0_f64;
        for j in 0..d {
            let cjj = cov[(j, j)];
            let old = w[j];
            let new = if cjj <= 0.0 {
                0.0
            } else {
                let rho = cxy[j] - (cw[j] - cjj * old);
                soft(2.0 * rho, lambda) / (2.0 * cjj)
            };
            let delta = new - old;
            if delta != 0.0 {
                w[j] = new;
                cw.axpy(delta, &cov.column(j), 1.0);
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < tol {
            return (w, true, sweep);
        }
        if sweep % POLISH_EVERY == 0 {
            if let Some(exact) = polish(cov, cxy, lambda, &w) {
                return (exact, true, sweep);
            }
        }
    }
    (w, false, max_iter)
}

const POLISH_EVERY: usize = 10;

/// Small active-set search seeded with the support and signs of `w`: solve
/// the stationarity conditions on the support, drop coordinates whose sign
/// flips, admit the worst violator of the zero-coordinate condition. Returns
/// a point only once it satisfies the full optimality conditions, in which
/// case it is the exact minimizer.
fn polish(cov: &DMatrix<f64>, cxy: &DVector<f64>, lambda: f64, w: &DVector<f64>) -> Option<DVector<f64>> {
    let d = w.len();
    let mut sign: Vec<f64> = w.iter().map(|&v| if v == 0.0 { 0.0 } else { v.signum() }).collect();
    for _ in 0..2 * d + 2 {
        let active: Vec<usize> = (0..d).filter(|&j| sign[j] != 0.0).collect();
        let k = active.len();
        let mut out = DVector::zeros(d);
        if k > 0 {
            let a = DMatrix::from_fn(k, k, |r, c| cov[(active[r], active[c])]);
            let rhs = DVector::from_fn(k, |r, _| cxy[active[r]] - 0.5 * lambda * sign[active[r]]);
            let sol = solve_spd_strict(&a, &rhs)?;
            let mut flipped = false;
            for (r, &j) in active.iter().enumerate() {
                if sol[r] == 0.0 || sol[r].signum() != sign[j] {
                    sign[j] = 0.0;
                    flipped = true;
                }
                out[j] = sol[r];
            }
            if flipped {
                continue;
            }
        }
        let grad = (cov * &out - cxy) * 2.0;
        let slack = lambda * (1.0 + 1e-9);
        let worst = (0..d)
            .filter(|&j| sign[j] == 0.0 && grad[j].abs() > slack)
            .max_by(|&i, &j| grad[i].abs().total_cmp(&grad[j].abs()));
        match worst {
            None => return Some(out),
            Some(j) => sign[j] = -grad[j].signum(),
        }
    }
    None
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Smallest lasso penalty that zeroes every weight.
pub fn lasso_lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    check_xy(x, y)?;
    let (_, cxy) = Moments::from_data(x, y).centered();
    Ok(cxy.iter().map(|c| (2.0 * c).abs()).fold(0.0, f64::max))
}

pub fn predict(model: &LinearModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "predict features",
            expected: model.dim(),
            got: x.ncols(),
        });
    }
    Ok(x * &model.weights + DVector::from_element(x.nrows(), model.bias))
}

pub fn mse(predictions: &DVector<f64>, targets: &DVector<f64>) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("mse of empty vectors"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "mse",
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    Ok((predictions - targets).norm_squared() / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn ols_interpolates_a_line() {
        let m = fit_ols(&col(&[0.0, 1.0]), &vec(&[0.0, 1.0])).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        assert!(m.bias.abs() < 1e-12);
    }

    #[test]
    fn ols_duplicate_x_predicts_mean() {
        let m = fit_ols(&col(&[1.0, 1.0]), &vec(&[0.0, 2.0])).unwrap();
        assert!(m.pseudoinverse);
        assert_eq!(m.weights[0], 0.0);
        let p = predict(&m, &col(&[1.0])).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_one_dimensional_closed_form() {
        let m = fit_ridge(&col(&[-1.0, 1.0]), &vec(&[-1.0, 1.0]), 1.0).unwrap();
        assert!((m.weights[0] - 0.5).abs() < 1e-14);
        assert!(m.bias.abs() < 1e-14);
    }

    #[test]
    fn ridge_heavy_shrinkage() {
        let x = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        let y = DVector::from_fn(30, |i, _| (i % 5) as f64 / 4.0);
        let m = fit_ridge(&x, &y, 1e6).unwrap();
        assert!(m.weights.norm() < 1e-3);
        assert!((m.bias - y.mean()).abs() < 1e-3);
    }

    #[test]
    fn lasso_above_lambda_max_is_all_zero() {
        let x = DMatrix::from_fn(25, 3, |i, j| ((i * 5 + j * 2) % 9) as f64 / 8.0);
        let y = DVector::from_fn(25, |i, _| x[(i, 0)] * 0.7 + 0.1);
        let lmax = lasso_lambda_max(&x, &y).unwrap();
        let m = fit_lasso(&x, &y, lmax * 1.0001, &TrainConfig::default()).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert!((m.bias - y.mean()).abs() < 1e-14);
    }

    #[test]
    fn lasso_one_dimensional_is_soft_thresholded_ols() {
        let x = col(&[0.1, 0.4, 0.5, 0.9, 0.3]);
        let y = vec(&[0.2, 0.5, 0.4, 0.8, 0.35]);
        let lambda = 0.01;
        let m = fit_lasso(&x, &y, lambda, &TrainConfig::default()).unwrap();
        let (cov, cxy) = Moments::from_data(&x, &y).centered();
        let expected = soft(2.0 * cxy[0], lambda) / (2.0 * cov[(0, 0)]);
        assert!((m.weights[0] - expected).abs() < 1e-10);
    }

    #[test]
    fn predict_examples() {
        let mut m = LinearModel::constant(1, 0.5);
        assert_eq!(predict(&m, &col(&[3.0, -2.0])).unwrap(), vec(&[0.5, 0.5]));
        m = LinearModel::constant(2, 0.0);
        m.weights = vec(&[1.0, 1.0]);
        let x = DMatrix::from_row_slice(1, 2, &[0.2, 0.3]);
        assert!((predict(&m, &x).unwrap()[0] - 0.5).abs() < 1e-15);
        let line = fit_ols(&col(&[0.0, 1.0]), &vec(&[0.0, 1.0])).unwrap();
        assert!((predict(&line, &col(&[0.25])).unwrap()[0] - 0.25).abs() < 1e-12);
        assert!(predict(&line, &DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&vec(&[0.3, 0.4]), &vec(&[0.3, 0.4])).unwrap(), 0.0);
        assert_eq!(mse(&vec(&[0.0, 0.0]), &vec(&[1.0, 1.0])).unwrap(), 1.0);
        assert!((mse(&vec(&[0.1, 0.3]), &vec(&[0.2, 0.1])).unwrap() - 0.025).abs() < 1e-15);
        assert!(mse(&vec(&[]), &vec(&[])).is_err());
        assert!(mse(&vec(&[1.0]), &vec(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn input_errors() {
        assert!(fit_ols(&DMatrix::zeros(0, 2), &vec(&[])).is_err());
        assert!(fit_ols(&DMatrix::zeros(3, 2), &vec(&[1.0])).is_err());
        assert!(fit_ridge(&col(&[1.0]), &vec(&[1.0]), -1.0).is_err());
    }

    #[test]
    fn lasso_reports_non_convergence() {
        let x = DMatrix::from_fn(40, 4, |i, j| ((i * 13 + j * 7) % 17) as f64 / 16.0);
        let y = DVector::from_fn(40, |i, _| ((i * 3) % 7) as f64 / 6.0);
        let cfg = TrainConfig {
            lasso_max_iter: 1,
            lasso_tol: 1e-300,
            ..Default::default()
        };
        let m = fit_lasso(&x, &y, 1e-4, &cfg).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 1);
    }
}
