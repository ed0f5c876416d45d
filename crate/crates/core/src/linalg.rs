//! Small dense linear-algebra helpers shared by the fitters and solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Cholesky pivots below this (squared, relative to the largest) are treated
/// as a singular system.
const SINGULAR_PIVOT_RATIO: f64 = 1e-13;

/// Relative cutoff for singular values in the pseudoinverse fallback.
const PINV_RCOND: f64 = 1e-12;

/// First and second moments of a design matrix and response.
///
/// Every fitter works from these, so a model depends only on the moments of
/// the rows it was trained on. The attack keeps them updated in place while
/// it moves poison points around.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub count: f64,
    pub sum_x: DVector<f64>,
    pub sum_y: f64,
    pub sxx: DMatrix<f64>,
    pub sxy: DVector<f64>,
    pub syy: f64,
}

impl Moments {
    pub fn zeros(dim: usize) -> Self {
        Self {
            count: 0.0,
            sum_x: DVector::zeros(dim),
            sum_y: 0.0,
            sxx: DMatrix::zeros(dim, dim),
            sxy: DVector::zeros(dim),
            syy: 0.0,
        }
    }

    pub fn from_data(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let ones = DVector::from_element(x.nrows(), 1.0);
        Self {
            count: x.nrows() as f64,
            sum_x: x.tr_mul(&ones),
            sum_y: y.sum(),
            sxx: x.tr_mul(x),
            sxy: x.tr_mul(y),
            syy: y.dot(y),
        }
    }

    /// Moments of the given rows, taken in the order listed.
    pub fn from_rows(x: &DMatrix<f64>, y: &DVector<f64>, rows: &[usize]) -> Self {
        let sub_x = x.select_rows(rows);
        let sub_y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| y[r]));
        Self::from_data(&sub_x, &sub_y)
    }

    pub fn dim(&self) -> usize {
        self.sum_x.len()
    }

    /// Add (`weight = 1`) or remove (`weight = -1`) a single observation.
    pub fn update(&mut self, x: &DVector<f64>, y: f64, weight: f64) {
        self.count += weight;
        self.sum_x.axpy(weight, x, 1.0);
        self.sum_y += weight * y;
        self.sxx.ger(weight, x, x, 1.0);
        self.sxy.axpy(weight * y, x, 1.0);
        self.syy += weight * y * y;
    }

    pub fn merged(&self, other: &Moments) -> Moments {
        Moments {
            count: self.count + other.count,
            sum_x: &self.sum_x + &other.sum_x,
            sum_y: self.sum_y + other.sum_y,
            sxx: &self.sxx + &other.sxx,
            sxy: &self.sxy + &other.sxy,
            syy: self.syy + other.syy,
        }
    }

    pub fn mean_x(&self) -> DVector<f64> {
        &self.sum_x / self.count
    }

    pub fn mean_y(&self) -> f64 {
        self.sum_y / self.count
    }

    /// Covariance `Xcᵀ Xc / n` and cross-moment `Xcᵀ yc / n` of the centered data.
    pub fn centered(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mx = self.mean_x();
        let my = self.mean_y();
        let mut cov = &self.sxx / self.count;
        cov.ger(-1.0, &mx, &mx, 1.0);
        // symmetrize away the rounding in the rank-one correction
        let cov = (&cov + cov.transpose()) * 0.5;
        let cxy = &self.sxy / self.count - &mx * my;
        (cov, cxy)
    }

    /// Mean squared residual of `(w, b)` on the observations behind these moments.
    pub fn mse(&self, w: &DVector<f64>, b: f64) -> f64 {
        let n = self.count;
        let sxx_w = &self.sxx * w;
        let val =
            w.dot(&sxx_w) + 2.0 * b * w.dot(&self.sum_x) + n * b * b - 2.0 * w.dot(&self.sxy) - 2.0 * b * self.sum_y
                + self.syy;
        (val / n).max(0.0)
    }
}

/// Solve the symmetric positive semi-definite system `a x = b`.
///
/// Uses Cholesky when the matrix is comfortably non-singular and falls back
/// to the minimum-norm pseudoinverse solution otherwise. The flag reports
/// whether the fallback was taken.
pub fn solve_psd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if a.nrows() == 0 {
        return Ok((DVector::zeros(0), false));
    }
    if let Some(chol) = a.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let max = diag.iter().cloned().fold(0.0_f64, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > 0.0 && (min / max).powi(2) > SINGULAR_PIVOT_RATIO {
            return Ok((chol.solve(b), false));
        }
    }
    Ok((pinv_solve(a, b)?, true))
}

/// Minimum-norm least-squares solution of `a x = b` via SVD.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().try_svd(true, true, f64::EPSILON, 0).ok_or(Error::SvdFailed)?;
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return Ok(DVector::zeros(a.ncols()));
    }
    svd.solve(b, PINV_RCOND * smax).map_err(|_| Error::SvdFailed)
}

/// Strict Cholesky solve; `None` when the system is singular to working precision.
pub fn solve_spd_strict(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().cloned().fold(0.0_f64, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if max > 0.0 && (min / max).powi(2) > SINGULAR_PIVOT_RATIO {
        Some(chol.solve(b))
    } else {
        None
    }
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_update_matches_recompute() {
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.9]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let mut m = Moments::from_rows(&x, &y, &[0, 1]);
        m.update(&DVector::from_vec(vec![0.5, 0.9]), 3.0, 1.0);
        let full = Moments::from_data(&x, &y);
        assert!((m.sxx - full.sxx).norm() < 1e-15);
        assert!((m.syy - full.syy).abs() < 1e-15);
    }

    #[test]
    fn moment_mse_matches_direct() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 1.0, 4.0]);
        let m = Moments::from_data(&x, &y);
        let w = DVector::from_vec(vec![1.0]);
        // residuals: -1, 0, -2 with b = 0
        assert!((m.mse(&w, 0.0) - 5.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_system_uses_min_norm() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let (x, fallback) = solve_psd(&a, &b).unwrap();
        assert!(fallback);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
