//! Robust PCA by accelerated proximal gradient with continuation.
//!
//! Splits an observed matrix `s_a` into a low-rank part `s` and a sparse
//! part `i` by minimizing
//! `μ‖s‖_* + μλ‖i‖₁ + ½‖s + i − s_a‖_F²`
//! while `μ` shrinks geometrically toward a floor `μ̄`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fdi::AttackVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApgConfig {
    /// Sparsity weight; `None` means `1/√max(rows, cols)`.
    pub lambda: Option<f64>,
    /// Continuation factor, `0 < η < 1`.
    pub eta: f64,
    /// Initial smoothing; `None` means `0.99·σ_max(s_a)`.
    pub mu0: Option<f64>,
    /// Floor for `μ`; `None` means `1e-9·μ₀`.
    pub mu_bar: Option<f64>,
    pub max_iter: usize,
    /// Stop once `μ` is at its floor and the relative iterate change drops below this.
    pub tol: f64,
    /// Reset momentum whenever a step would raise the objective.
    pub restart: bool,
    /// Sparse cells above this magnitude are reported as estimated attack cells.
    pub support_threshold: f64,
}

impl Default for ApgConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            eta: 0.9,
            mu0: None,
            mu_bar: None,
            max_iter: 500,
            tol: 1e-7,
            restart: true,
            support_threshold: 0.01,
        }
    }
}

impl ApgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::config("apg eta must lie in (0, 1)"));
        }
        if matches!(self.lambda, Some(l) if !(l > 0.0)) {
            return Err(Error::config("apg lambda must be positive"));
        }
        if matches!(self.mu_bar, Some(m) if !(m > 0.0)) {
            return Err(Error::config("apg mu_bar must be positive"));
        }
        if matches!(self.mu0, Some(m) if !(m > 0.0)) {
            return Err(Error::config("apg mu0 must be positive"));
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::config("apg needs max_iter >= 1 and tol > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpcaResult {
    pub low_rank: DMatrix<f64>,
    pub sparse: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Relaxed objective after each iteration, evaluated at that iteration's `μ`.
    pub objective_trajectory: Vec<f64>,
    pub mu_trajectory: Vec<f64>,
    pub rank: usize,
    /// `‖s + i − s_a‖_F`.
    pub residual: f64,
    pub lambda: f64,
    pub mu_bar: f64,
}

pub fn soft_threshold_scalar(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Elementwise `sign(x)·max(|x| − τ, 0)`.
pub fn soft_threshold(x: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    x.map(|v| soft_threshold_scalar(v, tau))
}

/// Singular value thresholding: `U·shrink(Σ, τ)·Vᵀ`.
pub fn svt(g: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    Ok(svt_with_norm(g, tau)?.0)
}

/// SVT plus the nuclear norm and rank of the result.
fn svt_with_norm(g: &DMatrix<f64>, tau: f64) -> Result<(DMatrix<f64>, f64, usize)> {
    let (m, n) = g.shape();
    if m == 0 || n == 0 {
        return Ok((g.clone(), 0.0, 0));
    }
    let svd = g.clone().try_svd(true, true, f64::EPSILON, 0).ok_or(Error::SvdFailed)?;
    let u = svd.u.as_ref().ok_or(Error::SvdFailed)?;
    let v_t = svd.v_t.as_ref().ok_or(Error::SvdFailed)?;
    let mut out = DMatrix::zeros(m, n);
    let mut nuclear = 0.0;
    let mut rank = 0;
    for (k, &sigma) in svd.singular_values.iter().enumerate() {
        let shrunk = sigma - tau;
        if shrunk > 0.0 {
            out.ger(shrunk, &u.column(k), &v_t.row(k).transpose(), 1.0);
            nuclear += shrunk;
            rank += 1;
        }
    }
    Ok((out, nuclear, rank))
}

fn largest_singular_value(m: &DMatrix<f64>) -> Result<f64> {
    let sv = m
        .clone()
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or(Error::SvdFailed)?
        .singular_values;
    Ok(sv.iter().cloned().fold(0.0, f64::max))
}

pub fn apg_rpca(s_a: &DMatrix<f64>, cfg: &ApgConfig) -> Result<RpcaResult> {
    cfg.validate()?;
    if s_a.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("observed matrix has non-finite entries"));
    }
    let (m, n) = s_a.shape();
    if m == 0 || n == 0 {
        return Err(Error::Empty("observed matrix is empty"));
    }
    let lambda = cfg.lambda.unwrap_or(1.0 / (m.max(n).max(1) as f64).sqrt());
    let sigma_max = largest_singular_value(s_a)?;
    if sigma_max == 0.0 {
        return Ok(RpcaResult {
            low_rank: DMatrix::zeros(m, n),
            sparse: DMatrix::zeros(m, n),
            iterations: 0,
            converged: true,
            objective_trajectory: vec![0.0],
            mu_trajectory: vec![cfg.mu0.unwrap_or(0.0)],
            rank: 0,
            residual: 0.0,
            lambda,
            mu_bar: cfg.mu_bar.unwrap_or(0.0),
        });
    }
    let mu0 = cfg.mu0.unwrap_or(0.99 * sigma_max);
    let mu_bar = cfg.mu_bar.unwrap_or(1e-9 * mu0);
    let scale = s_a.norm().max(1.0);

    let objective = |nuclear: f64, sparse: &DMatrix<f64>, fit: f64, mu: f64| {
        mu * nuclear + mu * lambda * sparse.lp_norm(1) + 0.5 * fit
    };

    let mut s = DMatrix::zeros(m, n);
    let mut s_prev = s.clone();
    let mut i = s.clone();
    let mut i_prev = s.clone();
    let mut nuclear = 0.0;
    let mut rank = 0;
    let (mut t, mut t_prev) = (1.0_f64, 1.0_f64);
    let mut mu = mu0;
    let mut objective_trajectory = Vec::new();
    let mut mu_trajectory = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        iterations += 1;
        let beta = (t_prev - 1.0) / t;
        let ys = &s + (&s - &s_prev) * beta;
        let yi = &i + (&i - &i_prev) * beta;
        let half_resid = (&ys + &yi - s_a) * 0.5;
        let gs = &ys - &half_resid;
        let gi = &yi - &half_resid;
        let (s_new, nuc_new, rank_new) = svt_with_norm(&gs, mu / 2.0)?;
        let i_new = soft_threshold(&gi, lambda * mu / 2.0);

        let fit_new = (&s_new + &i_new - s_a).norm_squared();
        let obj_new = objective(nuc_new, &i_new, fit_new, mu);
        let obj_cur = objective(nuclear, &i, (&s + &i - s_a).norm_squared(), mu);

        let at_floor = mu <= mu_bar;
        if cfg.restart && obj_new > obj_cur {
            // drop the momentum and retry from the current iterate
            objective_trajectory.push(obj_cur);
            mu_trajectory.push(mu);
            if beta == 0.0 {
                // a plain step cannot improve: stationary for this μ
                if at_floor {
                    converged = true;
                    break;
                }
                mu = (cfg.eta * mu).max(mu_bar);
                continue;
            }
            s_prev = s.clone();
            i_prev = i.clone();
            t_prev = 1.0;
            t = 1.0;
            continue;
        }

        let change = ((&s_new - &s).norm_squared() + (&i_new - &i).norm_squared()).sqrt() / scale;
        s_prev = std::mem::replace(&mut s, s_new);
        i_prev = std::mem::replace(&mut i, i_new);
        nuclear = nuc_new;
        rank = rank_new;
        objective_trajectory.push(obj_new);
        mu_trajectory.push(mu);

        t_prev = t;
        t = (1.0 + (4.0 * t * t + 1.0).sqrt()) / 2.0;
        mu = (cfg.eta * mu).max(mu_bar);

        if at_floor && change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("apg stopped after {iterations} iterations without converging");
    }
    let residual = (&s + &i - s_a).norm();
    Ok(RpcaResult {
        low_rank: s,
        sparse: i,
        iterations,
        converged,
        objective_trajectory,
        mu_trajectory,
        rank,
        residual,
        lambda,
        mu_bar,
    })
}

/// A dataset with its feature block replaced by the recovered low-rank part.
#[derive(Clone, Debug)]
pub struct Sanitized {
    pub clean: Dataset,
    pub estimated_attack: AttackVector,
    pub rpca: RpcaResult,
}

impl Sanitized {
    /// `poisoned` with only the estimated attack cells subtracted, leaving
    /// every other reading as observed.
    pub fn repaired(&self, poisoned: &Dataset) -> Result<Dataset> {
        crate::fdi::revert(poisoned, &self.estimated_attack)
    }
}

/// Run robust PCA on the feature block of `poisoned`. The target passes
/// through unchanged.
pub fn sanitize_frame(poisoned: &Dataset, cfg: &ApgConfig) -> Result<Sanitized> {
    let rpca = apg_rpca(&poisoned.x, cfg)?;
    let mut clean = poisoned.clone();
    clean.x = rpca.low_rank.clone();
    let estimated_attack = AttackVector::from_dense(&rpca.sparse, cfg.support_threshold);
    Ok(Sanitized {
        clean,
        estimated_attack,
        rpca,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold_scalar(0.7, 0.0), 0.7);
        assert_eq!(soft_threshold_scalar(2.5, 1.0), 1.5);
        assert_eq!(soft_threshold_scalar(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold_scalar(-3.0, 1.0), -2.0);
        let m = DMatrix::from_row_slice(1, 3, &[2.5, -0.5, -2.0]);
        assert_eq!(
            soft_threshold(&m, 1.0),
            DMatrix::from_row_slice(1, 3, &[1.5, 0.0, -1.0])
        );
    }

    #[test]
    fn svt_zero_threshold_reconstructs() {
        let g = DMatrix::from_fn(6, 4, |r, c| ((r * 5 + c * 3) % 7) as f64 - 3.0);
        assert!((svt(&g, 0.0).unwrap() - &g).norm() < 1e-10);
    }

    #[test]
    fn svt_diagonal() {
        let g = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let out = svt(&g, 2.0).unwrap();
        assert!((out - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn svt_kills_rank_one_at_its_norm() {
        // ‖u‖ = 1, ‖v‖ = 5 so the only singular value is 5
        let u = nalgebra::DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let v = nalgebra::DVector::from_vec(vec![3.0, 0.0, 4.0, 0.0]);
        let g = &u * v.transpose();
        assert!(svt(&g, 5.0).unwrap().norm() < 1e-12);
    }

    #[test]
    fn zero_input_is_a_fixed_point() {
        let r = apg_rpca(&DMatrix::zeros(5, 4), &ApgConfig::default()).unwrap();
        assert!(r.iterations <= 1);
        assert_eq!(r.low_rank, DMatrix::zeros(5, 4));
        assert_eq!(r.sparse, DMatrix::zeros(5, 4));
    }

    #[test]
    fn rank_one_without_corruption_has_no_sparse_part() {
        let u = nalgebra::DVector::from_fn(30, |i, _| 1.0 + (i % 7) as f64 / 7.0);
        let v = nalgebra::DVector::from_fn(20, |i, _| 0.5 + (i % 5) as f64 / 5.0);
        let sa = &u * v.transpose();
        let r = apg_rpca(&sa, &ApgConfig::default()).unwrap();
        assert!(r.sparse.norm() < 1e-6 * sa.norm(), "sparse {}", r.sparse.norm());
        assert!(r.residual <= 1e-6 * sa.norm());
    }

    #[test]
    fn deterministic_and_mu_monotone() {
        let sa = DMatrix::from_fn(12, 9, |r, c| ((r * 7 + c * 11) % 13) as f64 / 13.0);
        let cfg = ApgConfig {
            max_iter: 80,
            ..Default::default()
        };
        let a = apg_rpca(&sa, &cfg).unwrap();
        let b = apg_rpca(&sa, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.mu_trajectory.windows(2).all(|w| w[1] <= w[0]));
        assert!(a.mu_trajectory.iter().all(|&m| m >= a.mu_bar));
        assert!(a.rank <= 9);
    }

    #[test]
    fn config_validation() {
        assert!(ApgConfig {
            eta: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ApgConfig {
            mu_bar: Some(0.0),
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ApgConfig {
            lambda: Some(-1.0),
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
