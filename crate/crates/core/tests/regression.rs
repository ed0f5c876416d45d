use bilevel_poison::linalg::Moments;
use bilevel_poison::regress::{fit, fit_moments, lasso_lambda_max, predict, Learner, Regularizer, TrainConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn design(rows: usize, cols: usize, vals: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |r, c| {
        vals[(r * cols + c) % vals.len()] + 0.01 * ((r * 7 + c * 3) % 11) as f64
    })
}

/// Minimizer of `(1/m)‖y − Xw − b‖² + λ‖w‖²` via the pseudoinverse of the
/// design stacked on `√(mλ)·I`.
fn stacked_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let (m, d) = (x.nrows(), x.ncols());
    let mut a = DMatrix::zeros(m + d, d + 1);
    a.view_mut((0, 0), (m, d)).copy_from(x);
    for r in 0..m {
        a[(r, d)] = 1.0;
    }
    for j in 0..d {
        a[(m + j, j)] = (m as f64 * lambda).sqrt();
    }
    let rhs = y.clone().insert_rows(m, d, 0.0);
    a.pseudo_inverse(1e-12).unwrap() * rhs
}

fn theta(model: &bilevel_poison::LinearModel) -> DVector<f64> {
    let d = model.dim();
    let mut t = model.weights.clone().insert_row(d, 0.0);
    t[d] = model.bias;
    t
}

#[test]
fn ols_recovers_exact_linear_data() {
    let x = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 2.0, 0.5]);
    let y = DVector::from_fn(4, |r, _| 2.0 * x[(r, 0)] - x[(r, 1)] + 0.5);
    let m = fit(Learner::Ols, &x, &y, 0.0, &TrainConfig::default()).unwrap();
    assert!((m.weights[0] - 2.0).abs() < 1e-12);
    assert!((m.weights[1] + 1.0).abs() < 1e-12);
    assert!((m.bias - 0.5).abs() < 1e-12);
}

#[test]
fn ridge_matches_stacked_oracle() {
    let x = design(12, 3, &[0.3, 0.9, 0.1, 0.5, 0.7]);
    let y = DVector::from_fn(12, |r, _| {
        0.2 + 0.4 * x[(r, 0)] - 0.1 * x[(r, 2)] + 0.01 * (r % 3) as f64
    });
    for lambda in [1e-4, 1e-2, 1.0] {
        let m = fit(Learner::Ridge, &x, &y, lambda, &TrainConfig::with_lambda(lambda)).unwrap();
        let o = stacked_oracle(&x, &y, lambda);
        assert!((theta(&m) - &o).norm() / o.norm() < 1e-10, "lambda {lambda}");
    }
}

#[test]
fn duplicate_columns_take_minimum_norm_solution() {
    let base = design(10, 1, &[0.2, 0.8, 0.5, 0.1]);
    let x = DMatrix::from_fn(10, 2, |r, _| base[(r, 0)]);
    let y = DVector::from_fn(10, |r, _| 3.0 * base[(r, 0)] + 1.0);
    let m = fit(Learner::Ols, &x, &y, 0.0, &TrainConfig::default()).unwrap();
    assert!(m.pseudoinverse);
    assert!((m.weights[0] - 1.5).abs() < 1e-8 && (m.weights[1] - 1.5).abs() < 1e-8);
}

#[test]
fn lasso_above_lambda_max_is_constant() {
    let x = design(15, 3, &[0.1, 0.4, 0.9, 0.3]);
    let y = DVector::from_fn(15, |r, _| x[(r, 1)] * 0.5 + 0.1);
    let lmax = lasso_lambda_max(&x, &y).unwrap();
    let m = fit(Learner::Lasso, &x, &y, lmax * 1.001, &TrainConfig::default()).unwrap();
    assert!(m.weights.iter().all(|w| *w == 0.0));
    assert!((m.bias - y.mean()).abs() < 1e-12);
    let m = fit(Learner::Lasso, &x, &y, lmax * 0.5, &TrainConfig::default()).unwrap();
    assert!(m.weights.iter().any(|w| *w != 0.0));
}

/// Stationarity: `2(Cw − c)_j = −λ·sign(w_j)` on the support, `|2(Cw − c)_j| ≤ λ` off it.
fn assert_lasso_kkt(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, w: &DVector<f64>) {
    let (cov, cxy) = Moments::from_data(x, y).centered();
    let g = (&cov * w - cxy) * 2.0;
    for j in 0..w.len() {
        if w[j] != 0.0 {
            assert!((g[j] + lambda * w[j].signum()).abs() < 1e-7, "coord {j}: {}", g[j]);
        } else {
            assert!(g[j].abs() <= lambda + 1e-7, "coord {j}: {}", g[j]);
        }
    }
}

#[test]
fn lasso_satisfies_optimality_conditions() {
    let x = design(30, 5, &[0.1, 0.4, 0.9, 0.3, 0.65, 0.22, 0.8]);
    let y = DVector::from_fn(30, |r, _| 0.3 * x[(r, 0)] - 0.2 * x[(r, 3)] + 0.05 * (r % 4) as f64);
    for lambda in [1e-4, 1e-3, 1e-2] {
        let m = fit(Learner::Lasso, &x, &y, lambda, &TrainConfig::with_lambda(lambda)).unwrap();
        assert!(m.converged);
        assert_lasso_kkt(&x, &y, lambda, &m.weights);
    }
}

#[test]
fn warm_start_reaches_the_same_lasso_solution() {
    let x = design(25, 4, &[0.15, 0.45, 0.95, 0.35, 0.6]);
    let y = DVector::from_fn(25, |r, _| 0.4 * x[(r, 1)] + 0.1 * x[(r, 2)] + 0.02 * (r % 5) as f64);
    let lambda = 2e-3;
    let cfg = TrainConfig::with_lambda(lambda);
    let mom = Moments::from_data(&x, &y);
    let cold = fit_moments(&mom, Regularizer::Lasso(lambda), &cfg, None).unwrap();
    let warm = fit_moments(
        &mom,
        Regularizer::Lasso(lambda),
        &cfg,
        Some(&DVector::from_element(4, 0.3)),
    )
    .unwrap();
    assert!((cold.weights - warm.weights).norm() < 1e-8);
}

#[test]
fn moment_updates_match_refit_from_rows() {
    let x = design(20, 3, &[0.2, 0.7, 0.4, 0.9]);
    let y = DVector::from_fn(20, |r, _| x[(r, 0)] - 0.3 * x[(r, 1)]);
    let mut mom = Moments::from_data(&x, &y);
    let row = x.row(4).transpose();
    let new = DVector::from_vec(vec![0.9, 0.1, 0.5]);
    mom.update(&row, y[4], -1.0);
    mom.update(&new, 0.25, 1.0);
    let mut x2 = x.clone();
    x2.set_row(4, &new.transpose());
    let mut y2 = y.clone();
    y2[4] = 0.25;
    for learner in Learner::ALL {
        let lambda = learner.default_lambda();
        let cfg = TrainConfig::with_lambda(lambda);
        let a = fit_moments(&mom, learner.regularizer(lambda), &cfg, None).unwrap();
        let b = fit(learner, &x2, &y2, lambda, &cfg).unwrap();
        assert!((theta(&a) - theta(&b)).norm() < 1e-9, "{learner}");
    }
}

#[test]
fn rejects_bad_shapes_and_lambdas() {
    let x = DMatrix::from_element(3, 2, 0.5);
    assert!(fit(Learner::Ols, &x, &DVector::zeros(2), 0.0, &TrainConfig::default()).is_err());
    assert!(fit(Learner::Ridge, &x, &DVector::zeros(3), -1.0, &TrainConfig::default()).is_err());
    assert!(fit(
        Learner::Ols,
        &DMatrix::zeros(0, 2),
        &DVector::zeros(0),
        0.0,
        &TrainConfig::default()
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_are_affine(vals in prop::collection::vec(0.0f64..1.0, 24), t in 0.0f64..1.0) {
        let x = DMatrix::from_row_slice(8, 3, &vals);
        let y = DVector::from_fn(8, |r, _| vals[r * 3] * 0.7 + 0.1);
        let m = fit(Learner::Ridge, &x, &y, 0.01, &TrainConfig::with_lambda(0.01)).unwrap();
        let a = x.rows(0, 1).into_owned();
        let b = x.rows(1, 1).into_owned();
        let mix = &a * t + &b * (1.0 - t);
        let pa = predict(&m, &a).unwrap()[0];
        let pb = predict(&m, &b).unwrap()[0];
        let pm = predict(&m, &mix).unwrap()[0];
        prop_assert!((pm - (t * pa + (1.0 - t) * pb)).abs() < 1e-12);
    }

    #[test]
    fn ridge_norm_shrinks_with_lambda(vals in prop::collection::vec(0.0f64..1.0, 40), ys in prop::collection::vec(0.0f64..1.0, 10)) {
        let x = DMatrix::from_row_slice(10, 4, &vals);
        let y = DVector::from_vec(ys);
        let mut last = f64::INFINITY;
        for lambda in [1e-3, 1e-2, 1e-1, 1.0] {
            let m = fit(Learner::Ridge, &x, &y, lambda, &TrainConfig::with_lambda(lambda)).unwrap();
            let n = m.weights.norm();
            prop_assert!(n <= last + 1e-12);
            last = n;
        }
    }

    #[test]
    fn fitted_objective_beats_perturbations(
        vals in prop::collection::vec(0.0f64..1.0, 30),
        ys in prop::collection::vec(0.0f64..1.0, 10),
        dir in prop::collection::vec(-1.0f64..1.0, 4),
        learner_ix in 0usize..3,
    ) {
        let x = DMatrix::from_row_slice(10, 3, &vals);
        let y = DVector::from_vec(ys);
        let learner = Learner::ALL[learner_ix];
        let lambda = learner.default_lambda() * 10.0;
        let m = fit(learner, &x, &y, lambda, &TrainConfig::with_lambda(lambda)).unwrap();
        let best = m.objective(&x, &y).unwrap();
        let mut other = m.clone();
        for (w, step) in other.weights.iter_mut().zip(&dir) {
            *w += 1e-3 * step;
        }
        other.bias += 1e-3 * dir[3];
        prop_assert!(other.objective(&x, &y).unwrap() >= best - 1e-12);
    }
}
