//! Python module `bilevel_poison`.
//!
//! Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use ::bilevel_poison as core;
use core::bench::{emit_report, run_experiment, ExperimentSpec};
use core::dataset::Dataset;
use core::fdi::{build_attack_vector, inject, FdiConfig, SelectionMode, SensorAccessSet};
use core::poison::{run_poisoning_attack, AttackerKnowledge, ObservedDataset, PoisonConfig};
use core::regress::{Learner, TrainConfig};
use core::rpca::{apg_rpca, ApgConfig};
use core::trim::{trim_fit, TrimConfig};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type Rows = Vec<Vec<f64>>;
type Cells = Vec<(usize, usize, f64)>;

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn dataset(x: &[Vec<f64>], y: Vec<f64>) -> PyResult<Dataset> {
    Dataset::new(matrix(x)?, DVector::from_vec(y)).map_err(err)
}

fn learner(name: &str) -> PyResult<Learner> {
    name.parse().map_err(err)
}

fn train_config(model: Learner, lam: Option<f64>) -> TrainConfig {
    TrainConfig::with_lambda(lam.unwrap_or_else(|| model.default_lambda()))
}

/// A fitted linear regressor `y = w·x + b`.
#[pyclass(name = "LinearModel", module = "bilevel_poison", from_py_object)]
#[derive(Clone)]
struct PyLinearModel {
    inner: core::LinearModel,
}

#[pymethods]
impl PyLinearModel {
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.iter().copied().collect()
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.inner.bias
    }

    #[getter]
    fn learner(&self) -> &'static str {
        self.inner.learner().name()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.regularizer.lambda()
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let p = core::regress::predict(&self.inner, &matrix(&x)?).map_err(err)?;
        Ok(p.iter().copied().collect())
    }

    fn mse(&self, x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<f64> {
        let d = dataset(&x, y)?;
        let p = core::regress::predict(&self.inner, &d.x).map_err(err)?;
        core::regress::mse(&p, &d.y).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "LinearModel(learner={}, dim={}, bias={})",
            self.learner(),
            self.inner.dim(),
            self.inner.bias
        )
    }
}

/// Fit `model` ("ols", "ridge" or "lasso") on rows `x` and targets `y`.
#[pyfunction]
#[pyo3(signature = (x, y, model = "ols", lam = None))]
fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, model: &str, lam: Option<f64>) -> PyResult<PyLinearModel> {
    let m = learner(model)?;
    let d = dataset(&x, y)?;
    let tc = train_config(m, lam);
    let inner = core::regress::fit(m, &d.x, &d.y, tc.lambda, &tc).map_err(err)?;
    Ok(PyLinearModel { inner })
}

/// Sparse additive corruption. Returns `(attacked_rows, [(row, col, delta), ...])`.
#[pyfunction]
#[pyo3(signature = (x, rate = 0.05, seed = 0, magnitude = (0.1, 0.5), row_wise = false))]
fn fdi_attack(
    x: Vec<Vec<f64>>,
    rate: f64,
    seed: u64,
    magnitude: (f64, f64),
    row_wise: bool,
) -> PyResult<(Rows, Cells)> {
    let n = x.len();
    let d = dataset(&x, vec![0.0; n])?;
    let access = SensorAccessSet::all(d.dim()).map_err(err)?;
    let mode = if row_wise {
        SelectionMode::RowWise
    } else {
        SelectionMode::CellWise
    };
    let cfg = FdiConfig {
        rate,
        magnitude,
        seed,
        mode,
    };
    let attack = build_attack_vector(&d, &access, &cfg).map_err(err)?;
    let attacked = inject(&d, &attack).map_err(err)?;
    let entries = attack.entries().iter().map(|e| (e.row, e.col, e.delta)).collect();
    Ok((rows(&attacked.x), entries))
}

/// Robust PCA by accelerated proximal gradient.
#[pyfunction]
#[pyo3(signature = (m, lam = None, max_iter = 500, tol = 1e-7))]
fn apg(py: Python<'_>, m: Vec<Vec<f64>>, lam: Option<f64>, max_iter: usize, tol: f64) -> PyResult<Py<PyDict>> {
    let cfg = ApgConfig {
        lambda: lam,
        max_iter,
        tol,
        ..Default::default()
    };
    let r = apg_rpca(&matrix(&m)?, &cfg).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("low_rank", rows(&r.low_rank))?;
    out.set_item("sparse", rows(&r.sparse))?;
    out.set_item("iterations", r.iterations)?;
    out.set_item("converged", r.converged)?;
    out.set_item("rank", r.rank)?;
    out.set_item("objective", r.objective_trajectory)?;
    Ok(out.unbind())
}

/// Trimmed regression keeping `n_clean` rows.
#[pyfunction]
#[pyo3(signature = (x, y, n_clean, model = "ols", lam = None, restarts = 5, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn trim(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    n_clean: usize,
    model: &str,
    lam: Option<f64>,
    restarts: usize,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let m = learner(model)?;
    let d = dataset(&x, y)?;
    let lambda = train_config(m, lam).lambda;
    let cfg = TrimConfig {
        n_clean: Some(n_clean),
        restarts,
        seed,
        ..Default::default()
    };
    let r = trim_fit(&d, m, lambda, &cfg).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("model", PyLinearModel { inner: r.model.clone() })?;
    out.set_item("selected", r.selected.clone())?;
    out.set_item("loss_trajectory", r.loss_trajectory.clone())?;
    out.set_item("converged", r.converged)?;
    Ok(out.unbind())
}

/// White-box poisoning attack. Returns the poison rows, responses and the loss trajectory.
#[pyfunction]
#[pyo3(signature = (train_x, train_y, val_x, val_y, model = "ols", rate = 0.1, lam = None, seed = 0, max_outer_iter = 50))]
#[allow(clippy::too_many_arguments)]
fn poison(
    py: Python<'_>,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<f64>,
    val_x: Vec<Vec<f64>>,
    val_y: Vec<f64>,
    model: &str,
    rate: f64,
    lam: Option<f64>,
    seed: u64,
    max_outer_iter: usize,
) -> PyResult<Py<PyDict>> {
    let m = learner(model)?;
    let train = ObservedDataset::new(dataset(&train_x, train_y)?);
    let val = dataset(&val_x, val_y)?;
    let knowledge = AttackerKnowledge::white_box(&train, m, train_config(m, lam)).map_err(err)?;
    let cfg = PoisonConfig {
        rate,
        seed,
        max_outer_iter,
        ..Default::default()
    };
    let set = run_poisoning_attack(&train, &val, &knowledge, &cfg).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("x", rows(&set.x))?;
    out.set_item("y", set.y.iter().copied().collect::<Vec<_>>())?;
    out.set_item("loss_trajectory", set.loss_trajectory)?;
    Ok(out.unbind())
}

/// Run the experiment grid on a CSV and write the reports into `out`.
/// Returns the number of failed cells.
#[pyfunction(name = "bench")]
#[pyo3(signature = (dataset, out, rates = None, models = None, seed = 0, max_rows = Some(2000)))]
fn run_bench(
    dataset: PathBuf,
    out: PathBuf,
    rates: Option<Vec<f64>>,
    models: Option<Vec<String>>,
    seed: u64,
    max_rows: Option<usize>,
) -> PyResult<usize> {
    let mut spec = ExperimentSpec {
        dataset,
        out,
        seed,
        max_rows,
        ..Default::default()
    };
    if let Some(r) = rates {
        spec.rates = r;
    }
    if let Some(ms) = models {
        spec.models = ms.iter().map(|m| learner(m)).collect::<PyResult<_>>()?;
    }
    let report = run_experiment(&spec).map_err(err)?;
    emit_report(&report, &spec.out).map_err(err)?;
    Ok(report.failures())
}

/// CSV text with the appliances-energy schema.
#[pyfunction]
#[pyo3(signature = (rows, seed = 0))]
fn synthetic_csv(rows: usize, seed: u64) -> String {
    core::synth::uci_like_csv(rows, seed)
}

#[pymodule]
fn bilevel_poison(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLinearModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fdi_attack, m)?)?;
    m.add_function(wrap_pyfunction!(apg, m)?)?;
    m.add_function(wrap_pyfunction!(trim, m)?)?;
    m.add_function(wrap_pyfunction!(poison, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_csv, m)?)?;
    Ok(())
}
