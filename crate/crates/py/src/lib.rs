//! Python module `cfmm`: fading generation, SINR, the max-min solver, the
//! GNN and the train / evaluate pipeline.
//!
//! Matrices cross the boundary as row-major `list[list[float]]` (AP rows,
//! UE columns).

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use cfmm::channel::{generate_scenario, LinkBudget, MorphologyKind, MorphologyTable, ScenarioConfig};
use cfmm::gnn::Checkpoint;
use cfmm::maxmin::{self, BisectionConfig};
use cfmm::sinr::{self, PowerControl};
use cfmm::train::{self, TrainConfig};
use cfmm::{FadingMatrix, Matrix};

fn err(e: cfmm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Matrix::from_vec(r, c, rows.concat()).map_err(err)
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn fading(beta: &[Vec<f64>]) -> PyResult<FadingMatrix> {
    let m = to_matrix(beta)?;
    FadingMatrix::from_vec(m.rows(), m.cols(), m.into_vec()).map_err(err)
}

/// Large-scale fading of one random deployment.
#[pyfunction]
#[pyo3(signature = (num_aps, num_ues, morphology = "urban", seed = 0))]
fn generate_fading(num_aps: usize, num_ues: usize, morphology: &str, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let kind: MorphologyKind = morphology.parse().map_err(err)?;
    let cfg = ScenarioConfig::new(num_aps, num_ues, MorphologyTable::default().get(kind), seed).map_err(err)?;
    let (_, beta) = generate_scenario(&cfg).map_err(err)?;
    Ok(to_rows(beta.matrix()))
}

/// Per-user SINR under the default link budget with `tau = K`.
#[pyfunction]
fn compute_sinr(beta: Vec<Vec<f64>>, eta: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let b = fading(&beta)?;
    let budget = LinkBudget::default();
    let a = sinr::compute_alpha(&b, budget.rho_u(), b.num_ues()).map_err(err)?;
    let eta = PowerControl::new(to_matrix(&eta)?);
    Ok(sinr::compute_sinr(&b, &a, &eta, budget.rho_d()).map_err(err)?.into_vec())
}

/// Optimal max-min powers: returns `(t_star, eta)`.
#[pyfunction]
fn solve_maxmin(beta: Vec<Vec<f64>>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let b = fading(&beta)?;
    let cfg = ScenarioConfig::new(b.num_aps(), b.num_ues(), MorphologyTable::default().get(MorphologyKind::Urban), 0)
        .map_err(err)?;
    let sol = maxmin::solve_maxmin(&b, &cfg, &BisectionConfig::default()).map_err(err)?;
    Ok((sol.t_star, to_rows(sol.eta.matrix())))
}

#[pyfunction]
fn equal_power(num_aps: usize, num_ues: usize) -> Vec<Vec<f64>> {
    to_rows(maxmin::equal_power(num_aps, num_ues).matrix())
}

/// Writes `count` labeled samples per scenario to `out`; returns
/// `(written, skipped)`.
#[pyfunction]
#[pyo3(signature = (scenarios, count, out, seed = 0))]
fn generate_dataset(scenarios: &str, count: usize, out: PathBuf, seed: u64) -> PyResult<(usize, usize)> {
    let tags = train::parse_scenarios(scenarios).map_err(err)?;
    let labeled =
        train::generate_dataset(&tags, count, &MorphologyTable::default(), &BisectionConfig::default(), seed)
            .map_err(err)?;
    train::write_samples(&out, &labeled.samples).map_err(err)?;
    Ok((labeled.samples.len(), labeled.skipped.len()))
}

/// Trains on a JSONL dataset and writes the checkpoint to `out`. Returns
/// `(epoch, train_loss, val_loss)` per epoch.
#[pyfunction]
#[pyo3(signature = (data, out, config = None))]
fn train_model(data: PathBuf, out: PathBuf, config: Option<PathBuf>) -> PyResult<Vec<(usize, f64, Option<f64>)>> {
    let cfg = match config {
        Some(p) => TrainConfig::load(&p).map_err(err)?,
        None => TrainConfig::default(),
    };
    let samples = train::read_samples(&data).map_err(err)?;
    let (tr, va) = train::split_train_val(&samples, cfg.val_fraction, cfg.seed).map_err(err)?;
    let result = train::train(&tr, &va, &cfg, Some(&train::RunPaths::for_checkpoint(&out)), None).map_err(err)?;
    Ok(result.metrics.iter().map(|m| (m.epoch, m.train_loss, m.val_loss)).collect())
}

/// Evaluates a checkpoint; one dict per scenario.
#[pyfunction]
fn evaluate(py: Python<'_>, model: PathBuf, data: PathBuf) -> PyResult<Vec<Py<pyo3::types::PyDict>>> {
    use pyo3::types::{PyDict, PyDictMethods};
    let model = Checkpoint::load(&model).and_then(|c| c.to_model()).map_err(err)?;
    let samples = train::read_samples(&data).map_err(err)?;
    let reports =
        cfmm::eval::evaluate_by_scenario(&model, &samples, &LinkBudget::default(), &BisectionConfig::default())
            .map_err(err)?;
    reports
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("scenario", &r.scenario)?;
            d.set_item("num_samples", r.num_samples)?;
            d.set_item("loss_at_median", r.loss_at_median)?;
            d.set_item("likely95_loss", r.likely95_loss)?;
            d.set_item("equal_loss_at_median", r.equal_loss_at_median)?;
            d.set_item("gnn_flops", r.gnn_flops)?;
            d.set_item("solver_flops", r.solver_flops)?;
            d.set_item("gnn_se", r.gnn.clone())?;
            d.set_item("optimal_se", r.optimal.clone())?;
            Ok(d.unbind())
        })
        .collect()
}

/// Graph-transformer power-control model.
#[pyclass(name = "GnnModel")]
struct PyGnnModel {
    inner: cfmm::GnnModel,
}

#[pymethods]
impl PyGnnModel {
    /// Freshly initialized model with the default layer plan.
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> PyResult<Self> {
        let inner = cfmm::GnnModel::new(cfmm::LayerPlan::default(), seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = Checkpoint::load(&path).and_then(|c| c.to_model()).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::from_model(&self.inner, "", "python").save(&path).map_err(err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    /// Feasible powers for `beta`.
    fn predict(&self, beta: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let eta = self.inner.predict(&fading(&beta)?).map_err(err)?;
        Ok(to_rows(eta.matrix()))
    }

    /// Closed-form inference FLOPs on an `M x K` instance.
    fn analytic_flops(&self, num_aps: usize, num_ues: usize) -> u64 {
        self.inner.analytic_flops(num_aps, num_ues).total()
    }
}

#[pymodule]
#[pyo3(name = "cfmm")]
fn cfmm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_fading, m)?)?;
    m.add_function(wrap_pyfunction!(compute_sinr, m)?)?;
    m.add_function(wrap_pyfunction!(solve_maxmin, m)?)?;
    m.add_function(wrap_pyfunction!(equal_power, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PyGnnModel>()?;
    Ok(())
}
