//! Python bindings. Factor matrices cross the boundary as lists of rows.

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use robustqos::data::{self, MatrixEntry, Metric, TensorEntry};
use robustqos::experiment;
use robustqos::loss;
use robustqos::metrics;
use robustqos::mf::{self, MfConfig};
use robustqos::outlier::{self, ForestConfig};
use robustqos::synth::{self, SyntheticObservations, SyntheticSpec};
use robustqos::tf::{self, TfConfig};
use robustqos::{Error, LossKind};

create_exception!(robustqos, DivergenceError, PyRuntimeError, "Solver objective became non-finite.");

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn to_py(e: Error) -> PyErr {
    match e.root() {
        Error::Divergence { .. } => DivergenceError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn loss_kind(name: &str, gamma: f64) -> PyResult<LossKind> {
    match name {
        "cauchy" => LossKind::cauchy(gamma).map_err(to_py),
        "l2" => Ok(LossKind::L2),
        "l1" => Ok(LossKind::L1),
        other => Err(PyValueError::new_err(format!("unknown loss `{other}`"))),
    }
}

/// Per-residual loss: `ln(1 + r²/γ²)` for cauchy, `½r²` for l2, `|r|` for l1.
#[pyfunction]
#[pyo3(signature = (r, loss="cauchy", gamma=1.0))]
fn loss_value(r: f64, loss: &str, gamma: f64) -> PyResult<f64> {
    loss::loss_value(loss_kind(loss, gamma)?, r).map_err(to_py)
}

/// Derivative of the loss with respect to the residual.
#[pyfunction]
#[pyo3(signature = (r, loss="cauchy", gamma=1.0))]
fn influence(r: f64, loss: &str, gamma: f64) -> PyResult<f64> {
    loss::influence(loss_kind(loss, gamma)?, r).map_err(to_py)
}

#[pyfunction]
fn cauchy_weight(gamma: f64, r: f64) -> PyResult<f64> {
    loss::cauchy_weight(gamma, r).map_err(to_py)
}

#[pyclass(module = "robustqos", frozen, skip_from_py_object)]
#[derive(Clone)]
struct ObservationMatrix {
    inner: data::ObservationMatrix,
}

#[pymethods]
impl ObservationMatrix {
    #[new]
    fn new(users: usize, services: usize, entries: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        let entries = entries
            .into_iter()
            .map(|(user, service, value)| MatrixEntry { user, service, value })
            .collect();
        let inner = data::ObservationMatrix::new(users, services, entries).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads `user service value` lines.
    #[staticmethod]
    fn from_triples(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| to_py(Error::io(path, e)))?;
        let inner = data::parse_sparse_triples(std::io::BufReader::new(file)).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads a dense whitespace-separated matrix, skipping `missing_marker` cells.
    #[staticmethod]
    #[pyo3(signature = (path, missing_marker=-1.0))]
    fn from_dense(path: &str, missing_marker: f64) -> PyResult<Self> {
        let ds = experiment::load_dataset(
            path.as_ref(),
            experiment::DataFormat::Dense,
            None,
            missing_marker,
            Metric::ResponseTime,
        )
        .map_err(to_py)?;
        match ds {
            experiment::Dataset::Matrix(inner) => Ok(Self { inner }),
            experiment::Dataset::Tensor(_) => unreachable!("dense files are matrices"),
        }
    }

    #[getter]
    fn users(&self) -> usize {
        self.inner.users()
    }

    #[getter]
    fn services(&self) -> usize {
        self.inner.services()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn entries(&self) -> Vec<(usize, usize, f64)> {
        self.inner
            .entries()
            .iter()
            .map(|e| (e.user, e.service, e.value))
            .collect()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values()
    }

    /// Train/test partition of the entries; `round(ratio · len)` go to train.
    fn split(&self, train_ratio: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = experiment::split_observations(&self.inner, train_ratio, seed).map_err(to_py)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    fn __repr__(&self) -> String {
        format!(
            "ObservationMatrix(users={}, services={}, observed={})",
            self.inner.users(),
            self.inner.services(),
            self.inner.len()
        )
    }
}

#[pyclass(module = "robustqos", frozen, skip_from_py_object)]
#[derive(Clone)]
struct ObservationTensor {
    inner: data::ObservationTensor,
}

#[pymethods]
impl ObservationTensor {
    #[new]
    fn new(users: usize, services: usize, times: usize, entries: Vec<(usize, usize, usize, f64)>) -> PyResult<Self> {
        let entries = entries
            .into_iter()
            .map(|(user, service, time, value)| TensorEntry { user, service, time, value })
            .collect();
        let inner = data::ObservationTensor::new(users, services, times, entries).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads `user service time value` lines.
    #[staticmethod]
    fn from_quads(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| to_py(Error::io(path, e)))?;
        let inner = data::parse_dynamic_quads(std::io::BufReader::new(file)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn users(&self) -> usize {
        self.inner.users()
    }

    #[getter]
    fn services(&self) -> usize {
        self.inner.services()
    }

    #[getter]
    fn times(&self) -> usize {
        self.inner.times()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn entries(&self) -> Vec<(usize, usize, usize, f64)> {
        self.inner
            .entries()
            .iter()
            .map(|e| (e.user, e.service, e.time, e.value))
            .collect()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values()
    }

    fn split(&self, train_ratio: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = experiment::split_observations(&self.inner, train_ratio, seed).map_err(to_py)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    fn __repr__(&self) -> String {
        format!(
            "ObservationTensor(users={}, services={}, times={}, observed={})",
            self.inner.users(),
            self.inner.services(),
            self.inner.times(),
            self.inner.len()
        )
    }
}

#[pyclass(module = "robustqos", frozen)]
struct MfModel {
    inner: mf::MfModel,
}

#[pymethods]
impl MfModel {
    fn predict(&self, pairs: Vec<(usize, usize)>) -> PyResult<Vec<f64>> {
        mf::predict(&self.inner, &pairs).map_err(to_py)
    }

    #[getter]
    fn user_factors(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.user_factors)
    }

    #[getter]
    fn service_factors(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.service_factors)
    }

    #[getter]
    fn iterations_run(&self) -> usize {
        self.inner.iterations_run
    }

    #[getter]
    fn final_objective(&self) -> f64 {
        self.inner.final_objective
    }
}

#[pyclass(module = "robustqos", frozen)]
struct TfModel {
    inner: tf::TfModel,
}

#[pymethods]
impl TfModel {
    fn predict(&self, triples: Vec<(usize, usize, usize)>) -> PyResult<Vec<f64>> {
        tf::predict(&self.inner, &triples).map_err(to_py)
    }

    #[getter]
    fn user_factors(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.user_factors)
    }

    #[getter]
    fn service_factors(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.service_factors)
    }

    #[getter]
    fn time_factors(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.time_factors)
    }

    #[getter]
    fn iterations_run(&self) -> usize {
        self.inner.iterations_run
    }

    #[getter]
    fn final_objective(&self) -> f64 {
        self.inner.final_objective
    }
}

fn profile(name: &str) -> PyResult<Metric> {
    name.parse().map_err(to_py)
}

/// Fits a matrix model. Unset arguments take the `profile` defaults (rt or tp).
#[pyfunction]
#[pyo3(signature = (
    matrix, *, loss="cauchy", profile="rt", rank=None, gamma=None, lambda_=None,
    eta=None, max_iters=None, rel_tol=None, seed=0, init_scale=None
))]
#[allow(clippy::too_many_arguments)]
fn fit_mf(
    py: Python<'_>,
    matrix: &ObservationMatrix,
    loss: &str,
    profile: &str,
    rank: Option<usize>,
    gamma: Option<f64>,
    lambda_: Option<f64>,
    eta: Option<f64>,
    max_iters: Option<usize>,
    rel_tol: Option<f64>,
    seed: u64,
    init_scale: Option<f64>,
) -> PyResult<MfModel> {
    let mut c = match self::profile(profile)? {
        Metric::ResponseTime => MfConfig::response_time(),
        Metric::Throughput => MfConfig::throughput(),
    };
    let default_gamma = match c.loss {
        LossKind::Cauchy { gamma } => gamma,
        _ => 1.0,
    };
    c.loss = loss_kind(loss, gamma.unwrap_or(default_gamma))?;
    c.rank = rank.unwrap_or(c.rank);
    if let Some(l) = lambda_ {
        (c.lambda_u, c.lambda_s) = (l, l);
    }
    if let Some(e) = eta {
        (c.eta_u, c.eta_s) = (e, e);
    }
    c.max_iters = max_iters.unwrap_or(c.max_iters);
    c.rel_tol = rel_tol.unwrap_or(c.rel_tol);
    c.init_scale = init_scale.unwrap_or(c.init_scale);
    c.seed = seed;
    let m = &matrix.inner;
    let inner = py.detach(|| mf::fit(m, &c)).map_err(to_py)?;
    Ok(MfModel { inner })
}

/// Fits a tensor model. `profile` is rt-mae, rt-rmse or tp; `l2_limit` switches
/// to `γ = 10⁶, λ = 0`.
#[pyfunction]
#[pyo3(signature = (
    tensor, *, profile="rt-mae", rank=None, gamma=None, lambda_=None,
    max_iters=None, rel_tol=None, seed=0, init_scale=None, l2_limit=false
))]
#[allow(clippy::too_many_arguments)]
fn fit_tf(
    py: Python<'_>,
    tensor: &ObservationTensor,
    profile: &str,
    rank: Option<usize>,
    gamma: Option<f64>,
    lambda_: Option<f64>,
    max_iters: Option<usize>,
    rel_tol: Option<f64>,
    seed: u64,
    init_scale: Option<f64>,
    l2_limit: bool,
) -> PyResult<TfModel> {
    let mut c = match profile {
        "rt-mae" | "rt" => TfConfig::response_time_mae(),
        "rt-rmse" => TfConfig::response_time_rmse(),
        "tp" => TfConfig::throughput(),
        other => return Err(PyValueError::new_err(format!("unknown profile `{other}`"))),
    };
    c.rank = rank.unwrap_or(c.rank);
    c.gamma = gamma.unwrap_or(c.gamma);
    if let Some(l) = lambda_ {
        (c.lambda_u, c.lambda_s, c.lambda_t) = (l, l, l);
    }
    c.max_iters = max_iters.unwrap_or(c.max_iters);
    c.rel_tol = rel_tol.unwrap_or(c.rel_tol);
    c.init_scale = init_scale.unwrap_or(c.init_scale);
    c.seed = seed;
    if l2_limit {
        c = c.l2_limit();
    }
    let t = &tensor.inner;
    let inner = py.detach(|| tf::fit(t, &c)).map_err(to_py)?;
    Ok(TfModel { inner })
}

#[pyfunction]
fn mae(observed: Vec<f64>, predicted: Vec<f64>) -> PyResult<f64> {
    metrics::mae(&observed, &predicted).map_err(to_py)
}

#[pyfunction]
fn rmse(observed: Vec<f64>, predicted: Vec<f64>) -> PyResult<f64> {
    metrics::rmse(&observed, &predicted).map_err(to_py)
}

/// Isolation-forest score in `[0, 1]` for every value; higher is more outlying.
#[pyfunction]
#[pyo3(signature = (values, num_trees=100, subsample_size=256, seed=0))]
fn outlier_scores(values: Vec<f64>, num_trees: usize, subsample_size: usize, seed: u64) -> PyResult<Vec<f64>> {
    let config = ForestConfig { num_trees, subsample_size, seed };
    let scored = outlier::fit_score(&values, &config).map_err(to_py)?;
    Ok(scored.into_iter().map(|s| s.score).collect())
}

/// MAE/RMSE after dropping the `⌊ratio · N⌋` most outlying observed values.
/// With `groups`, values are scored per group before the global cut.
#[pyfunction]
#[pyo3(signature = (observed, predicted, outlier_ratio, groups=None, num_trees=100, subsample_size=256, seed=0))]
#[allow(clippy::too_many_arguments)]
fn evaluate_excluding_outliers<'py>(
    py: Python<'py>,
    observed: Vec<f64>,
    predicted: Vec<f64>,
    outlier_ratio: f64,
    groups: Option<Vec<usize>>,
    num_trees: usize,
    subsample_size: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let forest = ForestConfig { num_trees, subsample_size, seed };
    let report = match groups {
        Some(g) => metrics::evaluate_excluding_outliers_grouped(&observed, &predicted, &g, outlier_ratio, &forest),
        None => metrics::evaluate_excluding_outliers(&observed, &predicted, outlier_ratio, &forest),
    }
    .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mae", report.mae)?;
    d.set_item("rmse", report.rmse)?;
    d.set_item("n_total", report.n_total)?;
    d.set_item("n_removed", report.n_removed)?;
    d.set_item("outlier_ratio", report.outlier_ratio)?;
    Ok(d)
}

/// Seeded low-rank data with planted outliers. Returns a dict with
/// `observations`, `planted` and `clean_values`.
#[pyfunction]
#[pyo3(signature = (
    users=50, services=40, times=1, true_rank=5, noise_sigma=0.0,
    outlier_fraction=0.1, outlier_magnitude=20.0, density=0.5, seed=0
))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic<'py>(
    py: Python<'py>,
    users: usize,
    services: usize,
    times: usize,
    true_rank: usize,
    noise_sigma: f64,
    outlier_fraction: f64,
    outlier_magnitude: f64,
    density: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = SyntheticSpec {
        users,
        services,
        times,
        true_rank,
        noise_sigma,
        outlier_fraction,
        outlier_magnitude,
        density,
        seed,
    };
    let data = synth::generate_synthetic(&spec).map_err(to_py)?;
    let d = PyDict::new(py);
    match data.observations {
        SyntheticObservations::Matrix(inner) => d.set_item("observations", ObservationMatrix { inner })?,
        SyntheticObservations::Tensor(inner) => d.set_item("observations", ObservationTensor { inner })?,
    }
    d.set_item("planted", data.planted)?;
    d.set_item("clean_values", data.clean_values)?;
    Ok(d)
}

/// Index partition of `0..n` into sorted train and test lists.
#[pyfunction]
fn split(n: usize, train_ratio: f64, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>)> {
    experiment::split(n, train_ratio, seed).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "robustqos")]
fn robustqos_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DivergenceError", m.py().get_type::<DivergenceError>())?;
    m.add_class::<ObservationMatrix>()?;
    m.add_class::<ObservationTensor>()?;
    m.add_class::<MfModel>()?;
    m.add_class::<TfModel>()?;
    m.add_function(wrap_pyfunction!(loss_value, m)?)?;
    m.add_function(wrap_pyfunction!(influence, m)?)?;
    m.add_function(wrap_pyfunction!(cauchy_weight, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mf, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tf, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(outlier_scores, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_excluding_outliers, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    Ok(())
}
