//! Python bindings for the `natgrad` core library.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use natgrad::families::{family_from_id, Dataset, Family as CoreFamily};
use natgrad::gp_bench::{self, BenchmarkConfig};
use natgrad::metric::{self, Direction, MetricEngine, MetricSpec};
use natgrad::optimizer::{self, LineSearch, ManifoldCost, NewtonMetric, OptimizerConfig};
use natgrad::similarity::{Similarity as CoreSimilarity, Target};
use natgrad::validation;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: natgrad::Error) -> PyErr {
    match e {
        natgrad::Error::Numeric { .. } | natgrad::Error::DivergenceInfinite(_) | natgrad::Error::UndefinedScore => {
            PyArithmeticError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn vector(xs: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(xs)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn direction(u: Option<Vec<f64>>) -> PyResult<Option<Direction>> {
    u.map(|u| Direction::new(vector(u)).map_err(to_py)).transpose()
}

/// A parametric family of densities, e.g. `Family("gaussian1d")` or `Family("categorical_softmax:4")`.
#[pyclass(frozen, module = "natgrad_py")]
struct Family {
    inner: Arc<dyn CoreFamily>,
}

#[pymethods]
impl Family {
    #[new]
    #[pyo3(signature = (id, param_len=None))]
    fn new(id: &str, param_len: Option<usize>) -> PyResult<Self> {
        Ok(Family {
            inner: family_from_id(id, param_len).map_err(to_py)?,
        })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id()
    }

    #[getter]
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    #[getter]
    fn sample_dim(&self) -> usize {
        self.inner.sample_dim()
    }

    fn log_density(&self, theta: Vec<f64>, x: Vec<f64>) -> PyResult<f64> {
        self.inner.log_density(&vector(theta), &x).map_err(to_py)
    }

    fn score(&self, theta: Vec<f64>, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.score(&vector(theta), &x).map_err(to_py)?.as_slice().to_vec())
    }

    fn sample(&self, theta: Vec<f64>, seed: u64, count: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner.sample(&vector(theta), seed, count).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Family('{}')", self.inner.id())
    }
}

/// A similarity measure such as `kl`, `chi2`, `wasserstein:3` or `fisher_rao2`.
#[pyclass(frozen, module = "natgrad_py")]
struct Similarity {
    inner: CoreSimilarity,
}

#[pymethods]
impl Similarity {
    #[new]
    fn new(id: &str) -> PyResult<Self> {
        Ok(Similarity {
            inner: CoreSimilarity::from_id(id).map_err(to_py)?,
        })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id()
    }

    /// The reported value (a distance for the distance-like measures).
    fn evaluate(&self, family: &Family, theta: Vec<f64>, other: Vec<f64>) -> PyResult<f64> {
        self.inner
            .evaluate(family.inner.as_ref(), &vector(theta), &Target::Point(vector(other)))
            .map_err(to_py)
    }

    /// The optimized cost c(θ, θ′).
    fn cost(&self, family: &Family, theta: Vec<f64>, other: Vec<f64>) -> PyResult<f64> {
        self.inner
            .cost(family.inner.as_ref(), &vector(theta), &vector(other))
            .map_err(to_py)
    }

    fn gradient(&self, family: &Family, theta: Vec<f64>, other: Vec<f64>) -> PyResult<Vec<f64>> {
        let g = self
            .inner
            .grad_theta(family.inner.as_ref(), &vector(theta), &Target::Point(vector(other)))
            .map_err(to_py)?;
        Ok(g.as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Similarity('{}')", self.inner.id())
    }
}

/// Local Hessian of a metric engine (`fisher`, `w2_1d`, `wp_1d:3`, `fd:kl`, ...).
#[pyfunction]
#[pyo3(signature = (family, metric, theta, direction=None))]
fn local_hessian(family: &Family, metric: &str, theta: Vec<f64>, direction: Option<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let engine = MetricEngine::new(MetricSpec::from_id(metric).map_err(to_py)?, family.inner.clone());
    let u = self::direction(direction)?;
    let h = engine.evaluate(&vector(theta), u.as_ref()).map_err(to_py)?;
    Ok(rows(&h.matrix))
}

/// Finite-difference local Hessian of η ↦ c(η, θ) at η = θ.
#[pyfunction]
#[pyo3(signature = (family, similarity, theta, direction=None))]
fn fd_local_hessian(
    family: &Family,
    similarity: &Similarity,
    theta: Vec<f64>,
    direction: Option<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let u = self::direction(direction)?;
    let h = metric::fd_local_hessian(&similarity.inner, family.inner.as_ref(), &vector(theta), u.as_ref())
        .map_err(to_py)?;
    Ok(rows(&h.matrix))
}

fn manifold_cost(family: &Family, similarity: &Similarity, target: Vec<f64>) -> PyResult<ManifoldCost> {
    ManifoldCost::new(family.inner.clone(), similarity.inner.clone(), vector(target)).map_err(to_py)
}

/// One natural-gradient step toward `target`; returns a dict with `theta_next`,
/// `direction`, `gradient` and `regularization_added`.
#[pyfunction]
#[pyo3(signature = (family, similarity, metric, theta, target, learning_rate=1.0))]
fn natural_gradient_step<'py>(
    py: Python<'py>,
    family: &Family,
    similarity: &Similarity,
    metric: &str,
    theta: Vec<f64>,
    target: Vec<f64>,
    learning_rate: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cost = manifold_cost(family, similarity, target)?;
    let theta = vector(theta);
    let step = if metric == "newton" {
        optimizer::natural_gradient_step(&cost, &NewtonMetric { cost: &cost }, &theta, learning_rate)
    } else {
        let engine = MetricEngine::new(MetricSpec::from_id(metric).map_err(to_py)?, family.inner.clone());
        optimizer::natural_gradient_step(&cost, &engine, &theta, learning_rate)
    }
    .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("theta_next", step.theta_next.as_slice().to_vec())?;
    out.set_item("direction", step.direction.as_slice().to_vec())?;
    out.set_item("gradient", step.gradient.as_slice().to_vec())?;
    out.set_item("regularization_added", step.regularization_added)?;
    Ok(out)
}

fn trace_dict<'py>(py: Python<'py>, trace: &optimizer::Trace) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("metric", &trace.metric)?;
    out.set_item("status", trace.status.to_string())?;
    out.set_item("message", trace.message.clone())?;
    out.set_item("iterations", trace.iterations())?;
    out.set_item("final_theta", trace.final_theta.clone())?;
    out.set_item("cost", trace.records.iter().map(|r| r.cost).collect::<Vec<_>>())?;
    out.set_item("grad_norm", trace.records.iter().map(|r| r.grad_norm).collect::<Vec<_>>())?;
    out.set_item("step_norm", trace.records.iter().map(|r| r.step_norm).collect::<Vec<_>>())?;
    Ok(out)
}

/// Runs the optimizer from `theta0` toward `target` and returns the trace as a dict.
#[pyfunction]
#[pyo3(signature = (family, similarity, metric, theta0, target, max_iters=100, grad_tol=1e-8, learning_rate=1.0, line_search=true))]
#[allow(clippy::too_many_arguments)]
fn optimize<'py>(
    py: Python<'py>,
    family: &Family,
    similarity: &Similarity,
    metric: &str,
    theta0: Vec<f64>,
    target: Vec<f64>,
    max_iters: usize,
    grad_tol: f64,
    learning_rate: f64,
    line_search: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cost = manifold_cost(family, similarity, target)?;
    let config = OptimizerConfig {
        learning_rate,
        max_iters,
        grad_tol,
        line_search: if line_search { LineSearch::default() } else { LineSearch::Off },
        record_wall_time: false,
        ..OptimizerConfig::default()
    };
    config.validate().map_err(to_py)?;
    let theta0 = vector(theta0);
    let trace = if metric == "newton" {
        optimizer::optimize(&cost, &NewtonMetric { cost: &cost }, &theta0, &config)
    } else {
        let engine = MetricEngine::new(MetricSpec::from_id(metric).map_err(to_py)?, family.inner.clone());
        py.detach(|| optimizer::optimize(&cost, &engine, &theta0, &config))
    };
    trace_dict(py, &trace)
}

fn dataset(inputs: Vec<f64>, targets: Vec<f64>) -> PyResult<Dataset> {
    Dataset::new(inputs, targets, 0).map_err(to_py)
}

/// Negative log marginal likelihood of GP regression data under θ = (log a, log ℓ, log s).
#[pyfunction]
fn gp_nll(theta: Vec<f64>, inputs: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    gp_bench::gp_nll(&vector(theta), &dataset(inputs, targets)?).map_err(to_py)
}

#[pyfunction]
fn gp_nll_grad(theta: Vec<f64>, inputs: Vec<f64>, targets: Vec<f64>) -> PyResult<Vec<f64>> {
    let g = gp_bench::gp_nll_grad(&vector(theta), &dataset(inputs, targets)?).map_err(to_py)?;
    Ok(g.as_slice().to_vec())
}

#[pyfunction]
fn gp_fisher_metric(theta: Vec<f64>, inputs: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&gp_bench::gp_fisher_metric(&vector(theta), &inputs).map_err(to_py)?.matrix))
}

#[pyfunction]
fn gp_w2_metric(theta: Vec<f64>, inputs: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&gp_bench::gp_w2_metric(&vector(theta), &inputs).map_err(to_py)?.matrix))
}

/// Draws `m` GP targets on equispaced inputs; returns `(inputs, targets)`.
#[pyfunction]
fn generate_gp_data(seed: u64, m: usize, true_theta: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let d = gp_bench::generate_data(seed, m, &vector(true_theta)).map_err(to_py)?;
    Ok((d.inputs, d.targets))
}

/// Runs the GP hyperparameter benchmark. `config` is a JSON object with the
/// same fields as the `bench-gp` configuration file; omitted fields take defaults.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn run_gp_benchmark<'py>(py: Python<'py>, config: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let cfg: BenchmarkConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => BenchmarkConfig::default(),
    };
    let report = py.detach(|| gp_bench::run_benchmark(&cfg)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("threshold", report.threshold)?;
    let traces = PyDict::new(py);
    for (id, t) in &report.traces {
        traces.set_item(id, trace_dict(py, t)?)?;
    }
    out.set_item("traces", traces)?;
    let summary = PyDict::new(py);
    for row in &report.summary {
        let r = PyDict::new(py);
        r.set_item("iters_to_threshold", row.iters_to_threshold)?;
        r.set_item("final_cost", row.final_cost)?;
        r.set_item("status", &row.status)?;
        summary.set_item(&row.metric, r)?;
    }
    out.set_item("summary", summary)?;
    Ok(out)
}

/// Runs the built-in self-checks; returns `(name, value, tolerance, passed)` tuples.
#[pyfunction]
fn validate(py: Python<'_>) -> Vec<(String, f64, f64, bool)> {
    py.detach(|| validation::run_validation(&metric::MetricSettings::default()))
        .into_iter()
        .map(|c| (c.name.to_string(), c.value, c.tolerance, c.passed()))
        .collect()
}

#[pymodule]
pub fn natgrad_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Family>()?;
    m.add_class::<Similarity>()?;
    m.add_function(wrap_pyfunction!(local_hessian, m)?)?;
    m.add_function(wrap_pyfunction!(fd_local_hessian, m)?)?;
    m.add_function(wrap_pyfunction!(natural_gradient_step, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(gp_nll, m)?)?;
    m.add_function(wrap_pyfunction!(gp_nll_grad, m)?)?;
    m.add_function(wrap_pyfunction!(gp_fisher_metric, m)?)?;
    m.add_function(wrap_pyfunction!(gp_w2_metric, m)?)?;
    m.add_function(wrap_pyfunction!(generate_gp_data, m)?)?;
    m.add_function(wrap_pyfunction!(run_gp_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
