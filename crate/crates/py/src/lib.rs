//! Python bindings: models, simulation, log-likelihood / score evaluation and
//! the reference experiments.

use std::sync::Arc;

use nalgebra::DVector;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use srcf_score::conventional::kf_loglik;
use srcf_score::esrcf::esrcf_loglik;
use srcf_score::experiments::{
    run_example1_sweep, run_performance_profile, run_table1, Example1SweepConfig, ProfileConfig,
    Table1Config,
};
use srcf_score::model::{
    example1_spec, example3_spec, simulate, Frozen, ModelConfig, ModelSpec, Trajectory,
};
use srcf_score::{Error, Method};

fn to_py(e: Error) -> PyErr {
    match e.class() {
        "config" => PyValueError::new_err(e.to_string()),
        "io" => PyIOError::new_err(e.to_string()),
        _ => PyArithmeticError::new_err(e.to_string()),
    }
}

fn method(name: &str) -> PyResult<Method> {
    match name {
        "sqrt" | "square-root" => Ok(Method::SquareRoot),
        "conventional" => Ok(Method::Conventional),
        other => Err(PyValueError::new_err(format!(
            "unknown method {other:?}; expected sqrt or conventional"
        ))),
    }
}

fn methods(name: &str) -> PyResult<Vec<Method>> {
    if name == "both" {
        Ok(Method::ALL.to_vec())
    } else {
        Ok(vec![method(name)?])
    }
}

fn trajectory(z: Vec<Vec<f64>>) -> PyResult<Trajectory> {
    Trajectory::new(z.into_iter().map(DVector::from_vec).collect()).map_err(to_py)
}

/// A parameterized linear Gaussian state-space model.
#[pyclass(frozen, module = "srcf_score_py")]
struct Model {
    spec: Arc<dyn ModelSpec>,
}

#[pymethods]
impl Model {
    /// Continuous-time first-order system sampled every `delta_t`; θ = [τ].
    #[staticmethod]
    #[pyo3(signature = (delta_t = 0.1))]
    fn example1(delta_t: f64) -> PyResult<Self> {
        Ok(Self {
            spec: Arc::new(example1_spec(delta_t).map_err(to_py)?),
        })
    }

    /// Ill-conditioned measurement test problem; θ = [θ].
    #[staticmethod]
    #[pyo3(signature = (delta = 1e-2))]
    fn example3(delta: f64) -> PyResult<Self> {
        Ok(Self {
            spec: Arc::new(example3_spec(delta).map_err(to_py)?),
        })
    }

    /// Build from the JSON model description accepted by the CLI `--model-file`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            spec: Arc::from(cfg.build().map_err(to_py)?),
        })
    }

    /// The same model with every matrix pinned at `theta` (zero derivatives).
    fn frozen(&self, theta: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            spec: Arc::new(Frozen::new(self.spec.clone(), theta).map_err(to_py)?),
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.spec.name().to_string()
    }

    /// `(n, m, q, p)`: state, measurement, process-noise and parameter sizes.
    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.spec.dims();
        (d.n, d.m, d.q, d.p)
    }

    /// Seeded measurement record, one list per step.
    #[pyo3(signature = (theta, n_steps, seed = 42))]
    fn simulate(&self, theta: Vec<f64>, n_steps: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let t = simulate(self.spec.as_ref(), &theta, n_steps, seed).map_err(to_py)?;
        Ok(t.z.iter().map(|v| v.iter().copied().collect()).collect())
    }

    /// Negative log-likelihood; raises `ArithmeticError` if the filter breaks down.
    #[pyo3(signature = (theta, z, method = "sqrt"))]
    fn loglik(
        &self,
        py: Python<'_>,
        theta: Vec<f64>,
        z: Vec<Vec<f64>>,
        method: &str,
    ) -> PyResult<f64> {
        let m = self::method(method)?;
        let data = trajectory(z)?;
        let spec = self.spec.clone();
        py.detach(move || match m {
            Method::SquareRoot => esrcf_loglik(spec.as_ref(), &theta, &data),
            Method::Conventional => kf_loglik(spec.as_ref(), &theta, &data),
        })
        .map_err(to_py)
    }

    /// Negative log-likelihood and its gradient. A breakdown is reported in
    /// the result (`failed_step`, NaN values) rather than raised.
    #[pyo3(signature = (theta, z, method = "sqrt"))]
    fn score(
        &self,
        py: Python<'_>,
        theta: Vec<f64>,
        z: Vec<Vec<f64>>,
        method: &str,
    ) -> PyResult<ScoreResult> {
        let m = self::method(method)?;
        let data = trajectory(z)?;
        let spec = self.spec.clone();
        let r = py
            .detach(move || m.score(spec.as_ref(), &theta, &data))
            .map_err(to_py)?;
        Ok(ScoreResult {
            loglik: r.loglik,
            gradient: r.gradient,
            failed_step: r.failure.as_ref().map(|f| f.step),
            message: r.failure.map(|f| f.message),
        })
    }

    fn __repr__(&self) -> String {
        let d = self.spec.dims();
        format!(
            "Model({:?}, n={}, m={}, q={}, p={})",
            self.spec.name(),
            d.n,
            d.m,
            d.q,
            d.p
        )
    }
}

#[pyclass(frozen, get_all, module = "srcf_score_py")]
struct ScoreResult {
    loglik: f64,
    gradient: Vec<f64>,
    failed_step: Option<usize>,
    message: Option<String>,
}

#[pymethods]
impl ScoreResult {
    #[getter]
    fn failed(&self) -> bool {
        self.failed_step.is_some()
    }

    fn __repr__(&self) -> String {
        format!(
            "ScoreResult(loglik={:?}, gradient={:?}, failed_step={:?})",
            self.loglik, self.gradient, self.failed_step
        )
    }
}

/// Oracle-referenced error table over Example 3; one dict per δ.
#[pyfunction]
#[pyo3(signature = (deltas = None, theta = 2.0, z1 = None))]
fn table1<'py>(
    py: Python<'py>,
    deltas: Option<Vec<f64>>,
    theta: f64,
    z1: Option<Vec<f64>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg = Table1Config {
        theta,
        ..Table1Config::default()
    };
    if let Some(d) = deltas {
        cfg.deltas = d;
    }
    if let Some(z) = z1 {
        cfg.z1 = z;
    }
    let rows = py.detach(|| run_table1(&cfg)).map_err(to_py)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("delta", r.delta)?;
            d.set_item("cond_re1", r.cond_re1)?;
            for (prefix, rep) in [
                ("conventional", &r.conventional),
                ("square_root", &r.square_root),
            ] {
                d.set_item(format!("{prefix}_dp1"), rep.dp1)?;
                d.set_item(format!("{prefix}_dp1_prime"), rep.dp1_prime)?;
                d.set_item(format!("{prefix}_dloglf"), rep.dloglf)?;
                d.set_item(format!("{prefix}_dloglg"), rep.dloglg)?;
                d.set_item(format!("{prefix}_failed"), rep.failed)?;
            }
            Ok(d)
        })
        .collect()
}

/// Performance profile of the score error; returns a dict with per-problem
/// measures, ratios and the `(μ, φ)` step points of each algorithm.
#[pyfunction]
#[pyo3(signature = (deltas = None, method = "both", mu_max = 4.0))]
fn performance_profile<'py>(
    py: Python<'py>,
    deltas: Option<Vec<f64>>,
    method: &str,
    mu_max: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let ms = methods(method)?;
    let mut cfg = ProfileConfig {
        mu_max,
        ..ProfileConfig::default()
    };
    if let Some(d) = deltas {
        cfg.deltas = d;
    }
    let p = py
        .detach(|| run_performance_profile(&cfg, &ms))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    let points: Vec<Vec<(f64, f64)>> = (0..p.algorithms.len()).map(|a| p.points(a)).collect();
    let phi1: Vec<f64> = (0..p.algorithms.len()).map(|a| p.phi(a, 1.0)).collect();
    d.set_item("algorithms", &p.algorithms)?;
    d.set_item("problems", &p.problems)?;
    d.set_item("measures", &p.measures)?;
    d.set_item("ratios", &p.ratios)?;
    d.set_item("points", points)?;
    d.set_item("phi_at_1", phi1)?;
    Ok(d)
}

/// Likelihood and score over a τ grid for Example 1.
#[pyfunction]
#[pyo3(signature = (tau_grid = None, n_steps = 100, seed = 42, method = "both"))]
fn example1_sweep<'py>(
    py: Python<'py>,
    tau_grid: Option<Vec<f64>>,
    n_steps: usize,
    seed: u64,
    method: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let ms = methods(method)?;
    let mut cfg = Example1SweepConfig {
        n_steps,
        seed,
        ..Example1SweepConfig::default()
    };
    if let Some(g) = tau_grid {
        cfg.tau_grid = g;
    }
    let c = py.detach(|| run_example1_sweep(&cfg, &ms)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("tau", &c.tau)?;
    d.set_item(
        "methods",
        c.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
    )?;
    d.set_item("loglik", &c.loglik)?;
    d.set_item("gradient", &c.gradient)?;
    Ok(d)
}

#[pymodule]
fn srcf_score_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<ScoreResult>()?;
    m.add_function(wrap_pyfunction!(table1, m)?)?;
    m.add_function(wrap_pyfunction!(performance_profile, m)?)?;
    m.add_function(wrap_pyfunction!(example1_sweep, m)?)?;
    Ok(())
}
