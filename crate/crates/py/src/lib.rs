//! Python bindings for the fusion toolkit: the fusion rules, weight
//! optimization, the minimal-volume oracle, and the Monte-Carlo simulator.
//!
//! Matrices cross the boundary as nested `list[list[float]]`, vectors as
//! `list[float]`; problem and scenario files use the same JSON documents as
//! the command-line tool.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use covint::error::Error as CoreError;
use covint::fusion::{self, Estimate, SplitEstimate};
use covint::matrix::SymMatrix;
use covint::suites::{fuse_rule, input::ProblemInput};
use covint::weights::{self, Cost};

fn py_err(e: CoreError) -> PyErr {
    match &e {
        CoreError::NonFinite
        | CoreError::NotPsd(_)
        | CoreError::SingularMatrix(_)
        | CoreError::DegenerateWeights
        | CoreError::BoundaryWeight(_)
        | CoreError::InvalidCorrelation(_)
        | CoreError::WitnessFailed(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn sym_from_rows(rows: &[Vec<f64>]) -> PyResult<SymMatrix> {
    SymMatrix::from_rows(rows).map_err(py_err)
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Result of a fusion: mean, conservative bound, stacked gain, weights and
/// the evaluated cost.
#[pyclass(frozen, name = "FusedResult")]
struct PyFusedResult {
    #[pyo3(get)]
    mean: Vec<f64>,
    #[pyo3(get)]
    bound: Vec<Vec<f64>>,
    #[pyo3(get)]
    gain: Vec<Vec<f64>>,
    #[pyo3(get)]
    omega: Vec<f64>,
    #[pyo3(get)]
    cost: f64,
}

#[pymethods]
impl PyFusedResult {
    fn __repr__(&self) -> String {
        format!(
            "FusedResult(omega={:?}, cost={}, mean={:?})",
            self.omega, self.cost, self.mean
        )
    }
}

fn wrap_result(r: fusion::FusedResult, cost: Cost) -> PyResult<PyFusedResult> {
    let cost_value = weights::evaluate_cost(&r.bound, cost).map_err(py_err)?;
    Ok(PyFusedResult {
        mean: r.mean.iter().copied().collect(),
        bound: rows_of(r.bound.as_matrix()),
        gain: rows_of(&r.gain),
        omega: r.weights,
        cost: cost_value,
    })
}

fn parse_cost(name: &str) -> PyResult<Cost> {
    name.parse().map_err(py_err)
}

/// Information-filter fusion of uncorrelated estimates.
#[pyfunction]
fn information_fusion(means: Vec<Vec<f64>>, covs: Vec<Vec<Vec<f64>>>) -> PyResult<PyFusedResult> {
    if means.len() != covs.len() {
        return Err(PyValueError::new_err("one covariance per mean required"));
    }
    let estimates = means
        .into_iter()
        .zip(covs)
        .map(|(m, c)| Estimate::new(DVector::from_vec(m), sym_from_rows(&c)?).map_err(py_err))
        .collect::<PyResult<Vec<_>>>()?;
    wrap_result(fusion::information_fusion(&estimates).map_err(py_err)?, Cost::Trace)
}

/// Covariance intersection at the given simplex weights.
#[pyfunction]
fn ci_fuse(
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<Vec<f64>>>,
    omega: Vec<f64>,
) -> PyResult<PyFusedResult> {
    let estimates = means
        .into_iter()
        .zip(covs)
        .map(|(m, c)| Estimate::new(DVector::from_vec(m), sym_from_rows(&c)?).map_err(py_err))
        .collect::<PyResult<Vec<_>>>()?;
    wrap_result(fusion::ci_fuse(&estimates, &omega).map_err(py_err)?, Cost::Trace)
}

/// Split covariance intersection at the given simplex weights.
#[pyfunction]
fn sci_fuse(
    means: Vec<Vec<f64>>,
    unknown_covs: Vec<Vec<Vec<f64>>>,
    known_covs: Vec<Vec<Vec<f64>>>,
    omega: Vec<f64>,
) -> PyResult<PyFusedResult> {
    let estimates = means
        .into_iter()
        .zip(unknown_covs.into_iter().zip(known_covs))
        .map(|(m, (u, k))| {
            SplitEstimate::new(DVector::from_vec(m), sym_from_rows(&u)?, sym_from_rows(&k)?)
                .map_err(py_err)
        })
        .collect::<PyResult<Vec<_>>>()?;
    wrap_result(fusion::sci_fuse(&estimates, &omega).map_err(py_err)?, Cost::Trace)
}

/// Fuse a problem JSON document (generic or common-noise) under a rule.
/// Omitting `omega` optimizes the weights for `cost`.
#[pyfunction]
#[pyo3(signature = (problem_json, rule, omega=None, cost="trace"))]
fn fuse_json(
    problem_json: &str,
    rule: &str,
    omega: Option<Vec<f64>>,
    cost: &str,
) -> PyResult<PyFusedResult> {
    let input = ProblemInput::from_json(problem_json).map_err(py_err)?;
    let cost = parse_cost(cost)?;
    let rule_token: covint::sim::Rule = rule.parse().map_err(py_err)?;
    let omega = match omega {
        Some(w) => w,
        None => {
            let n = input.len();
            if n == 2 {
                weights::optimize_pair(
                    |w| Ok(fuse_rule(&input, rule_token, &[w, 1.0 - w])?.bound),
                    cost,
                    weights::DEFAULT_OMEGA_TOL,
                )
                .map_err(py_err)?
                .omega
            } else {
                weights::optimize_simplex(
                    |w| Ok(fuse_rule(&input, rule_token, w)?.bound),
                    cost,
                    n,
                )
                .map_err(py_err)?
                .omega
            }
        }
    };
    wrap_result(fuse_rule(&input, rule_token, &omega).map_err(py_err)?, cost)
}

/// Evaluate the minimal-volume function `g` of a two-estimator problem in
/// direction `x`; returns `(value, case, omega0)`.
#[pyfunction]
fn eval_g(problem_json: &str, x: Vec<f64>) -> PyResult<(f64, String, f64)> {
    let problem = ProblemInput::from_json(problem_json)
        .map_err(py_err)?
        .generic()
        .map_err(py_err)?;
    let g = covint::oracle::eval_g(&problem, &DVector::from_vec(x)).map_err(py_err)?;
    let case = match g.case {
        covint::oracle::GCase::LeftBoundary => "left-boundary",
        covint::oracle::GCase::RightBoundary => "right-boundary",
        covint::oracle::GCase::Interior => "interior",
    };
    Ok((g.value, case.to_string(), g.omega0))
}

/// Search for a direction certifying that the bound at `omega1` tightly
/// circumscribes the minimal volume.
#[pyfunction]
fn tightness_certificate(problem_json: &str, omega1: f64) -> PyResult<Option<Vec<f64>>> {
    let problem = ProblemInput::from_json(problem_json)
        .map_err(py_err)?
        .generic()
        .map_err(py_err)?;
    Ok(covint::oracle::tightness_certificate(&problem, omega1)
        .map_err(py_err)?
        .map(|x| x.iter().copied().collect()))
}

/// Boundary points of the ellipse `{x : x^T P^{-1} x = 1}`.
#[pyfunction]
#[pyo3(signature = (rows, count=360))]
fn ellipse_boundary(rows: Vec<Vec<f64>>, count: usize) -> PyResult<Vec<(f64, f64)>> {
    let m = sym_from_rows(&rows)?;
    Ok(covint::matrix::ellipse_boundary(&m, count)
        .map_err(py_err)?
        .into_iter()
        .map(|p| (p[0], p[1]))
        .collect())
}

/// Raw JSON of a bundled problem or scenario (fig1, toy-identity, ring4).
#[pyfunction]
fn builtin(name: &str) -> PyResult<String> {
    Ok(covint::builtin::raw(name).map_err(py_err)?.to_string())
}

/// Run the distributed-estimation experiment; returns the report CSV
/// (`rule,node,step,coord,bound_mean,mse`).
#[pyfunction]
#[pyo3(signature = (config_json, trials=None, steps=None, seed=None, rule=None))]
fn simulate(
    config_json: &str,
    trials: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
    rule: Option<String>,
) -> PyResult<String> {
    let mut config: covint::sim::ScenarioConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(t) = trials {
        config.trials = t;
    }
    if let Some(s) = steps {
        config.steps = s;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(r) = rule {
        config.rule = r.parse().map_err(py_err)?;
    }
    Ok(covint::sim::run_monte_carlo(&config).map_err(py_err)?.to_csv())
}

/// Run a verification suite; returns the report as a JSON string.
#[pyfunction]
#[pyo3(signature = (problem_json, suite="all", budget=None, seed=0))]
fn verify(problem_json: &str, suite: &str, budget: Option<usize>, seed: u64) -> PyResult<String> {
    let input = ProblemInput::from_json(problem_json).map_err(py_err)?;
    let suite = suite.parse().map_err(py_err)?;
    let report = covint::suites::run_suite(&input, suite, budget, seed, None).map_err(py_err)?;
    serde_json::to_string_pretty(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn covint_py(_py: Python<'_>, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyFusedResult>()?;
    m.add_function(wrap_pyfunction!(information_fusion, m)?)?;
    m.add_function(wrap_pyfunction!(ci_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(sci_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_json, m)?)?;
    m.add_function(wrap_pyfunction!(eval_g, m)?)?;
    m.add_function(wrap_pyfunction!(tightness_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(ellipse_boundary, m)?)?;
    m.add_function(wrap_pyfunction!(builtin, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
