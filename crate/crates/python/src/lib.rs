//! Python bindings: OT primitives, the policy softmax, survival helpers,
//! episodes, sweeps and the verification checks.

use std::path::PathBuf;

use ot_orch::checks::run_checks as core_run_checks;
use ot_orch::config::{parse_settings, Settings};
use ot_orch::envs::gen_surrogate_dataset as core_gen;
use ot_orch::harness::{self, AggregateRow, MetricsReport, Trajectory};
use ot_orch::model::{CiMethod, DiscreteDistribution, EmpiricalDistribution1D};
use ot_orch::ot::{self, CostMatrix};
use ot_orch::policy::{self, PolicyKind};
use ot_orch::survival::{self, SurvivalModel};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: ot_orch::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cost_matrix(rows: Vec<Vec<f64>>) -> PyResult<CostMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("cost rows must have equal length"));
    }
    CostMatrix::new(n, m, rows.into_iter().flatten().collect()).map_err(err)
}

/// Experiment settings, parsed from TOML text plus `key=value` overrides.
#[pyclass(name = "Config", module = "ot_orch_py", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: Settings,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = "", overrides = None))]
    fn new(text: &str, overrides: Option<Vec<String>>) -> PyResult<Self> {
        let inner = parse_settings(text, &overrides.unwrap_or_default()).map_err(err)?;
        Ok(Self { inner })
    }

    /// A copy with more overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        let text = self.inner.to_toml().map_err(err)?;
        Self::new(&text, Some(overrides))
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(err)
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.run.horizon
    }

    #[getter]
    fn num_agents(&self) -> usize {
        self.inner.run.num_agents
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.run.seeds.clone()
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.policy.lambda
    }

    #[getter]
    fn environment(&self) -> &'static str {
        self.inner.env.environment.kind.as_str()
    }

    /// Resolved policy names, `bot_orch` mapped to the matching variant.
    fn policies(&self) -> PyResult<Vec<&'static str>> {
        Ok(self.inner.policies().map_err(err)?.iter().map(PolicyKind::as_str).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(environment={}, horizon={}, num_agents={}, lambda={})",
            self.environment(),
            self.horizon(),
            self.num_agents(),
            self.lambda_()
        )
    }
}

impl PyConfig {
    fn policy(&self, name: &str) -> PyResult<PolicyKind> {
        match name {
            "bot_orch" => Ok(PolicyKind::bot_orch_for(self.inner.env.environment.is_noniid())),
            other => other.parse().map_err(err),
        }
    }

    fn seeds_or(&self, seeds: Option<Vec<u64>>) -> Vec<u64> {
        seeds.unwrap_or_else(|| self.inner.run.seeds.clone())
    }
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (name, value) in r.fields() {
        if let Some(v) = value {
            d.set_item(name, v)?;
        }
    }
    Ok(d)
}

fn aggregate_dict<'py>(py: Python<'py>, rows: &[AggregateRow]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for r in rows {
        d.set_item(&r.metric, (r.mean, r.ci_halfwidth, r.n_seeds))?;
    }
    Ok(d)
}

/// One simulated episode.
#[pyclass(name = "Trajectory", module = "ot_orch_py")]
struct PyTrajectory {
    inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn policy(&self) -> &'static str {
        self.inner.policy.as_str()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn chosen(&self) -> Vec<usize> {
        self.inner.records.iter().map(|r| r.chosen).collect()
    }

    #[getter]
    fn rewards(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.reward_chosen).collect()
    }

    #[getter]
    fn costs(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.cost_chosen_noisy).collect()
    }

    /// Metrics at `lambda_`, defaulting to the config's evaluation λ.
    #[pyo3(signature = (lambda_ = None))]
    fn metrics<'py>(&self, py: Python<'py>, lambda_: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
        let lambda = lambda_.unwrap_or_else(|| self.inner.config.eval_lambda());
        report_dict(py, &harness::metrics(&self.inner, lambda))
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        harness::write_trajectory_csv(&self.inner, &mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }
}

#[pyfunction]
#[pyo3(signature = (a, b, p = 1, a_weights = None, b_weights = None))]
fn wasserstein_1d(
    a: Vec<f64>,
    b: Vec<f64>,
    p: u32,
    a_weights: Option<Vec<f64>>,
    b_weights: Option<Vec<f64>>,
) -> PyResult<f64> {
    let a = EmpiricalDistribution1D::new(a, a_weights).map_err(err)?;
    let b = EmpiricalDistribution1D::new(b, b_weights).map_err(err)?;
    ot::wasserstein_1d(&a, &b, p).map_err(err)
}

#[pyfunction]
fn wasserstein_discrete(mu: Vec<f64>, nu: Vec<f64>, cost: Vec<Vec<f64>>) -> PyResult<f64> {
    let mu = DiscreteDistribution::new(mu).map_err(err)?;
    let nu = DiscreteDistribution::new(nu).map_err(err)?;
    ot::wasserstein_discrete(&mu, &nu, &cost_matrix(cost)?).map_err(err)
}

/// Optimal cost and the plan as a list of rows.
#[pyfunction]
fn optimal_plan(supply: Vec<f64>, demand: Vec<f64>, cost: Vec<Vec<f64>>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let cols = demand.len();
    let plan = ot::optimal_plan(&supply, &demand, &cost_matrix(cost)?).map_err(err)?;
    Ok((plan.cost, plan.flow.chunks(cols.max(1)).map(<[f64]>::to_vec).collect()))
}

/// Quantile-average barycenter of equally weighted sample sets unless
/// `weights` is given. Returns the barycenter's support.
#[pyfunction]
#[pyo3(signature = (samples, weights = None, grid = 128))]
fn barycenter_1d(samples: Vec<Vec<f64>>, weights: Option<Vec<f64>>, grid: usize) -> PyResult<Vec<f64>> {
    let n = samples.len();
    let dists = samples
        .into_iter()
        .map(|s| EmpiricalDistribution1D::new(s, None))
        .collect::<ot_orch::Result<Vec<_>>>()
        .map_err(err)?;
    let weights = weights.unwrap_or_else(|| vec![1.0 / n.max(1) as f64; n]);
    Ok(ot::barycenter_1d(&dists, &weights, grid).map_err(err)?.samples().to_vec())
}

/// `(Phi tail, exponential bound)` for the Gaussian cost-noise margin.
#[pyfunction]
fn margin_bound(delta: f64, sigma: f64) -> PyResult<(f64, f64)> {
    ot::margin_bound(delta, sigma).map_err(err)
}

#[pyfunction]
fn softmax_policy(ema_rewards: Vec<f64>, costs: Vec<f64>, lambda_: f64, eta: f64) -> PyResult<Vec<f64>> {
    policy::softmax_policy(&ema_rewards, &costs, lambda_, eta).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (rate, tau, shape = 1.0))]
fn survival_prob(rate: f64, tau: f64, shape: f64) -> PyResult<f64> {
    survival::survival_prob(&SurvivalModel::weibull(rate, shape), tau, &[]).map_err(err)
}

#[pyfunction]
fn frailty_reward(delta: bool, s_at_t: f64, theta: f64) -> f64 {
    survival::frailty_reward(delta, s_at_t, theta)
}

#[pyfunction]
fn run_episode(py: Python<'_>, policy: &str, config: &PyConfig, seed: u64) -> PyResult<PyTrajectory> {
    let kind = config.policy(policy)?;
    let cfg = config.inner.experiment();
    let inner = py.detach(|| harness::run_episode(kind, &cfg, seed)).map_err(err)?;
    Ok(PyTrajectory { inner })
}

#[pyfunction]
#[pyo3(signature = (policy, config, seeds = None, parallel = 1))]
fn run_seeds(
    py: Python<'_>,
    policy: &str,
    config: &PyConfig,
    seeds: Option<Vec<u64>>,
    parallel: usize,
) -> PyResult<Vec<PyTrajectory>> {
    let kind = config.policy(policy)?;
    let cfg = config.inner.experiment();
    let seeds = config.seeds_or(seeds);
    let trajs = py.detach(|| harness::run_seeds(kind, &cfg, &seeds, parallel)).map_err(err)?;
    Ok(trajs.into_iter().map(|inner| PyTrajectory { inner }).collect())
}

/// Per-seed metrics and their aggregate `{metric: (mean, ci_halfwidth, n)}`.
#[pyfunction]
#[pyo3(signature = (policy, config, seeds = None, parallel = 1))]
fn evaluate<'py>(
    py: Python<'py>,
    policy: &str,
    config: &PyConfig,
    seeds: Option<Vec<u64>>,
    parallel: usize,
) -> PyResult<(Vec<Bound<'py, PyDict>>, Bound<'py, PyDict>)> {
    let kind = config.policy(policy)?;
    let cfg = config.inner.experiment();
    let seeds = config.seeds_or(seeds);
    let reports = py.detach(|| harness::evaluate(kind, &cfg, &seeds, parallel)).map_err(err)?;
    let rows = harness::aggregate(&reports, cfg.ci_method).map_err(err)?;
    let per_seed = reports.iter().map(|r| report_dict(py, r)).collect::<PyResult<Vec<_>>>()?;
    Ok((per_seed, aggregate_dict(py, &rows)?))
}

/// Mean and confidence half-width; `method` is `student_t` or `normal`.
#[pyfunction]
#[pyo3(signature = (values, method = "student_t"))]
fn mean_ci(values: Vec<f64>, method: &str) -> PyResult<(f64, f64)> {
    let method = match method {
        "student_t" => CiMethod::StudentT,
        "normal" => CiMethod::Normal,
        other => return Err(PyValueError::new_err(format!("unknown CI method '{other}'"))),
    };
    harness::mean_ci(&values, method).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (grid, config, seeds = None, parallel = 1))]
fn lambda_sweep<'py>(
    py: Python<'py>,
    grid: Vec<f64>,
    config: &PyConfig,
    seeds: Option<Vec<u64>>,
    parallel: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.inner.experiment();
    let seeds = config.seeds_or(seeds);
    let rows = py.detach(|| harness::lambda_sweep(&grid, &cfg, &seeds, parallel)).map_err(err)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("label", &r.label)?;
            d.set_item("policy", r.policy.as_str())?;
            d.set_item("lambda", r.lambda)?;
            d.set_item("aggregates", aggregate_dict(py, &r.aggregates)?)?;
            Ok(d)
        })
        .collect()
}

/// Runs the selected checks; `overrides` use the config override syntax.
#[pyfunction]
#[pyo3(signature = (selector = "all", overrides = None))]
fn run_checks<'py>(
    py: Python<'py>,
    selector: &str,
    overrides: Option<Vec<String>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = parse_settings("", &overrides.unwrap_or_default()).map_err(err)?.checks;
    let results = py.detach(|| core_run_checks(selector, &cfg)).map_err(err)?;
    results
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", &r.name)?;
            d.set_item("passed", r.passed)?;
            d.set_item("statistic", r.statistic)?;
            d.set_item("threshold", r.threshold)?;
            d.set_item("details", &r.details)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn gen_surrogate_dataset(n: usize, d: usize, seed: u64, path: PathBuf) -> PyResult<PathBuf> {
    core_gen(n, d, seed, &path).map_err(err)
}

#[pymodule]
fn ot_orch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(wasserstein_1d, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein_discrete, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_plan, m)?)?;
    m.add_function(wrap_pyfunction!(barycenter_1d, m)?)?;
    m.add_function(wrap_pyfunction!(margin_bound, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_policy, m)?)?;
    m.add_function(wrap_pyfunction!(survival_prob, m)?)?;
    m.add_function(wrap_pyfunction!(frailty_reward, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(run_seeds, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mean_ci, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_checks, m)?)?;
    m.add_function(wrap_pyfunction!(gen_surrogate_dataset, m)?)?;
    Ok(())
}
