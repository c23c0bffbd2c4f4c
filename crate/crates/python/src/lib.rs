//! Python bindings for the netcoop simulator.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use netcoop::channel::{self, ChannelState};
use netcoop::clustering::{self, ClusterAssignment, Scheme};
use netcoop::harness::{self, ExperimentPlan, Target};
use netcoop::metrics;
use netcoop::precoding::{self, PrecodingSolution};
use netcoop::scenario::{self, drop_rng, Stream};
use netcoop::sensing;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Simulation configuration: TOML text plus `section.key=value` overrides.
#[pyclass(name = "Config", module = "netcoop_py")]
struct PyConfig {
    inner: scenario::Config,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = "", overrides = Vec::new()))]
    fn new(toml: &str, overrides: Vec<String>) -> PyResult<Self> {
        let inner = scenario::Config::from_toml_str(toml, &overrides).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        let inner = scenario::load_config_with(&path, &overrides).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn n_bs(&self) -> usize {
        self.inner.scenario.n_bs
    }

    #[getter]
    fn n_ue(&self) -> usize {
        self.inner.scenario.n_ue
    }

    #[getter]
    fn nt(&self) -> usize {
        self.inner.scenario.nt
    }

    #[getter]
    fn snr_sweep(&self) -> Vec<f64> {
        self.inner.scenario.snr_sweep.clone()
    }

    #[getter]
    fn n_drops(&self) -> usize {
        self.inner.scenario.n_drops
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.scenario.seed
    }

    fn __repr__(&self) -> String {
        let s = &self.inner.scenario;
        format!(
            "Config(n_bs={}, nt={}, n_ue={}, l={}, seed={})",
            s.n_bs, s.nt, s.n_ue, s.cluster_size_l, s.seed
        )
    }
}

/// One drop's channel realization.
#[pyclass(name = "Channel", module = "netcoop_py")]
struct PyChannel {
    inner: ChannelState,
}

#[pymethods]
impl PyChannel {
    /// Physical channels of drop `drop` for `config`.
    #[staticmethod]
    fn from_drop(config: &PyConfig, drop: usize) -> PyResult<Self> {
        let inner = harness::drop_channel(&config.inner, drop).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_bs(&self) -> usize {
        self.inner.n_bs()
    }

    #[getter]
    fn n_ue(&self) -> usize {
        self.inner.n_ue()
    }

    #[getter]
    fn nt(&self) -> usize {
        self.inner.nt
    }

    #[getter]
    fn noise_power(&self) -> f64 {
        self.inner.noise_power
    }

    /// Linear large-scale gains `[bs][ue]`.
    fn beta(&self) -> Vec<Vec<f64>> {
        self.inner.beta.clone()
    }

    fn rsrp_dbm(&self) -> Vec<Vec<f64>> {
        self.inner.rsrp_dbm.clone()
    }

    fn los(&self) -> Vec<Vec<bool>> {
        self.inner.los.clone()
    }

    /// Channel vector between `bs` and `ue` as `(re, im)` pairs.
    fn h(&self, bs: usize, ue: usize) -> PyResult<Vec<(f64, f64)>> {
        let v = self
            .inner
            .h
            .get(bs)
            .and_then(|r| r.get(ue))
            .ok_or_else(|| value_err(format!("no link ({bs}, {ue})")))?;
        Ok(v.iter().map(|c| (c.re, c.im)).collect())
    }

    /// Channel and per-BS budget at a transmit SNR; see the scenario's
    /// `normalize_gains` flag.
    fn operating_point(&self, snr_db: f64, p_max_per_bs: f64, normalize: bool) -> (PyChannel, f64) {
        let (inner, p) = self.inner.operating_point(snr_db, p_max_per_bs, normalize);
        (PyChannel { inner }, p)
    }
}

fn parse_scheme(name: &str) -> PyResult<Scheme> {
    name.parse::<Scheme>().map_err(value_err)
}

/// Serving sets and clusters of one scheme.
#[pyclass(name = "Assignment", module = "netcoop_py")]
struct PyAssignment {
    inner: ClusterAssignment,
}

#[pymethods]
impl PyAssignment {
    #[getter]
    fn scheme(&self) -> &'static str {
        self.inner.scheme.name()
    }

    #[getter]
    fn serving(&self) -> Vec<Vec<usize>> {
        self.inner.serving.clone()
    }

    #[getter]
    fn master(&self) -> Vec<usize> {
        self.inner.master.clone()
    }

    /// `(master, bss, ues)` per cluster.
    #[getter]
    fn clusters(&self) -> Vec<(usize, Vec<usize>, Vec<usize>)> {
        self.inner
            .clusters
            .iter()
            .map(|c| (c.master, c.bss.clone(), c.ues.clone()))
            .collect()
    }

    fn active_bs(&self) -> Vec<usize> {
        self.inner.active_bs()
    }
}

/// Assignment for `scheme` (`single`, `static`, `central`, `distributed`)
/// using the configured cluster size and static grouping.
#[pyfunction]
fn assign(config: &PyConfig, channel: &PyChannel, scheme: &str) -> PyResult<PyAssignment> {
    let sc = &config.inner.scenario;
    let inner = clustering::assign(
        parse_scheme(scheme)?,
        sc.grid_shape(),
        &channel.inner.rsrp_dbm,
        sc.static_groups,
        sc.cluster_size_l,
    )
    .map_err(value_err)?;
    Ok(PyAssignment { inner })
}

/// Precoders and solver statistics.
#[pyclass(name = "Solution", module = "netcoop_py")]
struct PySolution {
    inner: PrecodingSolution,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn sum_rate(&self) -> f64 {
        self.inner.final_rate()
    }

    #[getter]
    fn rate_trace(&self) -> Vec<f64> {
        self.inner.rate_trace.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn flops(&self) -> f64 {
        self.inner.flops
    }

    #[getter]
    fn flops_total(&self) -> f64 {
        self.inner.flops_total
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    fn bs_powers(&self, n_bs: usize) -> Vec<f64> {
        self.inner.bs_powers(n_bs)
    }

    fn total_power(&self) -> f64 {
        self.inner.total_power()
    }

    /// Precoder of `ue` stacked over its serving set, as `(re, im)` pairs.
    fn precoder(&self, ue: usize) -> PyResult<Vec<(f64, f64)>> {
        let w = self
            .inner
            .w
            .get(ue)
            .ok_or_else(|| value_err(format!("no UE {ue}")))?;
        Ok(w.iter().map(|c| (c.re, c.im)).collect())
    }
}

/// Runs the solver that belongs to the assignment's scheme.
#[pyfunction]
fn solve(
    channel: &PyChannel,
    assignment: &PyAssignment,
    p_max: f64,
    config: &PyConfig,
) -> PyResult<PySolution> {
    let inner = precoding::solve(
        &channel.inner,
        &assignment.inner,
        p_max,
        &config.inner.solver,
    )
    .map_err(value_err)?;
    Ok(PySolution { inner })
}

/// Per-UE SINR of `solution` on `channel`.
#[pyfunction]
fn sinr(channel: &PyChannel, solution: &PySolution) -> Vec<f64> {
    metrics::compute_sinr(&channel.inner, &solution.inner, channel.inner.noise_power)
}

/// Metrics of one solution on the true channel, as a dict.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    channel: &PyChannel,
    assignment: &PyAssignment,
    solution: &PySolution,
    config: &PyConfig,
    snr_db: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let m = metrics::evaluate(
        &channel.inner,
        &assignment.inner,
        &solution.inner,
        &cfg.metrics,
        cfg.scenario.bandwidth,
        snr_db,
    );
    let d = PyDict::new(py);
    d.set_item("scheme", m.scheme.name())?;
    d.set_item("snr_db", m.snr_db)?;
    d.set_item("sinr", m.sinr)?;
    d.set_item("rate", m.rate)?;
    d.set_item("sum_se", m.sum_se)?;
    d.set_item("coverage", m.coverage)?;
    d.set_item("throughput", m.throughput)?;
    d.set_item("energy_eff", m.energy_eff)?;
    d.set_item("p_tx", m.p_tx_total)?;
    d.set_item("flops", m.flops)?;
    d.set_item("iterations", m.iterations)?;
    Ok(d)
}

/// Builds, solves and evaluates one (drop, scheme, SNR) sample with perfect
/// channel knowledge.
#[pyfunction]
fn simulate_drop<'py>(
    py: Python<'py>,
    config: &PyConfig,
    drop: usize,
    scheme: &str,
    snr_db: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let physical = PyChannel::from_drop(config, drop)?;
    let sc = &config.inner.scenario;
    let (channel, p) = physical.operating_point(snr_db, sc.p_max_per_bs, sc.normalize_gains);
    let a = assign(config, &physical, scheme)?;
    let sol = solve(&channel, &a, p, config)?;
    evaluate(py, &channel, &a, &sol, config, snr_db)
}

#[pyfunction]
fn umi_pathloss(d2d: f64, fc_ghz: f64, h_bs: f64, h_ue: f64, los: bool) -> PyResult<f64> {
    channel::umi_pathloss(d2d, fc_ghz, h_bs, h_ue, los).map_err(value_err)
}

#[pyfunction]
fn los_probability(d2d: f64) -> f64 {
    channel::los_probability(d2d)
}

#[pyfunction]
fn rsrp(beta: f64, p_max: f64, nt: usize) -> f64 {
    channel::rsrp(beta, p_max, nt)
}

#[pyfunction]
fn noise_power(bandwidth: f64, noise_figure_db: f64) -> f64 {
    channel::noise_power(bandwidth, noise_figure_db)
}

#[pyfunction]
fn coverage_probability(sinr: Vec<f64>, threshold_db: f64) -> PyResult<f64> {
    metrics::coverage_probability(&sinr, threshold_db).map_err(value_err)
}

#[pyfunction]
fn throughput(t_slots: f64, compute_capacity: f64, flops: f64, bandwidth: f64, sum_se: f64) -> f64 {
    let model = metrics::ThroughputModel {
        t_slots,
        compute_capacity,
        flops,
    };
    metrics::throughput(&model, bandwidth, sum_se)
}

#[pyfunction]
fn energy_efficiency(
    sum_se: f64,
    bandwidth: f64,
    n_active_bs: usize,
    p_static: f64,
    p_tx_total: f64,
) -> f64 {
    metrics::energy_efficiency(sum_se, bandwidth, n_active_bs, p_static, p_tx_total)
}

/// Reference-path synchronization over noise draws of the configured scene.
/// Returns one dict per path with truth, mean estimates and RMSEs.
#[pyfunction]
#[pyo3(signature = (config, snr_db = None, n_draws = None))]
fn sensing_run<'py>(
    py: Python<'py>,
    config: &PyConfig,
    snr_db: Option<f64>,
    n_draws: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let s = &config.inner.sensing;
    let snr = snr_db.unwrap_or(s.snr_db);
    let est = s.estimator();
    let draws = (0..n_draws.unwrap_or(s.n_draws))
        .map(|d| {
            sensing::run_draw(
                &s.scene,
                snr,
                &est,
                &mut drop_rng(s.seed, d, Stream::Sensing),
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    sensing::summarize(&s.scene, &draws)
        .into_iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("path", p.path)?;
            d.set_item("truth", (p.truth.distance, p.truth.velocity))?;
            d.set_item("mean_raw", p.mean_raw)?;
            d.set_item("mean_comp", p.mean_comp)?;
            d.set_item("rmse_raw", p.rmse_raw)?;
            d.set_item("rmse_comp", p.rmse_comp)?;
            Ok(d)
        })
        .collect()
}

/// Full sweep written to `out_dir`; returns `(samples, failures)`.
#[pyfunction]
#[pyo3(signature = (config, out_dir, schemes = None, targets = None, jobs = None, overwrite = false))]
fn run_experiment(
    config: &PyConfig,
    out_dir: PathBuf,
    schemes: Option<Vec<String>>,
    targets: Option<Vec<String>>,
    jobs: Option<usize>,
    overwrite: bool,
) -> PyResult<(usize, usize)> {
    let mut plan = ExperimentPlan::from_config(&config.inner, out_dir);
    if let Some(s) = schemes {
        plan.schemes = s.iter().map(|n| parse_scheme(n)).collect::<PyResult<_>>()?;
    }
    if let Some(t) = targets {
        plan.targets = t
            .iter()
            .map(|n| n.parse::<Target>().map_err(value_err))
            .collect::<PyResult<_>>()?;
    }
    plan.jobs = jobs;
    plan.overwrite = overwrite;
    let res = harness::run_experiment(&plan, &config.inner).map_err(value_err)?;
    Ok((res.total_samples, res.failures.len()))
}

#[pymodule]
pub fn netcoop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyChannel>()?;
    m.add_class::<PyAssignment>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(assign, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(sinr, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_drop, m)?)?;
    m.add_function(wrap_pyfunction!(umi_pathloss, m)?)?;
    m.add_function(wrap_pyfunction!(los_probability, m)?)?;
    m.add_function(wrap_pyfunction!(rsrp, m)?)?;
    m.add_function(wrap_pyfunction!(noise_power, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_probability, m)?)?;
    m.add_function(wrap_pyfunction!(throughput, m)?)?;
    m.add_function(wrap_pyfunction!(energy_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(sensing_run, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
