//! Python bindings: system parameters, analytic steady states, Fisher
//! information functionals, ensemble runs, actor weights and the training
//! environment.
//!
//! Vectors are `(q, p)` tuples and symmetric covariances `(qq, qp, pp)`
//! tuples.

use feedback_metrology::env::{EpisodeConfig, ErrorReply, ResetInfo, StepInfo, VecEnv};
use feedback_metrology::policy::OBS_DIM;
use feedback_metrology as fm;
use fm::{GaussianState, InitSampler, InitialCondition, Observation, Sym2, TangentState, Vec2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

type V = (f64, f64);
type S = (f64, f64, f64);
type Infos<'py> = Vec<Bound<'py, PyDict>>;
type Transition<'py> = (Vec<Vec<f64>>, Vec<f64>, Vec<bool>, Vec<bool>, Infos<'py>);

fn err(e: fm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn reply_err(e: ErrorReply) -> PyErr {
    PyValueError::new_err(format!("{}: {}", e.error.code, e.error.msg))
}

fn vec2((q, p): V) -> Vec2 {
    Vec2::new(q, p)
}

fn sym2((qq, qp, pp): S) -> Sym2 {
    Sym2::new(qq, qp, pp)
}

fn sym_tuple(s: Sym2) -> S {
    (s.qq, s.qp, s.pp)
}

/// Model parameters in units of κ.
#[pyclass(name = "SystemParams", get_all, set_all, from_py_object)]
#[derive(Clone, Copy)]
struct PySystemParams {
    omega: f64,
    chi: f64,
    kappa: f64,
    eta: f64,
    dt: f64,
}

impl PySystemParams {
    fn inner(&self) -> PyResult<fm::SystemParams> {
        fm::SystemParams::new(self.omega, self.chi, self.kappa, self.eta, self.dt).map_err(err)
    }
}

#[pymethods]
impl PySystemParams {
    #[new]
    #[pyo3(signature = (omega=0.1, chi=0.49, kappa=1.0, eta=0.9, dt=1e-3))]
    fn new(omega: f64, chi: f64, kappa: f64, eta: f64, dt: f64) -> PyResult<Self> {
        fm::SystemParams::new(omega, chi, kappa, eta, dt).map_err(err)?;
        Ok(PySystemParams { omega, chi, kappa, eta, dt })
    }

    fn is_stable(&self) -> PyResult<bool> {
        let p = self.inner()?;
        Ok(fm::stability_check(&fm::gaussian::drift_matrix(&p, 0.0)))
    }

    fn __repr__(&self) -> String {
        format!(
            "SystemParams(omega={}, chi={}, kappa={}, eta={}, dt={})",
            self.omega, self.chi, self.kappa, self.eta, self.dt
        )
    }
}

/// Conditional steady-state covariance with the rotation cancelled.
#[pyfunction]
fn steady_state_covariance(params: &PySystemParams) -> PyResult<S> {
    fm::steady_state_covariance(&params.inner()?).map(sym_tuple).map_err(err)
}

/// Riccati steady state at a fixed feedback frequency, found by integration.
#[pyfunction]
#[pyo3(signature = (params, omega_fb=0.0, tol=1e-12, max_time=5000.0))]
fn riccati_steady_state(params: &PySystemParams, omega_fb: f64, tol: f64, max_time: f64) -> PyResult<S> {
    fm::engine::riccati_steady_state(&params.inner()?, omega_fb, Sym2::IDENTITY, tol, max_time)
        .map(sym_tuple)
        .map_err(err)
}

#[pyfunction]
fn squeezing_db(sigma: S) -> PyResult<f64> {
    fm::squeezing_db(&sym2(sigma)).map_err(err)
}

#[pyfunction]
fn purity(sigma: S) -> PyResult<f64> {
    fm::purity(&sym2(sigma)).map_err(err)
}

/// Quantum Fisher information of a Gaussian state with derivatives
/// `(dr, dsigma)`.
#[pyfunction]
fn gaussian_qfi(r: V, sigma: S, dr: V, dsigma: S) -> PyResult<f64> {
    let state = GaussianState { r: vec2(r), sigma: sym2(sigma) };
    fm::gaussian_qfi(&state, &TangentState { dr: vec2(dr), dsigma: sym2(dsigma) }).map_err(err)
}

/// Fisher information of a final quadrature measurement at angle `theta`.
#[pyfunction]
#[pyo3(signature = (r, sigma, dr, dsigma, theta, z=fm::metrology::HOMODYNE_Z))]
fn final_homodyne_fi(r: V, sigma: S, dr: V, dsigma: S, theta: f64, z: f64) -> f64 {
    let state = GaussianState { r: vec2(r), sigma: sym2(sigma) };
    let tangent = TangentState { dr: vec2(dr), dsigma: sym2(dsigma) };
    fm::final_homodyne_fi(&state, &tangent, &fm::StrongMeasurementSpec { theta, z })
}

/// Best homodyne angle and its Fisher information.
#[pyfunction]
fn optimize_final_homodyne(r: V, sigma: S, dr: V, dsigma: S) -> V {
    let state = GaussianState { r: vec2(r), sigma: sym2(sigma) };
    fm::optimize_final_homodyne(&state, &TangentState { dr: vec2(dr), dsigma: sym2(dsigma) })
}

/// Runs an ensemble and returns the averaged Fisher-information curves as a
/// dict of lists keyed `t, fhom_over_t, qbar_c, qeff_over_t, std_err`.
#[pyfunction]
#[pyo3(signature = (params, strategy="none", n_traj=100, horizon_steps=10_000, stride=None, seed=0, r0=(0.0, 0.0), n_th=5.0, jobs=0))]
#[allow(clippy::too_many_arguments)]
fn fisher_curves<'py>(
    py: Python<'py>,
    params: &PySystemParams,
    strategy: &str,
    n_traj: usize,
    horizon_steps: u64,
    stride: Option<u64>,
    seed: u64,
    r0: V,
    n_th: f64,
    jobs: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let policy = fm::Strategy::parse(strategy).map_err(err)?;
    let spec = fm::EnsembleSpec {
        params: params.inner()?,
        init: InitSampler::Fixed(InitialCondition { r0: vec2(r0), n_th }),
        n_traj,
        opts: fm::RunOptions::new(horizon_steps).with_stride(stride),
        base_seed: seed,
        jobs,
    };
    let times = spec.opts.grid_times(spec.params.dt);
    let report = py
        .detach(|| {
            let ens = fm::run_ensemble(&spec, &policy)?;
            if let Some((k, e)) = ens.failures.first() {
                return Err(fm::Error::Config(format!("trajectory {k} failed: {e}")));
            }
            fm::effective_qfi(ens.records(), &times)
        })
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("t", report.times)?;
    out.set_item("fhom_over_t", report.fhom_over_t)?;
    out.set_item("qbar_c", report.qbar_c)?;
    out.set_item("qeff_over_t", report.qeff_over_t)?;
    out.set_item("std_err", report.std_err)?;
    Ok(out)
}

/// A single trajectory as a list of per-sample dicts.
#[pyfunction]
#[pyo3(signature = (params, strategy="none", horizon_steps=10_000, stride=None, seed=0, r0=(0.0, 0.0), n_th=5.0))]
#[allow(clippy::too_many_arguments)]
fn run_trajectory<'py>(
    py: Python<'py>,
    params: &PySystemParams,
    strategy: &str,
    horizon_steps: u64,
    stride: Option<u64>,
    seed: u64,
    r0: V,
    n_th: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let policy = fm::Strategy::parse(strategy).map_err(err)?;
    let init = InitialCondition { r0: vec2(r0), n_th };
    let opts = fm::RunOptions::new(horizon_steps).with_stride(stride);
    let p = params.inner()?;
    let run = py
        .detach(|| fm::run_trajectory(&p, &init, fm::StreamKey::single(seed), &opts, &policy))
        .map_err(err)?;
    run.samples
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("t", s.t)?;
            d.set_item("r", (s.state.r.q, s.state.r.p))?;
            d.set_item("sigma", sym_tuple(s.state.sigma))?;
            d.set_item("dr", (s.tangent.dr.q, s.tangent.dr.p))?;
            d.set_item("dsigma", sym_tuple(s.tangent.dsigma))?;
            d.set_item("omega_fb", s.omega_fb)?;
            d.set_item("fhom_integral", s.fhom_integral)?;
            d.set_item("qfi", s.qfi().map_err(err)?)?;
            Ok(d)
        })
        .collect()
}

/// Actor network loaded from a `.json` or `.txt` weight file.
#[pyclass(name = "Actor")]
struct PyActor {
    weights: fm::NeuralWeights,
}

#[pymethods]
impl PyActor {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        fm::load_weights(std::path::Path::new(path)).map(|weights| PyActor { weights }).map_err(err)
    }

    /// Deterministic action for one observation.
    fn forward(&self, obs: Vec<f64>) -> PyResult<f64> {
        let obs: [f64; OBS_DIM] = obs
            .try_into()
            .map_err(|o: Vec<f64>| PyValueError::new_err(format!("expected {OBS_DIM} observations, got {}", o.len())))?;
        self.weights.forward(&Observation(obs)).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.weights.save(std::path::Path::new(path)).map_err(err)
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.weights.layer_sizes.clone()
    }
}

fn reset_info<'py>(py: Python<'py>, info: &ResetInfo) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("protocol_version", info.protocol_version)?;
    d.set_item("obs_layout_version", info.obs_layout_version)?;
    d.set_item("r0", info.r0.to_vec())?;
    d.set_item("n_th", info.n_th)?;
    Ok(d)
}

fn step_info<'py>(py: Python<'py>, info: &StepInfo) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", info.t)?;
    d.set_item("fhom_integral", info.fhom_integral)?;
    d.set_item("qfi", info.qfi)?;
    d.set_item("step", info.step)?;
    if let Some(obs) = &info.terminal_obs {
        d.set_item("terminal_obs", obs.clone())?;
    }
    Ok(d)
}

/// In-process version of the environment server. `reset` and `step` return
/// the same values the protocol sends: batched lists, one entry per
/// sub-environment.
#[pyclass(name = "Env")]
struct PyEnv {
    inner: VecEnv,
}

#[pymethods]
impl PyEnv {
    /// `config` is the TOML text accepted by the environment server.
    #[new]
    #[pyo3(signature = (config=None, n_envs=1))]
    fn new(config: Option<&str>, n_envs: usize) -> PyResult<Self> {
        let config = match config {
            Some(text) => EpisodeConfig::from_toml(text).map_err(err)?,
            None => EpisodeConfig::default(),
        };
        Ok(PyEnv { inner: VecEnv::new(config, n_envs).map_err(err)? })
    }

    #[getter]
    fn n_envs(&self) -> usize {
        self.inner.n_envs()
    }

    /// Returns `(obs, infos)`.
    fn reset<'py>(&mut self, py: Python<'py>, seed: u64) -> PyResult<(Vec<Vec<f64>>, Infos<'py>)> {
        let reply = self.inner.reset(seed).map_err(reply_err)?;
        let infos = reply.info.iter().map(|i| reset_info(py, i)).collect::<PyResult<_>>()?;
        Ok((reply.obs, infos))
    }

    /// Returns `(obs, reward, done, truncated, infos)`.
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        actions: Vec<f64>,
    ) -> PyResult<Transition<'py>> {
        let reply = self.inner.step(&actions).map_err(reply_err)?;
        let infos = reply.info.iter().map(|i| step_info(py, i)).collect::<PyResult<_>>()?;
        Ok((reply.obs, reply.reward, reply.done, reply.truncated, infos))
    }
}

#[pymodule]
fn feedback_metrology_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemParams>()?;
    m.add_class::<PyActor>()?;
    m.add_class::<PyEnv>()?;
    m.add("OBS_DIM", OBS_DIM)?;
    m.add_function(wrap_pyfunction!(steady_state_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(riccati_steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(squeezing_db, m)?)?;
    m.add_function(wrap_pyfunction!(purity, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_qfi, m)?)?;
    m.add_function(wrap_pyfunction!(final_homodyne_fi, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_final_homodyne, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_curves, m)?)?;
    m.add_function(wrap_pyfunction!(run_trajectory, m)?)?;
    Ok(())
}
