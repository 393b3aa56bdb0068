//! Stochastic integration of the conditional Gaussian dynamics together with
//! its ω-derivatives.
//!
//! One step advances
//!
//! ```text
//! dr   = A r dt + (E − σB) dw/√2
//! dσ   = [Aσ + σAᵀ + D − (E − σB)(E − σB)ᵀ] dt
//! d∂r  = [∂A r + A ∂r + (E − σB)Bᵀ ∂r] dt − ∂σ B dw/√2
//! d∂σ  = [∂A σ + σ ∂Aᵀ + A ∂σ + ∂σ Aᵀ + ∂σ B (E − σB)ᵀ + (E − σB) Bᵀ ∂σ] dt
//! dy   = −√2 (Bᵀ r)_q dt + dw
//! ```
//!
//! with Euler–Maruyama for the stochastic pair and explicit Euler for the
//! Riccati pair. Only the first Wiener component is drawn since the second
//! multiplies a zero column of `E − σB`. The measurement increment, the
//! homodyne Fisher increment and the policy query all use pre-step values.

use std::f64::consts::SQRT_2;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{build_matrices, riccati_rhs, GaussianState, SystemMatrices, SystemParams, DET_TOLERANCE};
use crate::linalg::{Mat2, Sym2, Vec2};
use crate::metrology::{fhom_increment, gaussian_qfi};
use crate::policy::{Observation, Policy};
use crate::rng::{wiener_increment, Purpose, Stream, StreamKey};

pub const DEFAULT_STRIDE: u64 = 100;

/// `(∂_ω r, ∂_ω σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TangentState {
    pub dr: Vec2,
    pub dsigma: Sym2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub r0: Vec2,
    pub n_th: f64,
}

impl Default for InitialCondition {
    /// Thermal state with five excitations at the origin.
    fn default() -> Self {
        InitialCondition { r0: Vec2::ZERO, n_th: 5.0 }
    }
}

impl InitialCondition {
    pub fn vacuum() -> Self {
        InitialCondition { r0: Vec2::ZERO, n_th: 0.0 }
    }
}

/// How each trajectory of an ensemble picks its initial condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSampler {
    Fixed(InitialCondition),
    /// `r_q, r_p ~ U[−r_max, r_max]`, `n_th ~ U[0, n_th_max]`.
    Uniform { r_max: f64, n_th_max: f64 },
}

impl InitSampler {
    /// Randomisation used for training episodes.
    pub fn training() -> Self {
        InitSampler::Uniform { r_max: 3.0, n_th_max: 5.0 }
    }

    pub fn sample(&self, key: StreamKey) -> InitialCondition {
        match *self {
            InitSampler::Fixed(init) => init,
            InitSampler::Uniform { r_max, n_th_max } => {
                let mut rng = key.stream(Purpose::Init);
                let q = rng.random_range(-r_max..=r_max);
                let p = rng.random_range(-r_max..=r_max);
                let n_th = rng.random_range(0.0..=n_th_max);
                InitialCondition { r0: Vec2::new(q, p), n_th }
            }
        }
    }
}

/// Complete per-trajectory integrator state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub state: GaussianState,
    pub tangent: TangentState,
    pub t: f64,
    pub step_index: u64,
    /// `2 ∫ dt (∂r)ᵀ B Bᵀ (∂r)` accumulated so far.
    pub fhom_integral: f64,
    /// Measurement increment of the most recent step (0 after reset).
    pub last_dy: f64,
    /// QFI of the current conditional state.
    pub qfi: f64,
    rng: Stream,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub dy: f64,
    pub dw: f64,
    pub fhom_increment: f64,
    /// `fhom_increment + Q(after) − Q(before)`.
    pub reward_increment: f64,
}

pub fn reset(params: &SystemParams, init: &InitialCondition, key: StreamKey) -> Result<TrajectoryState> {
    params.validate()?;
    if !(init.n_th >= 0.0) || !init.n_th.is_finite() {
        return Err(Error::InvalidParams(format!("n_th must be finite and >= 0, got {}", init.n_th)));
    }
    if !init.r0.is_finite() {
        return Err(Error::InvalidParams(format!("r0 must be finite, got {:?}", init.r0)));
    }
    Ok(TrajectoryState {
        state: GaussianState::thermal(init.r0, init.n_th),
        tangent: TangentState::default(),
        t: 0.0,
        step_index: 0,
        fhom_integral: 0.0,
        last_dy: 0.0,
        qfi: 0.0,
        rng: key.stream(Purpose::Noise),
    })
}

impl TrajectoryState {
    pub fn observation(&self) -> Observation {
        Observation::from_trajectory(self)
    }

    /// Draws `dw ~ N(0, dt)` from the trajectory's noise stream and advances.
    pub fn step(&mut self, params: &SystemParams, omega_fb: f64) -> Result<StepResult> {
        let dw = wiener_increment(&mut self.rng, params.dt);
        self.advance(params, omega_fb, dw)
    }

    /// Advances conditioned on a given measurement increment `dy` instead of
    /// fresh noise, i.e. filters a recorded photocurrent. The noise stream is
    /// not consumed.
    pub fn step_with_record(&mut self, params: &SystemParams, omega_fb: f64, dy: f64) -> Result<StepResult> {
        let dw = dy - self.measurement_mean(params) * params.dt;
        self.advance(params, omega_fb, dw)
    }

    /// `−√2 (Bᵀ r)_q = √(2ηκ) r_q`, the drift of the photocurrent.
    pub fn measurement_mean(&self, params: &SystemParams) -> f64 {
        SQRT_2 * params.measurement_strength() * self.state.r.q
    }

    fn advance(&mut self, params: &SystemParams, omega_fb: f64, dw: f64) -> Result<StepResult> {
        let dt = params.dt;
        let m = build_matrices(params, omega_fb);
        let (r, dr) = (self.state.r, self.tangent.dr);
        let sigma = self.state.sigma.to_mat();
        let dsigma = self.tangent.dsigma.to_mat();
        let gain = m.e - sigma * m.b;
        let noise = Vec2::new(dw / SQRT_2, 0.0);

        let dy = -SQRT_2 * (m.b.transpose() * r).q * dt + dw;
        let fhom_inc = fhom_increment(&self.tangent, params);

        let r_new = r + (m.a * r) * dt + gain * noise;
        let dr_drift = m.da * r + m.a * dr + gain * (m.b.transpose() * dr);
        let dr_new = dr + dr_drift * dt - (dsigma * m.b) * noise;
        let sigma_new = self.state.sigma + riccati_rhs(&m, &self.state.sigma) * dt;
        let dsigma_new = (dsigma + tangent_riccati_rhs(&m, sigma, dsigma, gain) * dt).symmetrize();

        let next_index = self.step_index + 1;
        let next = GaussianState { r: r_new, sigma: sigma_new };
        check_step(&next, &dr_new, &dsigma_new, next_index, integrator_det_tolerance(params))?;
        let tangent = TangentState { dr: dr_new, dsigma: dsigma_new };
        let qfi = gaussian_qfi(&next, &tangent).map_err(|e| Error::UnphysicalState {
            step: next_index,
            reason: e.to_string(),
        })?;

        let reward_increment = fhom_inc + (qfi - self.qfi);
        self.state = next;
        self.tangent = tangent;
        self.qfi = qfi;
        self.fhom_integral += fhom_inc;
        self.step_index = next_index;
        self.t = next_index as f64 * dt;
        self.last_dy = dy;
        Ok(StepResult { dy, dw, fhom_increment: fhom_inc, reward_increment })
    }
}

fn tangent_riccati_rhs(m: &SystemMatrices, sigma: Mat2, dsigma: Mat2, gain: Mat2) -> Mat2 {
    m.da * sigma
        + sigma * m.da.transpose()
        + m.a * dsigma
        + dsigma * m.a.transpose()
        + dsigma * m.b * gain.transpose()
        + gain * m.b.transpose() * dsigma
}

/// Allowed undershoot of `det σ` below 1 for integrated states. Explicit
/// Euler steps of the Riccati equation from (nearly) pure states undershoot
/// by up to about `0.35 κ dt`.
pub fn integrator_det_tolerance(params: &SystemParams) -> f64 {
    DET_TOLERANCE + params.kappa * params.dt
}

fn check_step(state: &GaussianState, dr: &Vec2, dsigma: &Sym2, step: u64, det_tol: f64) -> Result<()> {
    let unphysical = |reason: String| Err(Error::UnphysicalState { step, reason });
    if !state.r.is_finite() || !state.sigma.is_finite() || !dr.is_finite() || !dsigma.is_finite() {
        return unphysical("non-finite entries".into());
    }
    let det = state.sigma.det();
    if det < 1.0 - det_tol || state.sigma.qq <= 0.0 {
        return unphysical(format!("det sigma = {det} below the uncertainty bound"));
    }
    Ok(())
}

/// One point of a recorded time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub step: u64,
    pub state: GaussianState,
    pub tangent: TangentState,
    /// Feedback chosen by the policy at this state.
    pub omega_fb: f64,
    /// Measurement increment of the step that led here.
    pub dy: f64,
    pub fhom_integral: f64,
}

impl Sample {
    fn of(traj: &TrajectoryState, omega_fb: f64) -> Self {
        Sample {
            t: traj.t,
            step: traj.step_index,
            state: traj.state,
            tangent: traj.tangent,
            omega_fb,
            dy: traj.last_dy,
            fhom_integral: traj.fhom_integral,
        }
    }

    pub fn qfi(&self) -> Result<f64> {
        gaussian_qfi(&self.state, &self.tangent)
    }
}

pub const TRACE_HEADER: &str =
    "t,r_q,r_p,s_qq,s_qp,s_pp,dr_q,dr_p,ds_qq,ds_qp,ds_pp,omega_fb,dy,fhom_integral";

/// Trace CSV with [`TRACE_HEADER`] columns.
pub fn trace_csv(samples: &[Sample]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for s in samples {
        let (st, g) = (&s.state, &s.tangent);
        crate::csv::push_row(
            &mut out,
            &[
                s.t, st.r.q, st.r.p, st.sigma.qq, st.sigma.qp, st.sigma.pp, g.dr.q, g.dr.p, g.dsigma.qq,
                g.dsigma.qp, g.dsigma.pp, s.omega_fb, s.dy, s.fhom_integral,
            ],
            &[],
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub horizon_steps: u64,
    /// Record every `stride` steps (plus the final step); `None` records
    /// nothing.
    pub stride: Option<u64>,
}

impl RunOptions {
    pub fn new(horizon_steps: u64) -> Self {
        RunOptions { horizon_steps, stride: Some(DEFAULT_STRIDE) }
    }

    pub fn with_stride(mut self, stride: Option<u64>) -> Self {
        self.stride = stride.map(|s| s.max(1));
        self
    }

    /// Step indices at which samples are recorded.
    pub fn grid_steps(&self) -> Vec<u64> {
        let Some(stride) = self.stride else { return Vec::new() };
        let mut steps: Vec<u64> = (0..=self.horizon_steps).step_by(stride as usize).collect();
        if steps.last() != Some(&self.horizon_steps) {
            steps.push(self.horizon_steps);
        }
        steps
    }

    pub fn grid_times(&self, dt: f64) -> Vec<f64> {
        self.grid_steps().into_iter().map(|n| n as f64 * dt).collect()
    }

    fn records(&self, n: u64) -> bool {
        match self.stride {
            Some(s) => n.is_multiple_of(s) || n == self.horizon_steps,
            None => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryRun {
    pub final_state: TrajectoryState,
    pub samples: Vec<Sample>,
}

/// Integrates one trajectory, asking `policy` for `ω_fb` before every step.
pub fn run_trajectory(
    params: &SystemParams,
    init: &InitialCondition,
    key: StreamKey,
    opts: &RunOptions,
    policy: &dyn Policy,
) -> Result<TrajectoryRun> {
    let mut traj = reset(params, init, key)?;
    let mut action_rng = key.stream(Purpose::Action);
    let mut samples = Vec::new();
    for n in 0..=opts.horizon_steps {
        let record = opts.records(n);
        if n == opts.horizon_steps && !record {
            break;
        }
        let omega_fb = policy
            .act(&traj.observation(), params, &mut action_rng)
            .map_err(|e| Error::Policy(format!("{} at step {n}: {e}", policy.label())))?;
        if !omega_fb.is_finite() {
            return Err(Error::Policy(format!("{} returned non-finite action at step {n}", policy.label())));
        }
        if record {
            samples.push(Sample::of(&traj, omega_fb));
        }
        if n < opts.horizon_steps {
            traj.step(params, omega_fb)?;
        }
    }
    Ok(TrajectoryRun { final_state: traj, samples })
}

/// Ensemble definition shared by the batch drivers.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleSpec {
    pub params: SystemParams,
    pub init: InitSampler,
    pub n_traj: usize,
    pub opts: RunOptions,
    pub base_seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
}

impl EnsembleSpec {
    pub fn key(&self, index: usize) -> StreamKey {
        StreamKey::new(self.base_seed, index as u64)
    }

    pub fn run_one(&self, index: usize, policy: &dyn Policy) -> Result<TrajectoryRun> {
        let key = self.key(index);
        let init = self.init.sample(key);
        run_trajectory(&self.params, &init, key, &self.opts, policy)
    }
}

/// Trajectories are computed in parallel in chunks of this many and handed to
/// the consumer in index order.
pub const ENSEMBLE_CHUNK: usize = 256;

/// Runs the ensemble and feeds `(index, result)` pairs to `consume` in
/// increasing index order, independently of the worker count.
pub fn for_each_trajectory<F>(spec: &EnsembleSpec, policy: &dyn Policy, consume: F) -> Result<()>
where
    F: FnMut(usize, Result<TrajectoryRun>) -> Result<()>,
{
    map_trajectories(spec, policy, |_, run| Ok(run), consume)
}

/// Like [`for_each_trajectory`] but applies `map` to every successful run on
/// the worker threads before handing the result to `consume`.
pub fn map_trajectories<T, M, F>(spec: &EnsembleSpec, policy: &dyn Policy, map: M, mut consume: F) -> Result<()>
where
    T: Send,
    M: Fn(usize, TrajectoryRun) -> Result<T> + Sync,
    F: FnMut(usize, Result<T>) -> Result<()>,
{
    if spec.n_traj == 0 {
        return Err(Error::InvalidParams("n_traj must be >= 1".into()));
    }
    spec.params.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut start = 0;
    while start < spec.n_traj {
        let end = (start + ENSEMBLE_CHUNK).min(spec.n_traj);
        let chunk: Vec<Result<T>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|k| spec.run_one(k, policy).and_then(|run| map(k, run)))
                .collect()
        });
        for (k, result) in (start..end).zip(chunk) {
            consume(k, result)?;
        }
        start = end;
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct Ensemble {
    /// Successful trajectories with their indices, in index order.
    pub runs: Vec<(usize, TrajectoryRun)>,
    pub failures: Vec<(usize, Error)>,
}

impl Ensemble {
    pub fn n_failed(&self) -> usize {
        self.failures.len()
    }

    pub fn records(&self) -> impl Iterator<Item = &[Sample]> {
        self.runs.iter().map(|(_, run)| run.samples.as_slice())
    }
}

/// Runs `spec.n_traj` trajectories keyed by `(base_seed, k)` and keeps all
/// records in memory.
pub fn run_ensemble(spec: &EnsembleSpec, policy: &dyn Policy) -> Result<Ensemble> {
    let mut ensemble = Ensemble::default();
    for_each_trajectory(spec, policy, |k, result| {
        match result {
            Ok(run) => ensemble.runs.push((k, run)),
            Err(e) => ensemble.failures.push((k, e)),
        }
        Ok(())
    })?;
    Ok(ensemble)
}

/// Integrates the Riccati equation alone at fixed `ω_fb` until
/// `max|dσ/dt| < tol` (or until the Euler update no longer changes σ) and
/// returns the steady state.
pub fn riccati_steady_state(params: &SystemParams, omega_fb: f64, sigma0: Sym2, tol: f64, max_time: f64) -> Result<Sym2> {
    let m = build_matrices(params, omega_fb);
    let max_steps = (max_time / params.dt).ceil() as u64;
    let mut sigma = sigma0;
    for _ in 0..max_steps {
        let rhs = riccati_rhs(&m, &sigma);
        if rhs.max_abs() < tol {
            return Ok(sigma);
        }
        let next = sigma + rhs * params.dt;
        if next == sigma {
            return Ok(sigma);
        }
        sigma = next;
        if !sigma.is_finite() {
            return Err(Error::UnphysicalState { step: 0, reason: "Riccati integration diverged".into() });
        }
    }
    Err(Error::InvalidParams(format!("Riccati equation did not converge within t = {max_time}")))
}
