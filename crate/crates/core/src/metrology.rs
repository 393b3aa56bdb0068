//! Fisher-information functionals.
//!
//! * [`gaussian_qfi`]: QFI of a single-mode Gaussian state with respect to ω,
//!   from the state and its ω-derivatives.
//! * [`fhom_increment`]: per-step contribution `2 dt (∂r)ᵀ B Bᵀ (∂r)` to the
//!   classical Fisher information of the homodyne record.
//! * [`effective_qfi`]: ensemble average `Q_eff = F_hom + Q̄_c` on a time grid.
//! * [`final_homodyne_fi`] / [`optimize_final_homodyne`]: information
//!   extracted by a final (near-)homodyne measurement at angle θ.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::engine::{Sample, TangentState};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianState, SystemParams};
use crate::linalg::{Mat2, Sym2};
use crate::stats::{MeanAccumulator, NeumaierSum};

/// Below this value of `1 − μ⁴` the purity-derivative term is dropped.
pub const PURE_STATE_EPS: f64 = 1e-9;

/// Measurement squeezing used to approximate an ideal homodyne detector.
pub const HOMODYNE_Z: f64 = 1e-8;
/// Points of the coarse θ scan over `[−π/2, π/2]`.
pub const THETA_GRID_POINTS: usize = 181;
pub const THETA_TOLERANCE: f64 = 1e-6;

/// Quantum Fisher information of the Gaussian state family at ω:
///
/// ```text
/// Q = Tr[(σ⁻¹∂σ)²] / (2(1+μ²)) + 2(∂μ)² / (1−μ⁴) + 2 (∂r)ᵀ σ⁻¹ (∂r)
/// ```
///
/// with `μ = 1/√det σ` and `∂μ = −μ Tr[σ⁻¹∂σ]/2`.
pub fn gaussian_qfi(state: &GaussianState, tangent: &TangentState) -> Result<f64> {
    let inv = state
        .sigma
        .inverse()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("singular covariance {:?}", state.sigma)))?;
    let x = inv.to_mat() * tangent.dsigma.to_mat();
    let mu = 1.0 / state.sigma.det().sqrt();
    let mu2 = mu * mu;
    let covariance_term = (x * x).trace() / (2.0 * (1.0 + mu2));
    let one_minus_mu4 = 1.0 - mu2 * mu2;
    let purity_term = if one_minus_mu4 < PURE_STATE_EPS {
        0.0
    } else {
        let dmu = -0.5 * mu * x.trace();
        2.0 * dmu * dmu / one_minus_mu4
    };
    let displacement_term = 2.0 * inv.quad(tangent.dr);
    Ok((covariance_term + purity_term + displacement_term).max(0.0))
}

/// `2 dt ηκ (∂r_q)²`.
pub fn fhom_increment(tangent: &TangentState, params: &SystemParams) -> f64 {
    2.0 * params.dt * params.eta * params.kappa * tangent.dr.q * tangent.dr.q
}

/// Per-step reward: the increment of `f_hom + Q[ϱ_c]` across one step.
///
/// Summed over an episode this telescopes to `f_hom(T) + Q(T) − Q(0)`.
pub fn reward_increment(
    tangent_before: &TangentState,
    state_before: &GaussianState,
    tangent_after: &TangentState,
    state_after: &GaussianState,
    params: &SystemParams,
) -> Result<f64> {
    let before = gaussian_qfi(state_before, tangent_before)?;
    let after = gaussian_qfi(state_after, tangent_after)?;
    Ok(fhom_increment(tangent_before, params) + (after - before))
}

/// Bound on `δω √T` from the quantum Cramér–Rao inequality.
pub fn qcrb_bound(qeff: f64, t: f64) -> Result<f64> {
    if !(qeff > 0.0) {
        return Err(Error::InvalidParams(format!("qeff must be > 0, got {qeff}")));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParams(format!("t must be > 0, got {t}")));
    }
    Ok(1.0 / (qeff / t).sqrt())
}

/// Ensemble Fisher information on a time grid.
///
/// At `t = 0` the per-time quantities are reported as 0 (all tangents vanish
/// at reset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    pub times: Vec<f64>,
    pub fhom_over_t: Vec<f64>,
    pub qbar_c: Vec<f64>,
    pub qeff_over_t: Vec<f64>,
    /// Standard error of `qeff_over_t`.
    pub std_err: Vec<f64>,
    pub n_traj: usize,
}

impl FisherReport {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `F_hom` at grid point `i` (not divided by time).
    pub fn fhom(&self, i: usize) -> f64 {
        self.fhom_over_t[i] * self.times[i]
    }

    pub fn qeff(&self, i: usize) -> f64 {
        self.fhom(i) + self.qbar_c[i]
    }

    /// CSV with columns `t, fhom_over_t, qbar_c, qeff_over_t, stderr_qeff, n_traj`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,fhom_over_t,qbar_c,qeff_over_t,stderr_qeff,n_traj\n");
        for i in 0..self.len() {
            crate::csv::push_row(
                &mut out,
                &[self.times[i], self.fhom_over_t[i], self.qbar_c[i], self.qeff_over_t[i], self.std_err[i]],
                &[self.n_traj as u64],
            );
        }
        out
    }
}

/// Streaming reduction behind [`effective_qfi`]. Trajectories must be added
/// in a fixed order for bitwise-reproducible output.
#[derive(Debug, Clone)]
pub struct FisherAccumulator {
    times: Vec<f64>,
    fhom: Vec<MeanAccumulator>,
    qfi: Vec<MeanAccumulator>,
    qeff_over_t: Vec<MeanAccumulator>,
}

impl FisherAccumulator {
    pub fn new(times: Vec<f64>) -> Self {
        let n = times.len();
        FisherAccumulator {
            times,
            fhom: vec![MeanAccumulator::default(); n],
            qfi: vec![MeanAccumulator::default(); n],
            qeff_over_t: vec![MeanAccumulator::default(); n],
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_traj(&self) -> usize {
        self.fhom.first().map_or(0, |a| a.count())
    }

    pub fn add_trajectory(&mut self, samples: &[Sample]) -> Result<()> {
        if samples.len() != self.times.len() {
            return Err(Error::InvalidParams(format!(
                "record has {} samples, grid has {}",
                samples.len(),
                self.times.len()
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            let q = gaussian_qfi(&s.state, &s.tangent)?;
            self.fhom[i].push(s.fhom_integral);
            self.qfi[i].push(q);
            let t = self.times[i];
            self.qeff_over_t[i].push(if t > 0.0 { (s.fhom_integral + q) / t } else { 0.0 });
        }
        Ok(())
    }

    /// Combines two accumulators over the same grid.
    pub fn merge(&mut self, other: &FisherAccumulator) -> Result<()> {
        if self.times != other.times {
            return Err(Error::InvalidParams("cannot merge reports on different grids".into()));
        }
        for i in 0..self.times.len() {
            self.fhom[i].merge(&other.fhom[i]);
            self.qfi[i].merge(&other.qfi[i]);
            self.qeff_over_t[i].merge(&other.qeff_over_t[i]);
        }
        Ok(())
    }

    pub fn report(&self) -> Result<FisherReport> {
        let n_traj = self.n_traj();
        if n_traj == 0 {
            return Err(Error::InvalidParams("empty ensemble".into()));
        }
        let n = self.times.len();
        let mut report = FisherReport {
            times: self.times.clone(),
            fhom_over_t: Vec::with_capacity(n),
            qbar_c: Vec::with_capacity(n),
            qeff_over_t: Vec::with_capacity(n),
            std_err: Vec::with_capacity(n),
            n_traj,
        };
        for i in 0..n {
            let t = self.times[i];
            let f = self.fhom[i].mean();
            let q = self.qfi[i].mean();
            let (f_t, qeff_t) = if t > 0.0 { (f / t, (f + q) / t) } else { (0.0, 0.0) };
            report.fhom_over_t.push(f_t);
            report.qbar_c.push(q);
            report.qeff_over_t.push(qeff_t);
            report.std_err.push(self.qeff_over_t[i].std_err());
        }
        Ok(report)
    }
}

/// Effective QFI of an ensemble of trajectory records sharing one grid.
pub fn effective_qfi<'a, I>(records: I, grid: &[f64]) -> Result<FisherReport>
where
    I: IntoIterator<Item = &'a [Sample]>,
{
    let mut acc = FisherAccumulator::new(grid.to_vec());
    for samples in records {
        acc.add_trajectory(samples)?;
    }
    acc.report()
}

/// Gaussian measurement `σ_m = R(θ) diag(z, 1/z) R(θ)ᵀ`; `z → 0` is homodyne
/// detection of the quadrature at angle θ (θ = 0 measures q).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongMeasurementSpec {
    pub theta: f64,
    pub z: f64,
}

impl StrongMeasurementSpec {
    pub fn homodyne(theta: f64) -> Self {
        StrongMeasurementSpec { theta, z: HOMODYNE_Z }
    }

    pub fn covariance(&self) -> Sym2 {
        Sym2::diag(self.z, 1.0 / self.z).congruence(&Mat2::rotation(self.theta))
    }
}

/// Classical Fisher information of the outcome distribution `N(r, Σ)` with
/// `Σ = (σ + σ_m)/2`:
/// `(∂r)ᵀ Σ⁻¹ ∂r + ½ Tr[(Σ⁻¹ ∂Σ)²]`, `∂Σ = ∂σ/2`.
///
/// Evaluated in the frame of the measurement so that the `1/z` entry never
/// enters a cancelling determinant.
pub fn final_homodyne_fi(state: &GaussianState, tangent: &TangentState, spec: &StrongMeasurementSpec) -> f64 {
    let to_frame = Mat2::rotation(-spec.theta);
    let sigma = state.sigma.congruence(&to_frame);
    let dsigma = tangent.dsigma.congruence(&to_frame);
    let dr = to_frame * tangent.dr;
    let total = Sym2::new(0.5 * (sigma.qq + spec.z), 0.5 * sigma.qp, 0.5 * (sigma.pp + 1.0 / spec.z));
    let inv = match total.inverse() {
        Some(inv) => inv,
        None => return 0.0,
    };
    let x = inv.to_mat() * (dsigma * 0.5).to_mat();
    inv.quad(dr) + 0.5 * (x * x).trace()
}

/// Wraps an angle into `(−π/2, π/2]`; measurement angles have period π.
pub fn wrap_half_turn(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(PI);
    if t > FRAC_PI_2 {
        t -= PI;
    }
    if t <= -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// Best homodyne angle: a 181-point scan over `[−π/2, π/2]` refined by
/// golden-section search to 1e-6 rad. Returns `(θ*, F*)` with θ* in
/// `(−π/2, π/2]`.
pub fn optimize_final_homodyne(state: &GaussianState, tangent: &TangentState) -> (f64, f64) {
    let fi = |theta: f64| final_homodyne_fi(state, tangent, &StrongMeasurementSpec::homodyne(theta));
    let step = PI / (THETA_GRID_POINTS - 1) as f64;
    let (mut best_theta, mut best) = (-FRAC_PI_2, f64::NEG_INFINITY);
    for k in 0..THETA_GRID_POINTS {
        let theta = -FRAC_PI_2 + k as f64 * step;
        let v = fi(theta);
        if v > best {
            best = v;
            best_theta = theta;
        }
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (best_theta - step, best_theta + step);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (fi(c), fi(d));
    while hi - lo > THETA_TOLERANCE {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = fi(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = fi(d);
        }
    }
    let theta = 0.5 * (lo + hi);
    let refined = fi(theta);
    if refined >= best {
        (wrap_half_turn(theta), refined)
    } else {
        (wrap_half_turn(best_theta), best)
    }
}

/// Neumaier-compensated mean of `values`.
pub fn compensated_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = NeumaierSum::default();
    let mut n = 0usize;
    for v in values {
        sum.add(v);
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum.value() / n as f64
    }
}
