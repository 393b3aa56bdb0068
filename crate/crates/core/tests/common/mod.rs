#![allow(dead_code)]

use feedback_metrology::engine::reset;
use feedback_metrology::rng::{standard_normal, Purpose, Stream, StreamKey};
use feedback_metrology::{GaussianState, InitialCondition, Mat2, Result, Sym2, SystemParams, TangentState, Vec2};
use rand::Rng;

pub fn rng(seed: u64) -> Stream {
    StreamKey::single(seed).stream(Purpose::Init)
}

/// Squared Uhlmann fidelity of two single-mode Gaussian states (vacuum
/// covariance = identity):
/// `F = 2 / (√(Δ + δ) − √δ) · exp(−uᵀ(σ₁+σ₂)⁻¹u)` with `Δ = det(σ₁+σ₂)`,
/// `δ = (det σ₁ − 1)(det σ₂ − 1)`, `u = r₁ − r₂`.
pub fn fidelity_squared(a: &GaussianState, b: &GaussianState) -> f64 {
    let sum = a.sigma + b.sigma;
    let big_delta = sum.det();
    let small_delta = ((a.sigma.det() - 1.0) * (b.sigma.det() - 1.0)).max(0.0);
    let u = a.r - b.r;
    let exponent = sum.inverse().unwrap().quad(u);
    2.0 / ((big_delta + small_delta).sqrt() - small_delta.sqrt()) * (-exponent).exp()
}

/// QFI of a smooth one-parameter family from the Bures distance between
/// ε = ±h/2, `Q(h) = 8(1 − √F)/h² = Q + O(h²)`, Richardson-extrapolated
/// from `h` and `h/2`.
pub fn fidelity_qfi_along(family: impl Fn(f64) -> GaussianState, h: f64) -> f64 {
    let at = |h: f64| {
        let f = fidelity_squared(&family(-0.5 * h), &family(0.5 * h));
        8.0 * (1.0 - f.sqrt()) / (h * h)
    };
    (4.0 * at(0.5 * h) - at(h)) / 3.0
}

/// Fidelity QFI of the linear family `(r + ε∂r, σ + ε∂σ)`.
pub fn fidelity_qfi(state: &GaussianState, tangent: &TangentState, h: f64) -> f64 {
    fidelity_qfi_along(
        |eps| GaussianState { r: state.r + tangent.dr * eps, sigma: state.sigma + tangent.dsigma * eps },
        h,
    )
}

/// `exp(K)` for traceless `K`, using `K² = −det(K) I`.
pub fn expm_traceless(k: Mat2) -> Mat2 {
    let s2 = -k.det();
    let (c, sinc) = if s2 > 0.0 {
        let s = s2.sqrt();
        (s.cosh(), s.sinh() / s)
    } else if s2 < 0.0 {
        let s = (-s2).sqrt();
        (s.cos(), s.sin() / s)
    } else {
        (1.0, 1.0)
    };
    Mat2::new(c + sinc * k.0[0][0], sinc * k.0[0][1], sinc * k.0[1][0], c + sinc * k.0[1][1])
}

/// `ν · R(φ) diag(e^{−2s}, e^{2s}) R(φ)ᵀ`.
pub fn squeezed_thermal(nu: f64, s: f64, phi: f64) -> Sym2 {
    let rot = Mat2::rotation(phi);
    Sym2::diag(nu * (-2.0 * s).exp(), nu * (2.0 * s).exp()).congruence(&rot)
}

/// Random mixed state with `ν ∈ [1.05, 5]` and a random tangent.
pub fn random_mixed_instance(rng: &mut Stream) -> (GaussianState, TangentState) {
    let nu = rng.random_range(1.05..5.0);
    let s = rng.random_range(-1.2..1.2);
    let phi = rng.random_range(-3.2..3.2);
    let sigma = squeezed_thermal(nu, s, phi);
    let r = Vec2::new(3.0 * standard_normal(rng), 3.0 * standard_normal(rng));
    let dr = Vec2::new(standard_normal(rng), standard_normal(rng));
    let dsigma = Sym2::new(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    (GaussianState { r, sigma }, TangentState { dr, dsigma })
}

/// Random pure state with a purity-preserving tangent `Kσ + σKᵀ`,
/// `Tr K = 0`; also returns `K`, which generates the exactly pure curve
/// `e^{εK} σ e^{εKᵀ}`.
pub fn random_pure_family(rng: &mut Stream) -> (GaussianState, TangentState, Mat2) {
    let s = rng.random_range(-1.2..1.2);
    let phi = rng.random_range(-3.2..3.2);
    let sigma = squeezed_thermal(1.0, s, phi);
    let a = standard_normal(rng);
    let k = Mat2::new(a, standard_normal(rng), standard_normal(rng), -a);
    let m = sigma.to_mat();
    let dsigma = (k * m + m * k.transpose()).symmetrize();
    let r = Vec2::new(2.0 * standard_normal(rng), 2.0 * standard_normal(rng));
    let dr = Vec2::new(standard_normal(rng), standard_normal(rng));
    (GaussianState { r, sigma }, TangentState { dr, dsigma }, k)
}

pub fn random_pure_instance(rng: &mut Stream) -> (GaussianState, TangentState) {
    let (state, tangent, _) = random_pure_family(rng);
    (state, tangent)
}

/// Fidelity QFI along the exactly pure curve generated by `K`.
pub fn pure_fidelity_qfi(state: &GaussianState, tangent: &TangentState, k: Mat2, h: f64) -> f64 {
    fidelity_qfi_along(
        |eps| {
            let g = expm_traceless(k * eps);
            GaussianState { r: state.r + tangent.dr * eps, sigma: state.sigma.congruence(&g) }
        },
        h,
    )
}

/// Filters a recorded photocurrent at frequency `omega` with a given
/// feedback sequence; returns the conditional means `r_q` before each step
/// and the final trajectory state.
pub fn filter_record(
    params: &SystemParams,
    init: &InitialCondition,
    dys: &[f64],
    omega_fbs: &[f64],
) -> Result<(Vec<f64>, feedback_metrology::TrajectoryState)> {
    let mut traj = reset(params, init, StreamKey::single(0))?;
    let mut r_q = Vec::with_capacity(dys.len());
    for (&dy, &fb) in dys.iter().zip(omega_fbs) {
        r_q.push(traj.state.r.q);
        traj.step_with_record(params, fb, dy)?;
    }
    Ok((r_q, traj))
}

/// Gaussian log-likelihood of a photocurrent record given the predicted
/// means: `Σ −(dy − √(2ηκ) r_q dt)² / (2 dt)`.
pub fn log_likelihood(params: &SystemParams, dys: &[f64], r_q: &[f64]) -> f64 {
    let gain = (2.0 * params.eta * params.kappa).sqrt();
    let dt = params.dt;
    let mut sum = 0.0;
    for (&dy, &r) in dys.iter().zip(r_q) {
        let innovation = dy - gain * r * dt;
        sum -= innovation * innovation / (2.0 * dt);
    }
    sum
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
