//! Model matrices, stability, analytic steady states and scalar diagnostics
//! of single-mode Gaussian states.
//!
//! Conventions: quadratures `(q, p)` with `[q, p] = i`, covariance matrix
//! `σ = 2⟨Δr Δrᵀ⟩` so that the vacuum has `σ = I`. Frequencies and rates are
//! in units of `κ` unless the caller chooses a different `kappa`.
//!
//! The conditional dynamics is
//!
//! ```text
//! dr = A r dt + (E − σB) dw/√2
//! dσ/dt = Aσ + σAᵀ + D − (E − σB)(E − σB)ᵀ
//! ```
//!
//! with
//!
//! ```text
//! A = [[−(χ+κ/2), ω+ω_fb], [−(ω+ω_fb), χ−κ/2]],  D = κ I,
//! B = E = [[−√(ηκ), 0], [0, 0]].
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat2, Sym2, Vec2};

/// First-moment norm below which the direction of `r` is treated as undefined.
pub const DEGENERATE_DIRECTION_EPS: f64 = 1e-6;

/// Allowed undershoot of `det σ` below the uncertainty bound `det σ ≥ 1`.
pub const DET_TOLERANCE: f64 = 1e-9;

pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Physical constants of the monitored oscillator plus the integration step.
/// Fields missing from a config file take their default values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Oscillator frequency (detuning) to be estimated.
    pub omega: f64,
    /// Squeezing rate.
    pub chi: f64,
    /// Loss rate; sets the time unit.
    pub kappa: f64,
    /// Homodyne monitoring efficiency.
    pub eta: f64,
    /// Integration step.
    pub dt: f64,
}


impl Default for SystemParams {
    fn default() -> Self {
        SystemParams { omega: 0.1, chi: 0.49, kappa: 1.0, eta: 0.9, dt: 1e-3 }
    }
}

impl SystemParams {
    pub fn new(omega: f64, chi: f64, kappa: f64, eta: f64, dt: f64) -> Result<Self> {
        let params = SystemParams { omega, chi, kappa, eta, dt };
        params.validate()?;
        Ok(params)
    }

    /// Checks the parameter ranges and that the uncontrolled dynamics has a
    /// steady state.
    pub fn validate(&self) -> Result<()> {
        let all = [self.omega, self.chi, self.kappa, self.eta, self.dt];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite value in {self:?}")));
        }
        if self.kappa <= 0.0 {
            return Err(Error::InvalidParams(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if self.dt <= 0.0 {
            return Err(Error::InvalidParams(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParams(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if self.chi >= 0.5 * self.kappa {
            return Err(Error::InvalidParams(format!(
                "chi must be below kappa/2 = {}, got {}",
                0.5 * self.kappa,
                self.chi
            )));
        }
        let a = drift_matrix(self, 0.0);
        if !stability_check(&a) {
            return Err(Error::Unstable { trace: a.trace(), det: a.det() });
        }
        Ok(())
    }

    /// `√(ηκ)`, the magnitude of the only non-zero entry of `B`.
    pub fn measurement_strength(&self) -> f64 {
        (self.eta * self.kappa).sqrt()
    }
}

/// Matrices of the moment equations for one value of the feedback frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemMatrices {
    pub a: Mat2,
    pub d: Mat2,
    pub b: Mat2,
    pub e: Mat2,
    /// `∂A/∂ω`.
    pub da: Mat2,
}

/// `∂A/∂ω`; independent of every parameter.
pub const DRIFT_DERIVATIVE: Mat2 = Mat2::new(0.0, 1.0, -1.0, 0.0);

pub fn drift_matrix(params: &SystemParams, omega_fb: f64) -> Mat2 {
    let w = params.omega + omega_fb;
    let half_kappa = 0.5 * params.kappa;
    Mat2::new(-(params.chi + half_kappa), w, -w, params.chi - half_kappa)
}

pub fn build_matrices(params: &SystemParams, omega_fb: f64) -> SystemMatrices {
    let b = Mat2::diag(-params.measurement_strength(), 0.0);
    SystemMatrices {
        a: drift_matrix(params, omega_fb),
        d: Mat2::diag(params.kappa, params.kappa),
        b,
        e: b,
        da: DRIFT_DERIVATIVE,
    }
}

/// Hurwitz test: both eigenvalues have strictly negative real part.
pub fn stability_check(a: &Mat2) -> bool {
    a.trace() < 0.0 && a.det() > 0.0
}

/// Analytic steady-state covariance for vanishing net rotation
/// (`ω + ω_fb = 0`); the value of `params.omega` is ignored.
///
/// Returns the unconditional solution at `η = 0`.
pub fn steady_state_covariance(params: &SystemParams) -> Result<Sym2> {
    let SystemParams { chi, kappa, eta, .. } = *params;
    if !(kappa > 0.0) {
        return Err(Error::InvalidParams(format!("kappa must be > 0, got {kappa}")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParams(format!("eta must lie in [0, 1], got {eta}")));
    }
    if chi >= 0.5 * kappa || chi <= -0.5 * kappa {
        return Err(Error::Unstable {
            trace: -kappa,
            det: 0.25 * kappa * kappa - chi * chi,
        });
    }
    let pp = kappa / (kappa - 2.0 * chi);
    if eta == 0.0 {
        return Ok(Sym2::diag(kappa / (kappa + 2.0 * chi), pp));
    }
    // σ_qq = (a + √S) / (2ηκ), with S − a² = 4κ²η(1−η). The rationalised
    // branch avoids cancellation when a < 0 (small η).
    let a = kappa * (2.0 * eta - 1.0) - 2.0 * chi;
    let s = kappa * kappa - 4.0 * kappa * chi * (2.0 * eta - 1.0) + 4.0 * chi * chi;
    let root = s.sqrt();
    let qq = if a >= 0.0 {
        (a + root) / (2.0 * eta * kappa)
    } else {
        2.0 * kappa * (1.0 - eta) / (root - a)
    };
    Ok(Sym2::diag(qq, pp))
}

fn require_positive_definite(sigma: &Sym2) -> Result<()> {
    if !sigma.is_finite() || sigma.qq <= 0.0 || sigma.det() <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!("{sigma:?}")));
    }
    Ok(())
}

/// Maximum squeezing `−10 log₁₀ λ_min(σ)` in dB; positive means below vacuum.
pub fn squeezing_db(sigma: &Sym2) -> Result<f64> {
    require_positive_definite(sigma)?;
    let (min, _) = sigma.eigenvalues();
    Ok(-10.0 * min.log10())
}

/// Conditional Gaussian state: first moments and covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub r: Vec2,
    pub sigma: Sym2,
}

impl GaussianState {
    pub fn new(r: Vec2, sigma: Sym2) -> Result<Self> {
        let state = GaussianState { r, sigma };
        state.check_physical()?;
        Ok(state)
    }

    pub fn vacuum() -> Self {
        GaussianState { r: Vec2::ZERO, sigma: Sym2::IDENTITY }
    }

    /// Thermal state with mean occupation `n_th`, displaced to `r`.
    pub fn thermal(r: Vec2, n_th: f64) -> Self {
        GaussianState { r, sigma: Sym2::scaled_identity(2.0 * n_th + 1.0) }
    }

    /// Finite entries, positive eigenvalues and `det σ ≥ 1` within tolerance.
    pub fn check_physical(&self) -> Result<()> {
        if !self.r.is_finite() || !self.sigma.is_finite() {
            return Err(Error::NotPositiveDefinite(format!("non-finite state {self:?}")));
        }
        require_positive_definite(&self.sigma)?;
        if self.sigma.det() < 1.0 - DET_TOLERANCE {
            return Err(Error::NotPositiveDefinite(format!(
                "det sigma = {} violates the uncertainty bound",
                self.sigma.det()
            )));
        }
        Ok(())
    }

    pub fn purity(&self) -> Result<f64> {
        purity(&self.sigma)
    }
}

/// Squeezing along the quadrature orthogonal to the first-moment vector.
///
/// `None` when `|r| ≤` [`DEGENERATE_DIRECTION_EPS`], unless σ is isotropic and
/// every direction gives the same value.
pub fn perpendicular_squeezing_db(state: &GaussianState) -> Option<f64> {
    let norm = state.r.norm();
    if !(norm > DEGENERATE_DIRECTION_EPS) {
        let (min, max) = state.sigma.eigenvalues();
        let isotropic = min > 0.0 && max - min <= 1e-12 * max;
        return isotropic.then(|| -10.0 * (0.5 * (min + max)).log10());
    }
    let u_perp = (state.r * (1.0 / norm)).perp();
    let variance = state.sigma.quad(u_perp);
    Some(-10.0 * variance.log10())
}

/// `μ = min(1, 1/√det σ)`.
pub fn purity(sigma: &Sym2) -> Result<f64> {
    let det = sigma.det();
    if !det.is_finite() || det < 1.0 - DET_TOLERANCE {
        return Err(Error::NotPositiveDefinite(format!(
            "det sigma = {det} is below the uncertainty bound"
        )));
    }
    Ok((1.0 / det.sqrt()).min(1.0))
}

/// Right-hand side of the Riccati equation for a fixed drift matrix.
pub fn riccati_rhs(matrices: &SystemMatrices, sigma: &Sym2) -> Sym2 {
    let s = sigma.to_mat();
    let gain = matrices.e - s * matrices.b;
    (matrices.a * s + s * matrices.a.transpose() + matrices.d - gain * gain.transpose())
        .symmetrize()
}
