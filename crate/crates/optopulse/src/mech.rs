//! Mechanical oscillator parameters and Gaussian motional states.
//!
//! States live in dimensionless quadratures `(X_M, P_M)` with ground-state
//! variance 1/2 per quadrature; physical position is `x = sqrt(2) * x0 * X_M`
//! where `x0 = sqrt(hbar / (2 m_eff omega_M))`. A thermal state has variance
//! `n_bar + 1/2` per quadrature.

use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, K_B};
use crate::error::{Error, Result};

/// Relative tolerance for covariance physicality checks; absorbs rotation
/// round-off.
pub const COV_TOLERANCE: f64 = 1e-12;

/// Mechanical oscillator: frequency, effective mass, quality factor, bath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    /// Angular frequency (rad/s).
    pub omega_m: f64,
    /// Optically probed effective mass (kg).
    pub m_eff: f64,
    /// Mechanical quality factor.
    pub quality: f64,
    /// Bath temperature (K).
    pub t_bath: f64,
}

impl OscillatorParams {
    pub fn new(omega_m: f64, m_eff: f64, quality: f64, t_bath: f64) -> Result<Self> {
        if !(omega_m > 0.0 && omega_m.is_finite()) {
            return Err(Error::InvalidParameter(format!("omega_m = {omega_m}")));
        }
        if !(m_eff > 0.0 && m_eff.is_finite()) {
            return Err(Error::InvalidParameter(format!("m_eff = {m_eff}")));
        }
        if !(quality > 0.0 && quality.is_finite()) {
            return Err(Error::InvalidParameter(format!("quality = {quality}")));
        }
        if !(t_bath >= 0.0 && t_bath.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_bath = {t_bath}")));
        }
        let params = OscillatorParams {
            omega_m,
            m_eff,
            quality,
            t_bath,
        };
        let x0 = params.zero_point();
        if !(x0 > 0.0 && x0.is_finite()) {
            return Err(Error::InvalidParameter(format!("derived x0 = {x0}")));
        }
        Ok(params)
    }

    pub fn from_frequency_hz(f: f64, m_eff: f64, quality: f64, t_bath: f64) -> Result<Self> {
        Self::new(2.0 * std::f64::consts::PI * f, m_eff, quality, t_bath)
    }

    /// Ground-state extension `x0 = sqrt(hbar / (2 m_eff omega_M))` (m).
    pub fn zero_point(&self) -> f64 {
        (HBAR / (2.0 * self.m_eff * self.omega_m)).sqrt()
    }

    /// Energy relaxation rate `gamma = omega_M / Q` (1/s).
    pub fn damping_rate(&self) -> f64 {
        self.omega_m / self.quality
    }

    /// Mechanical period (s).
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega_m
    }

    /// Mean thermal occupation at temperature `t` (K), exact Bose form.
    ///
    /// Equals `k_B t / (hbar omega_M)` to better than 1 % once
    /// `t > hbar omega_M / k_B`; returns 0 at `t = 0`.
    pub fn mean_occupation(&self, t: f64) -> f64 {
        assert!(t >= 0.0, "temperature must be non-negative");
        if t == 0.0 {
            return 0.0;
        }
        let x = HBAR * self.omega_m / (K_B * t);
        1.0 / x.exp_m1()
    }

    /// Occupation of the bath itself.
    pub fn bath_occupation(&self) -> f64 {
        self.mean_occupation(self.t_bath)
    }

    /// Effective temperature from two orthogonal physical marginal widths,
    /// `T_eff = m_eff omega_M^2 sigma_x(0) sigma_x(pi/2) / k_B`.
    pub fn effective_temperature(&self, sigma_x_0: f64, sigma_x_90: f64) -> Result<f64> {
        if !(sigma_x_0 > 0.0 && sigma_x_90 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "marginal widths must be positive, got {sigma_x_0} and {sigma_x_90}"
            )));
        }
        Ok(self.m_eff * self.omega_m * self.omega_m * sigma_x_0 * sigma_x_90 / K_B)
    }

    /// Physical position scale per unit `X_M`: `sqrt(2) * x0` (m).
    pub fn meters_per_quadrature(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.zero_point()
    }
}

/// Symmetric 2x2 covariance of `(X_M, P_M)` in quadrature variance units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    pub xx: f64,
    pub xp: f64,
    pub pp: f64,
}

impl Cov2 {
    pub fn diagonal(xx: f64, pp: f64) -> Self {
        Cov2 { xx, xp: 0.0, pp }
    }

    pub fn isotropic(v: f64) -> Self {
        Cov2::diagonal(v, v)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.pp - self.xp * self.xp
    }

    /// Congruence with the rotation `R(theta) = [[c, s], [-s, c]]`.
    pub fn rotated(&self, theta: f64) -> Cov2 {
        let (s, c) = theta.sin_cos();
        let xx = c * c * self.xx + 2.0 * s * c * self.xp + s * s * self.pp;
        let pp = s * s * self.xx - 2.0 * s * c * self.xp + c * c * self.pp;
        let xp = (c * c - s * s) * self.xp + s * c * (self.pp - self.xx);
        Cov2 { xx, xp, pp }
    }

    /// Principal variances (eigenvalues), larger first.
    pub fn principal_variances(&self) -> (f64, f64) {
        let tr = self.xx + self.pp;
        let disc = (0.25 * (self.xx - self.pp).powi(2) + self.xp * self.xp).sqrt();
        (0.5 * tr + disc, 0.5 * tr - disc)
    }

    /// Variance of the rotated quadrature `X cos(theta) + P sin(theta)`.
    pub fn marginal_variance(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        c * c * self.xx + 2.0 * s * c * self.xp + s * s * self.pp
    }

    fn is_physical(&self) -> bool {
        let floor = 0.5 * (1.0 - COV_TOLERANCE);
        let det_floor = 0.25 * (1.0 - COV_TOLERANCE);
        self.xx >= floor && self.pp >= floor && self.det() >= det_floor
    }
}

/// Gaussian motional state: quadrature means, covariance, and the
/// accumulated harmonic-evolution angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechGaussianState {
    pub mean_x: f64,
    pub mean_p: f64,
    pub cov: Cov2,
    /// Accumulated evolution angle (rad).
    pub phase_tag: f64,
}

impl MechGaussianState {
    pub fn new(mean_x: f64, mean_p: f64, cov: Cov2) -> Result<Self> {
        if !(mean_x.is_finite() && mean_p.is_finite()) {
            return Err(Error::NonFinite(format!("mean = ({mean_x}, {mean_p})")));
        }
        if !cov.is_physical() {
            return Err(Error::BelowVacuumFloor(format!(
                "cov = [[{}, {}], [{}, {}]], det = {}",
                cov.xx,
                cov.xp,
                cov.xp,
                cov.pp,
                cov.det()
            )));
        }
        Ok(MechGaussianState {
            mean_x,
            mean_p,
            cov,
            phase_tag: 0.0,
        })
    }

    /// Zero-mean thermal state at temperature `t` (K).
    pub fn thermal(t: f64, params: &OscillatorParams) -> Self {
        let v = params.mean_occupation(t) + 0.5;
        MechGaussianState {
            mean_x: 0.0,
            mean_p: 0.0,
            cov: Cov2::isotropic(v),
            phase_tag: 0.0,
        }
    }

    /// Ground state.
    pub fn ground() -> Self {
        MechGaussianState {
            mean_x: 0.0,
            mean_p: 0.0,
            cov: Cov2::isotropic(0.5),
            phase_tag: 0.0,
        }
    }

    /// Harmonic evolution by angle `theta`: `X` picks up the old `P` at
    /// `theta = pi/2`. Preserves `det(cov)` and increments the phase tag.
    pub fn evolve(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        MechGaussianState {
            mean_x: c * self.mean_x + s * self.mean_p,
            mean_p: -s * self.mean_x + c * self.mean_p,
            cov: self.cov.rotated(theta),
            phase_tag: self.phase_tag + theta,
        }
    }

    /// Exponential relaxation toward the bath over `dt` seconds at rate
    /// `gamma = omega_M / Q`: the covariance blends toward the bath thermal
    /// covariance and the means damp as `exp(-gamma dt / 2)`.
    pub fn rethermalize(&self, dt: f64, params: &OscillatorParams) -> Self {
        assert!(dt >= 0.0, "dt must be non-negative");
        let g = params.damping_rate() * dt;
        let decay = (-g).exp();
        let bath = params.bath_occupation() + 0.5;
        let blend = 1.0 - decay;
        MechGaussianState {
            mean_x: self.mean_x * (-0.5 * g).exp(),
            mean_p: self.mean_p * (-0.5 * g).exp(),
            cov: Cov2 {
                xx: decay * self.cov.xx + blend * bath,
                xp: decay * self.cov.xp,
                pp: decay * self.cov.pp + blend * bath,
            },
            phase_tag: self.phase_tag,
        }
    }

    /// Effective occupation `sqrt(sigma_X^2 sigma_P^2) - 1/2` using the
    /// principal variances. Equal to `sqrt(det cov) - 1/2`.
    pub fn effective_occupation(&self) -> f64 {
        let (a, b) = self.cov.principal_variances();
        (a * b).sqrt() - 0.5
    }

    /// Physical RMS width of the position marginal at angle `theta` (m).
    pub fn physical_width(&self, theta: f64, params: &OscillatorParams) -> f64 {
        params.meters_per_quadrature() * self.cov.marginal_variance(theta).sqrt()
    }
}
