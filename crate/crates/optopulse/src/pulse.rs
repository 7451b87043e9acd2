//! Pulsed interaction: measurement strength, momentum kick, homodyne outcome
//! sampling with layered noise, and conditional state updates.
//!
//! Input-output relations for one pulse: the light phase quadrature picks up
//! `chi * X_M`, the mechanical momentum picks up `chi * X_L + Omega`. The
//! normalized outcome `P_L` carries shot noise of variance 1/2; electronic
//! noise is an additive constant, classical phase noise enters as an
//! externally supplied correlated offset (owned by the protocol engine).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mech::{Cov2, MechGaussianState};

/// Shot-noise variance of a pulse outcome in normalized `P_L` units.
pub const SHOT_VARIANCE: f64 = 0.5;

/// Vacuum variance of the amplitude quadrature driving the momentum
/// back-action.
pub const BACKACTION_VARIANCE: f64 = 0.5;

/// One optical pulse: signal and local-oscillator photon numbers, wavelength,
/// duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Mean photons per signal pulse.
    pub n_signal: f64,
    /// Mean photons per local-oscillator pulse.
    pub n_lo: f64,
    /// Optical wavelength (m).
    pub wavelength: f64,
    /// Pulse duration (s).
    pub duration: f64,
}

impl PulseSpec {
    pub fn new(n_signal: f64, n_lo: f64, wavelength: f64, duration: f64) -> Result<Self> {
        if !(n_signal >= 0.0 && n_signal.is_finite()) {
            return Err(Error::InvalidParameter(format!("n_signal = {n_signal}")));
        }
        if !(n_lo >= 0.0 && n_lo.is_finite()) {
            return Err(Error::InvalidParameter(format!("n_lo = {n_lo}")));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::InvalidParameter(format!("wavelength = {wavelength}")));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::InvalidParameter(format!("duration = {duration}")));
        }
        Ok(PulseSpec {
            n_signal,
            n_lo,
            wavelength,
            duration,
        })
    }

    /// Total photons per pulse (signal plus local oscillator).
    pub fn n_total(&self) -> f64 {
        self.n_signal + self.n_lo
    }

    /// Same pulse with a different signal photon number.
    pub fn with_signal(&self, n_signal: f64) -> Self {
        PulseSpec { n_signal, ..*self }
    }
}

/// Measurement strength `chi = 4 pi x0 sqrt(N) / lambda`.
pub fn measurement_strength(pulse: &PulseSpec, x0: f64) -> f64 {
    4.0 * std::f64::consts::PI * x0 * pulse.n_signal.sqrt() / pulse.wavelength
}

/// Classical momentum transfer per pulse, `Omega = 8 pi x0 N / lambda`.
pub fn momentum_kick(pulse: &PulseSpec, x0: f64) -> f64 {
    8.0 * std::f64::consts::PI * x0 * pulse.n_signal / pulse.wavelength
}

/// Technical noise layered on top of shot noise.
///
/// `classical_phase_coeff` scales the variance of the slow classical phase
/// offset: a pulse with total photon number `N_TOT` sees an offset of
/// variance `classical_phase_coeff * N_TOT` in `P_L` units, so the classical
/// contribution grows quadratically with `N_TOT` in absolute homodyne units
/// while shot noise grows linearly. The offset itself is drawn by the
/// protocol engine from a stationary process with correlation
/// `exp(-dt / classical_corr_time)` between pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Classical phase-noise coefficient (dimensionless, >= 0).
    pub classical_phase_coeff: f64,
    /// Correlation time of the slow classical phase process (s).
    pub classical_corr_time: f64,
    /// Electronic noise variance added to each outcome (`P_L` units in the
    /// protocol engine; absolute homodyne units in the rigid-mirror scan).
    pub electronic_variance: f64,
    /// Stream seed for noise processes.
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn quantum_limited(seed: u64) -> Self {
        NoiseSpec {
            classical_phase_coeff: 0.0,
            classical_corr_time: 1.0,
            electronic_variance: 0.0,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classical_phase_coeff < 0.0
            || self.classical_corr_time <= 0.0
            || self.electronic_variance < 0.0
        {
            return Err(Error::InvalidParameter(
                "noise coefficients must be non-negative with a positive correlation time".into(),
            ));
        }
        Ok(())
    }

    /// Marginal variance of the classical phase offset for a pulse with
    /// total photon number `n_total`, in `P_L` units.
    pub fn classical_variance(&self, n_total: f64) -> f64 {
        self.classical_phase_coeff * n_total
    }
}

/// A recorded pulse outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseOutcome {
    /// Outcome value in `P_L` units.
    pub value: f64,
    /// Label, e.g. "p1", "p2", "r".
    pub pulse_id: String,
    /// Time of the pulse within the repetition (s).
    pub time: f64,
}

/// Draws the homodyne outcome for a pulse on `state`:
/// `P_L ~ Normal(chi <X_M> + offset, 1/2 + chi^2 sigma_X^2 + v_el)`.
pub fn sample_outcome<R: Rng>(
    state: &MechGaussianState,
    chi: f64,
    noise: &NoiseSpec,
    classical_phase_offset: f64,
    rng: &mut R,
) -> Result<f64> {
    if !chi.is_finite() || !classical_phase_offset.is_finite() {
        return Err(Error::NonFinite(format!(
            "chi = {chi}, offset = {classical_phase_offset}"
        )));
    }
    let mean = chi * state.mean_x + classical_phase_offset;
    let var = SHOT_VARIANCE + chi * chi * state.cov.xx + noise.electronic_variance;
    let dist = Normal::new(mean, var.sqrt())
        .map_err(|e| Error::InvalidParameter(format!("outcome distribution: {e}")))?;
    Ok(dist.sample(rng))
}

/// Exact Gaussian conditional update on outcome `p_l` with likelihood
/// `P_L | X_M ~ Normal(chi X_M, 1/2)`, followed by the momentum kick
/// (`<P> += Omega`, `sigma_P^2 += chi^2 / 2`).
pub fn condition_exact(
    state: &MechGaussianState,
    p_l: f64,
    chi: f64,
    omega: f64,
) -> Result<MechGaussianState> {
    if !p_l.is_finite() {
        return Err(Error::NonFinite(format!("outcome = {p_l}")));
    }
    let c = state.cov;
    let floor = 0.25 * (1.0 - crate::mech::COV_TOLERANCE);
    if c.det() < floor || c.xx <= 0.0 {
        return Err(Error::BelowVacuumFloor(format!(
            "conditioning on cov with det = {}",
            c.det()
        )));
    }
    // Kalman gain for the scalar observation chi * X + shot.
    let innovation_var = chi * chi * c.xx + SHOT_VARIANCE;
    let gain_x = chi * c.xx / innovation_var;
    let gain_p = chi * c.xp / innovation_var;
    let residual = p_l - chi * state.mean_x;

    let mean_x = state.mean_x + gain_x * residual;
    let mean_p = state.mean_p + gain_p * residual;
    let cov = Cov2 {
        xx: c.xx - gain_x * chi * c.xx,
        xp: c.xp - gain_x * chi * c.xp,
        pp: c.pp - gain_p * chi * c.xp,
    };

    Ok(MechGaussianState {
        mean_x,
        mean_p: mean_p + omega,
        cov: Cov2 {
            pp: cov.pp + chi * chi * BACKACTION_VARIANCE,
            ..cov
        },
        phase_tag: state.phase_tag,
    })
}

/// Strong-measurement closed form, valid for `chi^2 (1 + 2 n_bar) > 1`:
/// `<X> = P_L / chi`, `<P> = Omega`, `sigma_X^2 = 1 / (2 chi^2)`,
/// `sigma_P^2 = (chi^2 + 1 + 2 n_bar) / 2`, zero cross-covariance.
pub fn condition_approx(
    state: &MechGaussianState,
    p_l: f64,
    chi: f64,
    omega: f64,
    n_bar: f64,
) -> Result<MechGaussianState> {
    let strength = chi * chi * (1.0 + 2.0 * n_bar);
    if !(strength > 1.0) {
        return Err(Error::Precondition(format!(
            "strong-measurement form needs chi^2 (1 + 2 n_bar) > 1, got {strength}"
        )));
    }
    if !p_l.is_finite() {
        return Err(Error::NonFinite(format!("outcome = {p_l}")));
    }
    Ok(MechGaussianState {
        mean_x: p_l / chi,
        mean_p: omega,
        cov: Cov2::diagonal(1.0 / (2.0 * chi * chi), 0.5 * (chi * chi + 1.0 + 2.0 * n_bar)),
        phase_tag: state.phase_tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mech::OscillatorParams;
    use crate::rng::{stream_rng, StreamDomain};
    use approx::assert_relative_eq;

    fn paper_pulse() -> PulseSpec {
        PulseSpec::new(1e7, 1e10, 1.064e-6, 1e-6).unwrap()
    }

    #[test]
    fn strength_and_kick_values() {
        let pulse = paper_pulse();
        let x0 = 5.7e-15;
        let chi = measurement_strength(&pulse, x0);
        assert!((chi - 2.1e-4).abs() / 2.1e-4 < 0.03, "chi = {chi}");
        let omega = momentum_kick(&pulse, x0);
        assert_relative_eq!(omega, 1.3464, max_relative = 1e-3);

        assert_eq!(measurement_strength(&pulse.with_signal(0.0), x0), 0.0);
        assert_eq!(momentum_kick(&pulse.with_signal(0.0), x0), 0.0);

        // sqrt(N) scaling and the fixed ratio Omega / chi = 2 sqrt(N).
        let chi4 = measurement_strength(&pulse.with_signal(4e7), x0);
        assert_relative_eq!(chi4, 2.0 * chi, max_relative = 1e-12);
        assert_relative_eq!(omega / chi, 2.0 * pulse.n_signal.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn outcome_statistics_match_model() {
        let params = OscillatorParams::from_frequency_hz(984.3, 2.6e-10, 3.1e4, 1100.0).unwrap();
        let noise = NoiseSpec::quantum_limited(0);
        let mut rng = stream_rng(11, StreamDomain::Protocol, 0);

        // chi = 0: pure shot noise, variance 1/2.
        let ground = MechGaussianState::ground();
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_outcome(&ground, 0.0, &noise, 0.0, &mut rng).unwrap())
            .collect();
        let (_, var) = crate::stats::mean_variance(&draws);
        assert!((var - 0.5).abs() / 0.5 < 0.005, "var = {var}");

        // Ground state, chi = 1: symmetric split, variance 1.
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_outcome(&ground, 1.0, &noise, 0.0, &mut rng).unwrap())
            .collect();
        let (_, var) = crate::stats::mean_variance(&draws);
        assert!((var - 1.0).abs() < 0.01, "var = {var}");

        // Hot thermal state: mechanical signal dominates shot noise.
        let hot = MechGaussianState::thermal(1100.0, &params);
        let chi = measurement_strength(&paper_pulse(), params.zero_point());
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_outcome(&hot, chi, &noise, 0.0, &mut rng).unwrap())
            .collect();
        let (_, var) = crate::stats::mean_variance(&draws);
        let expected = chi * chi * hot.cov.xx + 0.5;
        assert!((var - expected).abs() / expected < 0.02);
        assert!(var.sqrt() > 30.0, "std = {}", var.sqrt());
    }

    #[test]
    fn conditioning_matches_closed_form_in_strong_regime() {
        let params = OscillatorParams::from_frequency_hz(984.3, 2.6e-10, 3.1e4, 1100.0).unwrap();
        let n_bar = params.mean_occupation(1100.0);
        let chi = 2.1e-4;
        let omega = 1.35;
        let hot = MechGaussianState::thermal(1100.0, &params);

        let p_l = 0.7;
        let exact = condition_exact(&hot, p_l, chi, omega).unwrap();
        let approx = condition_approx(&hot, p_l, chi, omega, n_bar).unwrap();

        assert_relative_eq!(approx.mean_x, p_l / chi, max_relative = 1e-12);
        assert_relative_eq!(approx.mean_x, 3333.3, max_relative = 1e-3);
        assert_eq!(approx.mean_p, omega);

        // Relative discrepancy bounded by 1 / (chi^2 (1 + 2 n_bar)).
        let bound = 1.0 / (chi * chi * (1.0 + 2.0 * n_bar));
        assert!(bound < 1.0);
        let rel_x = (exact.cov.xx - approx.cov.xx).abs() / approx.cov.xx;
        let rel_p = (exact.cov.pp - approx.cov.pp).abs() / approx.cov.pp;
        assert!(rel_x < bound, "rel_x = {rel_x}, bound = {bound}");
        assert!(rel_p < bound);
        assert_relative_eq!(
            exact.cov.pp,
            0.5 * (chi * chi + 1.0 + 2.0 * n_bar),
            max_relative = 1e-9
        );
    }

    #[test]
    fn approx_variance_independent_of_occupation() {
        let s = MechGaussianState::ground();
        let a = condition_approx(&s, 0.3, 2.1e-4, 0.0, 1e9).unwrap();
        let b = condition_approx(&s, 0.3, 2.1e-4, 0.0, 1e12).unwrap();
        assert_eq!(a.cov.xx, b.cov.xx);
    }

    #[test]
    fn approx_requires_strong_measurement() {
        let s = MechGaussianState::ground();
        let err = condition_approx(&s, 0.0, 1e-4, 0.0, 10.0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn zero_strength_conditioning_only_kicks() {
        let s = MechGaussianState::new(0.4, -0.2, Cov2::diagonal(2.0, 3.0)).unwrap();
        let r = condition_exact(&s, 1.7, 0.0, 0.9).unwrap();
        assert_eq!(r.mean_x, s.mean_x);
        assert_eq!(r.mean_p, s.mean_p + 0.9);
        assert_eq!(r.cov, s.cov);
    }

    #[test]
    fn ground_state_unit_strength_posterior() {
        let s = MechGaussianState::ground();
        let r = condition_exact(&s, 0.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(r.cov.xx, 0.25, max_relative = 1e-12);
        assert_relative_eq!(r.cov.pp, 0.5 + 0.5, max_relative = 1e-12);
        assert_eq!(r.mean_x, 0.0);
    }

    #[test]
    fn conditioning_rejects_bad_inputs() {
        let s = MechGaussianState::ground();
        assert!(condition_exact(&s, f64::NAN, 1.0, 0.0).is_err());
        let singular = MechGaussianState {
            cov: Cov2 { xx: 1.0, xp: 1.0, pp: 1.0 },
            ..s
        };
        assert!(condition_exact(&singular, 0.0, 1.0, 0.0).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn physical_cov() -> impl Strategy<Value = Cov2> {
            (0.5f64..1e4, 0.5f64..1e4)
                .prop_flat_map(|(xx, pp)| {
                    let bound = ((xx * pp - 0.25).max(0.0)).sqrt() * 0.999;
                    (Just(xx), Just(pp), -bound..=bound)
                })
                .prop_map(|(xx, pp, xp)| Cov2 { xx, xp, pp })
        }

        proptest! {
            #[test]
            fn conditioning_shrinks_x_and_stays_physical(
                cov in physical_cov(),
                chi in 1e-4f64..3.0,
                p_l in -50.0f64..50.0,
            ) {
                let s = MechGaussianState::new(0.0, 0.0, cov).unwrap();
                let r = condition_exact(&s, p_l, chi, 0.0).unwrap();
                prop_assert!(r.cov.xx <= cov.xx * (1.0 + 1e-12));
                prop_assert!(r.cov.xx > 0.0);
                // Symmetric positive definite with the vacuum floor intact.
                prop_assert!(r.cov.det() >= 0.25 * (1.0 - 1e-9));
                prop_assert!(r.cov.xx * r.cov.pp >= r.cov.xp * r.cov.xp);
            }
        }
    }
}
