//! Pulse-sequence orchestration: state preparation by measurement, read-out,
//! outcome transformations, correlated classical phase noise, and the width
//! sweeps against phase-space angle and pulse strength.
//!
//! One repetition draws a fresh initial state, applies up to two preparation
//! pulses (conditioning the state on each outcome), evolves to the read-out
//! angle and samples the read-out pulse. The read-out outcome is transformed
//! with the preparation outcomes to remove the conditional mean, so the
//! histogram of transformed outcomes measures the conditional marginal
//! convolved with the read-out optical noise.
//!
//! Classical phase offsets follow one continuous exponentially correlated
//! Gaussian path over the whole run, including the re-equilibration gap
//! between repetitions. Pulses close in time share nearly the same offset
//! and the transformation cancels it; correlation lost over larger angular
//! separations leaks classical noise into the transformed outcomes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mech::{Cov2, MechGaussianState, OscillatorParams};
use crate::pulse::{
    condition_exact, measurement_strength, momentum_kick, NoiseSpec, PulseOutcome, PulseSpec,
    BACKACTION_VARIANCE, SHOT_VARIANCE,
};
use crate::rng::{stream_rng, StreamDomain};
use crate::tomo::{gaussian_fit, histogram_outcomes, subtract_optical_noise, OpticalNoiseBudget};

/// A preparation pulse and the harmonic evolution angle separating it from
/// the previous event (state initialization or the previous pulse).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepPulse {
    pub pulse: PulseSpec,
    /// Evolution angle before this pulse (rad).
    pub angle_from_previous: f64,
}

/// Initial mechanical state drawn at the start of each repetition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// Equilibrium thermal state at the given temperature.
    Thermal { temperature_k: f64 },
    /// Thermal state displaced by a resonant drive of the given quadrature
    /// amplitude at a uniformly random phase.
    Driven { temperature_k: f64, amplitude: f64 },
}

impl InitialState {
    fn draw<R: Rng>(&self, osc: &OscillatorParams, rng: &mut R) -> MechGaussianState {
        match *self {
            InitialState::Thermal { temperature_k } => {
                MechGaussianState::thermal(temperature_k, osc)
            }
            InitialState::Driven {
                temperature_k,
                amplitude,
            } => {
                let phase = rng.gen::<f64>() * std::f64::consts::TAU;
                let mut s = MechGaussianState::thermal(temperature_k, osc);
                s.mean_x = amplitude * phase.cos();
                s.mean_p = amplitude * phase.sin();
                s
            }
        }
    }
}

/// Full description of one pulsed protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    /// Zero, one, or two preparation pulses.
    pub prep_pulses: Vec<PrepPulse>,
    pub readout_pulse: PulseSpec,
    /// Read-out angle from the last preparation pulse (rad); from state
    /// initialization when there are no preparation pulses.
    pub theta_r: f64,
    pub repetitions: usize,
    pub initial_state: InitialState,
    pub noise: NoiseSpec,
    /// Wall-clock gap between repetitions while the oscillator re-equilibrates
    /// (s). Defaults to ten energy decay times.
    pub reinit_time: Option<f64>,
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::InvalidParameter("repetitions must be >= 1".into()));
        }
        if self.prep_pulses.len() > 2 {
            return Err(Error::InvalidParameter(
                "at most two preparation pulses are supported".into(),
            ));
        }
        for p in &self.prep_pulses {
            if !(0.0..std::f64::consts::TAU).contains(&p.angle_from_previous) {
                return Err(Error::InvalidParameter(format!(
                    "prep angle {} outside [0, 2 pi)",
                    p.angle_from_previous
                )));
            }
        }
        if !(0.0..std::f64::consts::TAU).contains(&self.theta_r) {
            return Err(Error::InvalidParameter(format!(
                "read-out angle {} outside [0, 2 pi)",
                self.theta_r
            )));
        }
        self.noise.validate()?;
        Ok(())
    }

    fn resolved_reinit_time(&self, osc: &OscillatorParams) -> f64 {
        self.reinit_time
            .unwrap_or(10.0 / osc.damping_rate())
    }
}

/// Outcomes of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub prep: Vec<PulseOutcome>,
    pub readout: PulseOutcome,
    /// Read-out outcome after the conditional-mean transformation.
    pub transformed: f64,
}

/// Everything recorded for one protocol run. All repetitions are kept; no
/// outcome is discarded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub protocol: ProtocolSpec,
    pub seed: u64,
    pub repetitions: Vec<Repetition>,
}

impl RunRecord {
    pub fn transformed(&self) -> Vec<f64> {
        self.repetitions.iter().map(|r| r.transformed).collect()
    }

    pub fn readout_values(&self) -> Vec<f64> {
        self.repetitions.iter().map(|r| r.readout.value).collect()
    }
}

/// Removes the single-preparation conditional mean:
/// `P_r - P_p1 cos(theta)`.
pub fn transform_single(p_r: f64, p_p1: f64, theta: f64) -> f64 {
    p_r - p_p1 * theta.cos()
}

/// Removes the two-preparation conditional mean, with `theta` measured from
/// the second preparation pulse: `P_r - P_p2 cos(theta) + P_p1 sin(theta)`.
pub fn transform_double(p_r: f64, p_p1: f64, p_p2: f64, theta: f64) -> f64 {
    p_r - p_p2 * theta.cos() + p_p1 * theta.sin()
}

/// Per-pulse derived quantities, fixed over a run.
struct PulsePlan {
    chi: f64,
    omega: f64,
    /// Std dev of this pulse's classical offset (P_L units).
    classical_sigma: f64,
    /// Evolution angle since the previous event.
    angle: f64,
    label: &'static str,
}

fn build_plan(osc: &OscillatorParams, spec: &ProtocolSpec) -> Vec<PulsePlan> {
    let x0 = osc.zero_point();
    let mut plan: Vec<PulsePlan> = spec
        .prep_pulses
        .iter()
        .enumerate()
        .map(|(i, p)| PulsePlan {
            chi: measurement_strength(&p.pulse, x0),
            omega: momentum_kick(&p.pulse, x0),
            classical_sigma: spec.noise.classical_variance(p.pulse.n_total()).sqrt(),
            angle: p.angle_from_previous,
            label: if i == 0 { "p1" } else { "p2" },
        })
        .collect();
    plan.push(PulsePlan {
        chi: measurement_strength(&spec.readout_pulse, x0),
        omega: momentum_kick(&spec.readout_pulse, x0),
        classical_sigma: spec
            .noise
            .classical_variance(spec.readout_pulse.n_total())
            .sqrt(),
        angle: spec.theta_r,
        label: "r",
    });
    plan
}

/// Advances the unit-variance correlated phase process and returns its value
/// at each pulse of every repetition. Drawn sequentially on a dedicated
/// stream so that the repetition loop itself can run in parallel.
fn draw_phase_path(
    osc: &OscillatorParams,
    spec: &ProtocolSpec,
    plan: &[PulsePlan],
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed ^ spec.noise.rng_seed, StreamDomain::Protocol, u64::MAX);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let tau = spec.noise.classical_corr_time;
    let omega_m = osc.omega_m;
    let gap = spec.resolved_reinit_time(osc);

    let mut phi: f64 = normal.sample(&mut rng);
    let mut first = true;
    let mut path = Vec::with_capacity(spec.repetitions);
    for _ in 0..spec.repetitions {
        let mut per_pulse = Vec::with_capacity(plan.len());
        let mut prev_gap = if first { 0.0 } else { gap };
        first = false;
        for p in plan {
            let dt = prev_gap + p.angle / omega_m;
            if dt > 0.0 {
                let rho = (-dt / tau).exp();
                phi = rho * phi + (1.0 - rho * rho).sqrt() * normal.sample(&mut rng);
            }
            per_pulse.push(phi);
            prev_gap = 0.0;
        }
        path.push(per_pulse);
    }
    path
}

fn simulate_repetition(
    osc: &OscillatorParams,
    spec: &ProtocolSpec,
    plan: &[PulsePlan],
    phases: &[f64],
    rep_index: u64,
    seed: u64,
) -> Result<Repetition> {
    let mut rng = stream_rng(seed, StreamDomain::Protocol, rep_index);
    let normal = Normal::new(0.0, 1.0).unwrap();

    // True phase-space point of this repetition. Outcomes are built from the
    // trajectory itself so that classical offsets stay on the optical record
    // where pulse-to-pulse correlation can cancel them; conditional-state
    // updates belong to the analysis side.
    let (mut x, mut p_m) = match spec.initial_state {
        InitialState::Thermal { temperature_k } => {
            let sd = (osc.mean_occupation(temperature_k) + 0.5).sqrt();
            (sd * normal.sample(&mut rng), sd * normal.sample(&mut rng))
        }
        InitialState::Driven {
            temperature_k,
            amplitude,
        } => {
            let phase = rng.gen::<f64>() * std::f64::consts::TAU;
            let sd = (osc.mean_occupation(temperature_k) + 0.5).sqrt();
            (
                amplitude * phase.cos() + sd * normal.sample(&mut rng),
                amplitude * phase.sin() + sd * normal.sample(&mut rng),
            )
        }
    };

    let bath_sd_sq = osc.bath_occupation() + 0.5;
    let gamma = osc.damping_rate();
    let outcome_sd = (SHOT_VARIANCE + spec.noise.electronic_variance).sqrt();
    let backaction_sd = BACKACTION_VARIANCE.sqrt();
    let mut time = 0.0;
    let mut outcomes: Vec<PulseOutcome> = Vec::with_capacity(plan.len());

    for (k, p) in plan.iter().enumerate() {
        if p.angle > 0.0 {
            let dt = p.angle / osc.omega_m;
            // Harmonic rotation, then damping with the matching thermal
            // Langevin noise.
            let (s, c) = p.angle.sin_cos();
            let (xr, pr) = (c * x + s * p_m, -s * x + c * p_m);
            let decay = (-gamma * dt).exp();
            let langevin = ((1.0 - decay) * bath_sd_sq).sqrt();
            x = decay.sqrt() * xr + langevin * normal.sample(&mut rng);
            p_m = decay.sqrt() * pr + langevin * normal.sample(&mut rng);
            time += dt;
        }
        let offset = p.classical_sigma * phases[k];
        let value = p.chi * x + offset + outcome_sd * normal.sample(&mut rng);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("outcome at pulse {k}")));
        }
        outcomes.push(PulseOutcome {
            value,
            pulse_id: p.label.to_string(),
            time,
        });
        // Radiation-pressure kick: deterministic part plus amplitude-
        // quadrature fluctuations.
        p_m += p.omega + p.chi * backaction_sd * normal.sample(&mut rng);
    }

    let readout = outcomes.pop().expect("plan always contains the read-out");
    let transformed = match outcomes.len() {
        0 => readout.value,
        1 => transform_single(readout.value, outcomes[0].value, spec.theta_r),
        2 => transform_double(
            readout.value,
            outcomes[0].value,
            outcomes[1].value,
            spec.theta_r,
        ),
        _ => unreachable!(),
    };
    Ok(Repetition {
        prep: outcomes,
        readout,
        transformed,
    })
}

/// Runs the protocol for every repetition. With `parallel` the repetitions
/// are distributed over threads; per-repetition RNG streams make the result
/// identical to the sequential run.
pub fn run_protocol(
    osc: &OscillatorParams,
    spec: &ProtocolSpec,
    seed: u64,
    parallel: bool,
) -> Result<RunRecord> {
    spec.validate()?;
    let plan = build_plan(osc, spec);
    let phases = draw_phase_path(osc, spec, &plan, seed);

    let repetitions: Result<Vec<Repetition>> = if parallel {
        (0..spec.repetitions)
            .into_par_iter()
            .map(|i| simulate_repetition(osc, spec, &plan, &phases[i], i as u64, seed))
            .collect()
    } else {
        (0..spec.repetitions)
            .map(|i| simulate_repetition(osc, spec, &plan, &phases[i], i as u64, seed))
            .collect()
    };
    let repetitions = repetitions?;
    assert_eq!(repetitions.len(), spec.repetitions);
    Ok(RunRecord {
        protocol: spec.clone(),
        seed,
        repetitions,
    })
}

/// Optical noise to subtract from transformed-outcome variances.
///
/// Unconditioned read-outs carry the full per-pulse budget. For conditioned
/// states the preparation-pulse noise is part of the conditional width
/// itself, so only the read-out pulse's own shot and electronic noise are
/// subtracted; classical noise that decorrelated between the pulses is left
/// in (it broadens the apparent conditional marginals).
pub fn readout_noise_budget(spec: &ProtocolSpec) -> OpticalNoiseBudget {
    let electronic = spec.noise.electronic_variance;
    if spec.prep_pulses.is_empty() {
        OpticalNoiseBudget {
            shot: SHOT_VARIANCE,
            classical: spec
                .noise
                .classical_variance(spec.readout_pulse.n_total()),
            electronic,
        }
    } else {
        OpticalNoiseBudget {
            shot: SHOT_VARIANCE,
            classical: 0.0,
            electronic,
        }
    }
}

/// One row of a width-versus-angle sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WidthPoint {
    pub theta: f64,
    pub samples: usize,
    /// Gaussian-fit variance of the transformed outcomes (P_L units).
    pub transformed_variance: f64,
    /// Mechanical marginal variance after noise subtraction (X_M units).
    pub mech_variance: f64,
    /// Physical marginal width (m).
    pub sigma_x_m: f64,
    /// Subtraction went negative; `mech_variance` is an upper bound of zero.
    pub flagged: bool,
}

/// Fits the transformed-outcome histogram of a run, subtracts the optical
/// noise budget, and converts to a physical marginal width.
pub fn analyze_widths(
    osc: &OscillatorParams,
    spec: &ProtocolSpec,
    record: &RunRecord,
    bins: usize,
) -> Result<WidthPoint> {
    let transformed = record.transformed();
    let hist = histogram_outcomes(&transformed, bins)?;
    let fit = gaussian_fit(&hist)?;
    let var_pl = fit.sigma * fit.sigma;
    let chi = measurement_strength(&spec.readout_pulse, osc.zero_point());
    let budget = readout_noise_budget(spec);
    let sub = subtract_optical_noise(var_pl, &budget, chi);
    Ok(WidthPoint {
        theta: spec.theta_r,
        samples: transformed.len(),
        transformed_variance: var_pl,
        mech_variance: sub.variance_xm,
        sigma_x_m: osc.meters_per_quadrature() * sub.variance_xm.sqrt(),
        flagged: sub.flagged,
    })
}

fn derived_seed(seed: u64, index: u64) -> u64 {
    seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1))
}

/// Histogram bin count used by the sweep fits.
pub const SWEEP_BINS: usize = 24;

/// Sweeps the read-out angle, fitting the transformed-outcome width at each
/// angle, subtracting the optical noise budget, and converting to meters.
pub fn width_vs_theta(
    osc: &OscillatorParams,
    base: &ProtocolSpec,
    thetas: &[f64],
    seed: u64,
    parallel: bool,
) -> Result<Vec<WidthPoint>> {
    if thetas.is_empty() {
        return Err(Error::InvalidParameter("empty angle list".into()));
    }
    thetas
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let spec = ProtocolSpec {
                theta_r: theta,
                ..base.clone()
            };
            let record = run_protocol(osc, &spec, derived_seed(seed, i as u64), parallel)?;
            analyze_widths(osc, &spec, &record, SWEEP_BINS)
        })
        .collect()
}

/// Covariance of the conditional state right after the last preparation
/// pulse, propagated with the analysis-side Bayesian updates (conditioning
/// covariances do not depend on the outcome values).
pub fn prepared_covariance(osc: &OscillatorParams, spec: &ProtocolSpec) -> Result<Cov2> {
    let temperature = match spec.initial_state {
        InitialState::Thermal { temperature_k }
        | InitialState::Driven { temperature_k, .. } => temperature_k,
    };
    let mut state = MechGaussianState::thermal(temperature, osc);
    let x0 = osc.zero_point();
    for p in &spec.prep_pulses {
        if p.angle_from_previous > 0.0 {
            let dt = p.angle_from_previous / osc.omega_m;
            state = state.evolve(p.angle_from_previous).rethermalize(dt, osc);
        }
        state = condition_exact(
            &state,
            0.0,
            measurement_strength(&p.pulse, x0),
            momentum_kick(&p.pulse, x0),
        )?;
    }
    Ok(state.cov)
}

/// One row of a width-versus-pulse-strength sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrengthPoint {
    pub n_signal: f64,
    pub sqrt_n: f64,
    pub chi: f64,
    /// Conditional marginal width measured at the sweep's read-out angle (m).
    pub fitted_sigma_x_m: f64,
    pub flagged: bool,
    /// Width of the conditional state immediately after preparation in the
    /// strong-measurement form, `1/(2 chi^2)` converted to meters.
    pub inferred_sigma_x_m: f64,
    /// Exact-posterior width after preparation (m); saturates at the thermal
    /// width as the pulse strength vanishes.
    pub posterior_sigma_x_m: f64,
}

/// Sweeps the signal photon number of a single-preparation protocol.
/// Preparation and read-out pulses share each strength value.
pub fn width_vs_strength(
    osc: &OscillatorParams,
    base: &ProtocolSpec,
    photon_numbers: &[f64],
    seed: u64,
    parallel: bool,
) -> Result<Vec<StrengthPoint>> {
    if photon_numbers.iter().any(|&n| !(n > 0.0)) {
        return Err(Error::InvalidParameter(
            "photon numbers must be positive".into(),
        ));
    }
    if base.prep_pulses.len() != 1 {
        return Err(Error::InvalidParameter(
            "strength sweep uses a single-preparation protocol".into(),
        ));
    }
    let x0 = osc.zero_point();
    photon_numbers
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut spec = base.clone();
            spec.prep_pulses[0].pulse = spec.prep_pulses[0].pulse.with_signal(n);
            spec.readout_pulse = spec.readout_pulse.with_signal(n);
            let record = run_protocol(osc, &spec, derived_seed(seed, i as u64), parallel)?;
            let point = analyze_widths(osc, &spec, &record, SWEEP_BINS)?;
            let chi = measurement_strength(&spec.readout_pulse, x0);
            let posterior = prepared_covariance(osc, &spec)?;
            Ok(StrengthPoint {
                n_signal: n,
                sqrt_n: n.sqrt(),
                chi,
                fitted_sigma_x_m: point.sigma_x_m,
                flagged: point.flagged,
                inferred_sigma_x_m: x0 / chi,
                posterior_sigma_x_m: osc.meters_per_quadrature() * posterior.xx.sqrt(),
            })
        })
        .collect()
}
