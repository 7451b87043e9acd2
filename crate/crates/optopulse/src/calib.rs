//! Two-step interferometer calibration: piezo half-wave fringe adjustment,
//! then the pulsed outcome-per-meter fit.
//!
//! A sinusoidal piezo drive under a continuous probe gives a homodyne trace
//! `cos(phi0 + beta sin(omega t))` with the unlocked interferometer phase
//! `phi0` drifting slowly. At modulation depth `beta = pi` the two interior
//! turning points per period sit at the same level whatever `phi0` does, so
//! matching their levels pins the scan to half an optical wavelength. The
//! calibrated piezo then drives a small scan while pulsed outcomes are
//! recorded; the outcome-per-meter slope comes from a linear fit.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::PulseSpec;
use crate::rng::{stream_rng, StreamDomain};
use crate::stats::polyfit_weighted;

/// Default turning-point coincidence tolerance, as a fraction of the fringe
/// amplitude. Noisy traces need a looser, caller-supplied value.
pub const DEFAULT_TURNING_TOLERANCE: f64 = 0.005;

/// Homodyne trace of a piezo fringe scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FringeTrace {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    /// Piezo drive angular frequency (rad/s).
    pub drive_omega: f64,
}

/// Simulates the fringe trace `cos(phi0[i] + beta sin(omega t_i))` with one
/// `phi0` entry per output sample.
pub fn simulate_piezo_fringe(
    phi0: &[f64],
    beta: f64,
    omega: f64,
    sample_rate: f64,
) -> Result<FringeTrace> {
    if phi0.is_empty() {
        return Err(Error::InsufficientData("empty phi0 series".into()));
    }
    let f = omega / std::f64::consts::TAU;
    if !(sample_rate > 10.0 * f) {
        return Err(Error::InvalidParameter(format!(
            "sample rate {sample_rate} must exceed 10x the drive frequency {f}"
        )));
    }
    let samples = phi0
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let t = i as f64 / sample_rate;
            (p + beta * (omega * t).sin()).cos()
        })
        .collect();
    Ok(FringeTrace {
        samples,
        sample_rate,
        drive_omega: omega,
    })
}

/// Result of the turning-point coincidence check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HalfWaveCheck {
    pub coincident: bool,
    /// Robust (90th percentile) per-period turning-point level mismatch as a
    /// fraction of the fringe amplitude.
    pub mismatch: f64,
}

/// Local polynomial level of the trace at time `t_star`. Around a
/// modulation turning point the phase runs quadratically in time, so the
/// trace needs a quartic to pin the extremum level below the coincidence
/// tolerance.
fn local_level(trace: &FringeTrace, t_star: f64, half_window: usize) -> f64 {
    let idx = (t_star * trace.sample_rate).round() as isize;
    let lo = (idx - half_window as isize).max(0) as usize;
    let hi = ((idx + half_window as isize) as usize).min(trace.samples.len() - 1);
    let ts: Vec<f64> = (lo..=hi)
        .map(|i| i as f64 / trace.sample_rate - t_star)
        .collect();
    let ys: Vec<f64> = trace.samples[lo..=hi].to_vec();
    let sigmas = vec![1.0; ts.len()];
    let degree = if ts.len() >= 9 { 4 } else { 2 };
    match polyfit_weighted(&ts, &ys, &sigmas, degree) {
        Ok(fit) => fit.coeffs[0],
        Err(_) => trace.samples[idx.clamp(0, trace.samples.len() as isize - 1) as usize],
    }
}

/// Compares the two interior turning-point levels period by period. Slow
/// `phi0` drift only shifts both levels of a period together, so the
/// per-period comparison stays valid; the aggregate is the 90th-percentile
/// mismatch across periods.
pub fn detect_half_wave_condition(trace: &FringeTrace, tolerance: f64) -> Result<HalfWaveCheck> {
    let f = trace.drive_omega / std::f64::consts::TAU;
    let period_samples = trace.sample_rate / f;
    let n_periods = (trace.samples.len() as f64 / period_samples).floor() as usize;
    if n_periods < 3 {
        return Err(Error::InsufficientData(format!(
            "trace spans {n_periods} modulation periods, need at least 3"
        )));
    }
    if period_samples < 12.0 {
        return Err(Error::InsufficientData(
            "too few samples per period to resolve the turning points".into(),
        ));
    }
    let half_window = ((0.025 * period_samples) as usize).max(4);
    let mut mismatches: Vec<f64> = (0..n_periods)
        .map(|p| {
            let t_q = (p as f64 + 0.25) / f;
            let t_3q = (p as f64 + 0.75) / f;
            (local_level(trace, t_q, half_window) - local_level(trace, t_3q, half_window)).abs()
        })
        .collect();
    mismatches.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let robust = mismatches[((mismatches.len() - 1) as f64 * 0.9) as usize];

    let max = trace.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = trace.samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let amplitude = 0.5 * (max - min);
    if !(amplitude > 0.0) {
        return Err(Error::Degenerate("flat trace".into()));
    }
    let mismatch = robust / amplitude;
    Ok(HalfWaveCheck {
        coincident: mismatch < tolerance,
        mismatch,
    })
}

/// Band-limited phase drift: a stationary correlated process with the given
/// RMS and correlation cutoff, sampled at `sample_rate`.
pub fn band_limited_drift(
    n: usize,
    sample_rate: f64,
    cutoff_hz: f64,
    rms: f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = stream_rng(seed, StreamDomain::Calibration, 0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let theta = std::f64::consts::TAU * cutoff_hz;
    let rho = (-theta / sample_rate).exp();
    let drive = (1.0 - rho * rho).sqrt();
    let mut x = normal.sample(&mut rng);
    (0..n)
        .map(|_| {
            let out = rms * x;
            x = rho * x + drive * normal.sample(&mut rng);
            out
        })
        .collect()
}

/// Outcome-per-meter calibration fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CalibrationFit {
    /// Outcome units per meter of mirror displacement.
    pub slope_per_meter: f64,
    pub slope_error: f64,
    pub intercept: f64,
}

/// Weighted linear fit of pulsed outcomes against piezo displacement
/// (`volts * volts_to_meters`). Faults when curvature terms shift the slope
/// by more than 0.5 %, which signals a scan amplitude outside the
/// small-signal regime.
pub fn calibrate_outcome_per_meter(
    volts: &[f64],
    volts_to_meters: f64,
    outcomes: &[f64],
) -> Result<CalibrationFit> {
    if volts.len() != outcomes.len() {
        return Err(Error::InvalidParameter("mismatched series lengths".into()));
    }
    if volts.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "calibration needs at least 10 points, got {}",
            volts.len()
        )));
    }
    if !(volts_to_meters > 0.0 && volts_to_meters.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "volts_to_meters = {volts_to_meters}"
        )));
    }
    let x: Vec<f64> = volts.iter().map(|v| v * volts_to_meters).collect();
    let sigmas = vec![1.0; x.len()];
    let linear = polyfit_weighted(&x, outcomes, &sigmas, 1)?;
    let cubic = polyfit_weighted(&x, outcomes, &sigmas, 3)?;
    let rel_shift = ((linear.coeffs[1] - cubic.coeffs[1]) / cubic.coeffs[1]).abs();
    if rel_shift > 0.005 {
        return Err(Error::Nonlinearity(format!(
            "curvature shifts the slope by {:.2} %",
            100.0 * rel_shift
        )));
    }
    // Scale the slope uncertainty by the residual scatter (unit weights).
    let dof = (x.len() as f64 - 2.0).max(1.0);
    let resid_scale = (linear.chi_squared / dof).sqrt();
    Ok(CalibrationFit {
        slope_per_meter: linear.coeffs[1],
        slope_error: linear.coeff_errors[1] * resid_scale,
        intercept: linear.coeffs[0],
    })
}

/// Small-signal outcome-per-meter scale of a pulse: a mirror displacement
/// `dx` shifts the outcome by `2 sqrt(2) pi sqrt(N) dx / lambda`.
pub fn expected_slope_per_meter(pulse: &PulseSpec) -> f64 {
    2.0 * std::f64::consts::SQRT_2 * std::f64::consts::PI * pulse.n_signal.sqrt()
        / pulse.wavelength
}

/// Simulated pulsed calibration scan: the piezo sweeps sinusoidally with
/// peak-to-peak displacement `scan_pp` while pulses sample the full
/// interferometric response `sqrt(N/2) sin(4 pi dx / lambda)` plus shot and
/// electronic noise. Returns `(volts, outcomes)`.
pub fn simulate_pulse_calibration(
    n_pulses: usize,
    scan_pp: f64,
    volts_to_meters: f64,
    pulse: &PulseSpec,
    electronic_variance: f64,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream_rng(seed, StreamDomain::Calibration, 1);
    let normal = Normal::new(0.0, (0.5 + electronic_variance).sqrt()).unwrap();
    let amplitude = (pulse.n_signal / 2.0).sqrt();
    let mut volts = Vec::with_capacity(n_pulses);
    let mut outcomes = Vec::with_capacity(n_pulses);
    for _ in 0..n_pulses {
        let phase: f64 = rng.sample::<f64, _>(rand::distributions::Standard) * std::f64::consts::TAU;
        let dx = 0.5 * scan_pp * (1.0 + phase.sin());
        let signal = amplitude * (4.0 * std::f64::consts::PI * dx / pulse.wavelength).sin();
        volts.push(dx / volts_to_meters);
        outcomes.push(signal + normal.sample(&mut rng));
    }
    (volts, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const DRIVE_OMEGA: f64 = std::f64::consts::TAU * 1060.0;
    const RATE: f64 = 1060.0 * 256.0;

    fn constant_phi0(n: usize, value: f64) -> Vec<f64> {
        vec![value; n]
    }

    #[test]
    fn zero_depth_gives_flat_cosine() {
        let phi0 = constant_phi0(4096, 0.7);
        let trace = simulate_piezo_fringe(&phi0, 0.0, DRIVE_OMEGA, RATE).unwrap();
        for s in &trace.samples {
            assert_relative_eq!(*s, 0.7f64.cos(), max_relative = 1e-12);
        }
    }

    #[test]
    fn half_wave_depth_coincides_for_any_phase() {
        for phi in [0.0, 0.4, 1.3, 2.9] {
            let phi0 = constant_phi0(16384, phi);
            let trace =
                simulate_piezo_fringe(&phi0, std::f64::consts::PI, DRIVE_OMEGA, RATE).unwrap();
            let check = detect_half_wave_condition(&trace, DEFAULT_TURNING_TOLERANCE).unwrap();
            assert!(check.coincident, "phi0 = {phi}: mismatch = {}", check.mismatch);
            assert!(check.mismatch < 1e-5, "mismatch = {}", check.mismatch);
        }
    }

    #[test]
    fn mismatch_grows_away_from_half_wave() {
        // phi0 sweeps through a fringe so the detector sees unfavorable
        // phases; mismatch rises monotonically with the depth error.
        let n = 65536;
        let phi0: Vec<f64> = (0..n)
            .map(|i| 4.0 * i as f64 / n as f64)
            .collect();
        let mut last = 0.0;
        for beta in [
            std::f64::consts::PI,
            0.97 * std::f64::consts::PI,
            0.9 * std::f64::consts::PI,
            0.8 * std::f64::consts::PI,
        ] {
            let trace = simulate_piezo_fringe(&phi0, beta, DRIVE_OMEGA, RATE).unwrap();
            let check = detect_half_wave_condition(&trace, DEFAULT_TURNING_TOLERANCE).unwrap();
            assert!(
                check.mismatch >= last,
                "beta = {beta}: {} < {last}",
                check.mismatch
            );
            last = check.mismatch;
        }
        assert!(last > 0.2);
    }

    #[test]
    fn quarter_wave_depth_detected_as_mismatched() {
        let n = 65536;
        let phi0: Vec<f64> = (0..n).map(|i| 4.0 * i as f64 / n as f64).collect();
        let trace =
            simulate_piezo_fringe(&phi0, std::f64::consts::FRAC_PI_2, DRIVE_OMEGA, RATE).unwrap();
        let check = detect_half_wave_condition(&trace, DEFAULT_TURNING_TOLERANCE).unwrap();
        assert!(!check.coincident);
    }

    #[test]
    fn noisy_half_wave_trace_with_documented_tolerance() {
        let mut rng = stream_rng(3, StreamDomain::Calibration, 7);
        let noise = Normal::new(0.0, 0.01).unwrap(); // 40 dB SNR
        let phi0 = band_limited_drift(65536, RATE, 0.001, 1.5, 5);
        let mut trace =
            simulate_piezo_fringe(&phi0, std::f64::consts::PI, DRIVE_OMEGA, RATE).unwrap();
        for s in &mut trace.samples {
            *s += noise.sample(&mut rng);
        }
        let check = detect_half_wave_condition(&trace, 0.02).unwrap();
        assert!(check.coincident, "mismatch = {}", check.mismatch);
    }

    #[test]
    fn detector_ignores_constant_offset_and_slow_drift() {
        let n = 131072;
        let base: Vec<f64> = (0..n).map(|i| 1.5 * i as f64 / n as f64).collect();
        let shifted: Vec<f64> = base.iter().map(|p| p + 1.234).collect();
        let t_base = simulate_piezo_fringe(&base, std::f64::consts::PI, DRIVE_OMEGA, RATE).unwrap();
        let t_shift =
            simulate_piezo_fringe(&shifted, std::f64::consts::PI, DRIVE_OMEGA, RATE).unwrap();
        let a = detect_half_wave_condition(&t_base, DEFAULT_TURNING_TOLERANCE).unwrap();
        let b = detect_half_wave_condition(&t_shift, DEFAULT_TURNING_TOLERANCE).unwrap();
        assert!(a.coincident && b.coincident);
    }

    #[test]
    fn too_short_trace_faults() {
        let phi0 = constant_phi0(300, 0.0);
        let trace = simulate_piezo_fringe(&phi0, std::f64::consts::PI, DRIVE_OMEGA, RATE).unwrap();
        assert!(matches!(
            detect_half_wave_condition(&trace, DEFAULT_TURNING_TOLERANCE),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn calibration_recovers_known_scale() {
        let pulse = PulseSpec::new(1e7, 1e10, 1.064e-6, 1e-6).unwrap();
        let volts_to_meters = 532e-9 / 4.6;
        let (volts, outcomes) = simulate_pulse_calibration(
            300,
            pulse.wavelength / 80.0,
            volts_to_meters,
            &pulse,
            0.0,
            11,
        );
        let fit = calibrate_outcome_per_meter(&volts, volts_to_meters, &outcomes).unwrap();
        let expected = expected_slope_per_meter(&pulse);
        assert!(
            (fit.slope_per_meter - expected).abs() / expected < 0.005,
            "slope = {}, expected = {expected}",
            fit.slope_per_meter
        );
    }

    #[test]
    fn half_wavelength_scan_faults_nonlinear() {
        let pulse = PulseSpec::new(1e7, 1e10, 1.064e-6, 1e-6).unwrap();
        let volts_to_meters = 532e-9 / 4.6;
        let (volts, outcomes) = simulate_pulse_calibration(
            300,
            pulse.wavelength / 2.0,
            volts_to_meters,
            &pulse,
            0.0,
            13,
        );
        assert!(matches!(
            calibrate_outcome_per_meter(&volts, volts_to_meters, &outcomes),
            Err(Error::Nonlinearity(_))
        ));
    }

    #[test]
    fn slope_scales_with_root_photon_number() {
        let volts_to_meters = 532e-9 / 4.6;
        let mut slopes = Vec::new();
        for n_signal in [1e7, 4e7] {
            let pulse = PulseSpec::new(n_signal, 1e10, 1.064e-6, 1e-6).unwrap();
            let (volts, outcomes) = simulate_pulse_calibration(
                2000,
                pulse.wavelength / 100.0,
                volts_to_meters,
                &pulse,
                0.0,
                17,
            );
            let fit = calibrate_outcome_per_meter(&volts, volts_to_meters, &outcomes).unwrap();
            slopes.push(fit.slope_per_meter);
        }
        assert_relative_eq!(slopes[1] / slopes[0], 2.0, max_relative = 0.01);
    }

    #[test]
    fn end_to_end_displacement_recovery() {
        // Apply the recovered calibration to fresh simulated data and read
        // displacements back in meters.
        let pulse = PulseSpec::new(1e7, 1e10, 1.064e-6, 1e-6).unwrap();
        let volts_to_meters = 532e-9 / 4.6;
        let (volts, outcomes) = simulate_pulse_calibration(
            5000,
            pulse.wavelength / 100.0,
            volts_to_meters,
            &pulse,
            0.0,
            19,
        );
        let fit = calibrate_outcome_per_meter(&volts, volts_to_meters, &outcomes).unwrap();
        let (volts2, outcomes2) = simulate_pulse_calibration(
            5000,
            pulse.wavelength / 100.0,
            volts_to_meters,
            &pulse,
            0.0,
            23,
        );
        // Mean displacement recovered from outcomes vs the known drive.
        let mean_outcome = outcomes2.iter().sum::<f64>() / outcomes2.len() as f64;
        let mean_dx_known =
            volts2.iter().sum::<f64>() / volts2.len() as f64 * volts_to_meters;
        let mean_dx = (mean_outcome - fit.intercept) / fit.slope_per_meter;
        assert!(
            (mean_dx - mean_dx_known).abs() / mean_dx_known < 0.01,
            "recovered {mean_dx}, known {mean_dx_known}"
        );
    }
}
