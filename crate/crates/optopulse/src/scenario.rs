//! Scenario configs: a single JSON document describes the oscillator, pulse
//! defaults, noise model, and the task to run. Execution is deterministic
//! for a fixed seed; every output embeds the resolved configuration.
//!
//! Numbers are SI with the unit in the field name (`frequency_hz`,
//! `effective_mass_kg`, `wavelength_m`, ...). Angles are degrees in configs
//! and radians everywhere else.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calib::{
    band_limited_drift, calibrate_outcome_per_meter, detect_half_wave_condition,
    expected_slope_per_meter, simulate_piezo_fringe, simulate_pulse_calibration, CalibrationFit,
    HalfWaveCheck, DEFAULT_TURNING_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::mech::OscillatorParams;
use crate::modal::{
    effective_mass, optical_overlap, piston_mode, read_grid, rms_contributions, BeamProfile,
    CantileverGeometry, ModeShape, ModeSummary, RmsContribution,
};
use crate::noise::{
    compare_linear_quadratic, electronic_variance_for_floor, fit_linear_r2, scan_total_photons,
    ScanPoint,
};
use crate::protocol::{
    analyze_widths, run_protocol, width_vs_strength, width_vs_theta, InitialState, PrepPulse,
    ProtocolSpec, RunRecord, StrengthPoint, WidthPoint,
};
use crate::pulse::{measurement_strength, momentum_kick, NoiseSpec, PulseSpec};
use crate::tomo::{
    histogram_outcomes, inverse_radon, symmetrize, MarginalSet, PhaseSpaceMap, ReconOptions,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorConfig {
    pub frequency_hz: f64,
    pub effective_mass_kg: f64,
    pub quality_factor: f64,
    pub bath_temperature_k: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    pub signal_photons: f64,
    pub lo_photons: f64,
    pub wavelength_m: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub classical_phase_coeff: f64,
    pub classical_corr_time_s: f64,
    pub electronic_variance: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStateConfig {
    Thermal { temperature_k: f64 },
    Driven { temperature_k: f64, amplitude: f64 },
}

impl From<InitialStateConfig> for InitialState {
    fn from(c: InitialStateConfig) -> Self {
        match c {
            InitialStateConfig::Thermal { temperature_k } => InitialState::Thermal { temperature_k },
            InitialStateConfig::Driven {
                temperature_k,
                amplitude,
            } => InitialState::Driven {
                temperature_k,
                amplitude,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomoConfig {
    pub grid_size: usize,
    /// Raised-cosine apodization strength in [0, 1].
    pub apodization: f64,
    #[serde(default)]
    pub extent: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectronicFloorConfig {
    pub db_below_quantum: f64,
    pub at_n_tot: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticMode {
    Piston {
        lx_m: f64,
        ly_m: f64,
        lz_m: f64,
        amplitude: f64,
        nodes: usize,
    },
    Cantilever {
        geometry: CantileverGeometry,
        nx: usize,
        ny: usize,
        nz: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    /// Beam diameter `4 r0` (m).
    pub diameter_m: f64,
    /// Beam center on the surface; defaults to the synthetic head center or
    /// the grid origin.
    #[serde(default)]
    pub center_m: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSummaryConfig {
    pub label: String,
    pub m_eff_kg: f64,
    pub frequency_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    /// Run a pulse protocol at one or more read-out angles and build the
    /// marginal set (plus an optional reconstruction).
    Protocol {
        initial_state: InitialStateConfig,
        prep_pulses: usize,
        readout_angles_deg: Vec<f64>,
        repetitions: usize,
        #[serde(default)]
        histogram_bins: Option<usize>,
        #[serde(default)]
        reinit_time_s: Option<f64>,
        #[serde(default)]
        tomography: Option<TomoConfig>,
    },
    WidthVsTheta {
        initial_state: InitialStateConfig,
        prep_pulses: usize,
        angles_deg: Vec<f64>,
        repetitions: usize,
        #[serde(default)]
        reinit_time_s: Option<f64>,
    },
    WidthVsStrength {
        initial_state: InitialStateConfig,
        photon_numbers: Vec<f64>,
        readout_angle_deg: f64,
        repetitions: usize,
        #[serde(default)]
        reinit_time_s: Option<f64>,
    },
    NoiseScan {
        n_tot: Vec<f64>,
        pulse_separation_s: f64,
        pairs_per_point: usize,
        #[serde(default)]
        electronic_floor: Option<ElectronicFloorConfig>,
    },
    EffectiveMass {
        #[serde(default)]
        grid_file: Option<String>,
        #[serde(default)]
        synthetic: Option<SyntheticMode>,
        beam: BeamConfig,
        /// Write the (possibly synthetic) grid to this file.
        #[serde(default)]
        emit_grid: Option<String>,
        #[serde(default)]
        mode_set: Option<Vec<ModeSummaryConfig>>,
        #[serde(default)]
        rms_temperature_k: Option<f64>,
    },
    Calibrate {
        drive_hz: f64,
        volts_pp_at_half_wave: f64,
        modulation_depth_rad: f64,
        fringe_periods: usize,
        samples_per_period: usize,
        drift_rms_rad: f64,
        drift_cutoff_hz: f64,
        pulse_count: usize,
        /// Pulsed scan peak-to-peak displacement as a fraction of the
        /// wavelength.
        pulse_scan_fraction: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub oscillator: OscillatorConfig,
    pub pulse: PulseConfig,
    pub noise: NoiseConfig,
    pub task: Task,
}

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        let scenario: Scenario = serde_json::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.oscillator;
        OscillatorParams::from_frequency_hz(
            o.frequency_hz,
            o.effective_mass_kg,
            o.quality_factor,
            o.bath_temperature_k,
        )
        .map_err(|e| Error::config("oscillator", e.to_string()))?;
        PulseSpec::new(
            self.pulse.signal_photons,
            self.pulse.lo_photons,
            self.pulse.wavelength_m,
            self.pulse.duration_s,
        )
        .map_err(|e| Error::config("pulse", e.to_string()))?;
        self.noise_spec()
            .validate()
            .map_err(|e| Error::config("noise", e.to_string()))?;
        match &self.task {
            Task::Protocol {
                repetitions,
                readout_angles_deg,
                prep_pulses,
                tomography,
                ..
            } => {
                if *repetitions == 0 {
                    return Err(Error::config("task.repetitions", "must be at least 1"));
                }
                if readout_angles_deg.is_empty() {
                    return Err(Error::config("task.readout_angles_deg", "must be non-empty"));
                }
                if readout_angles_deg.iter().any(|a| !(0.0..=90.0).contains(a)) {
                    return Err(Error::config(
                        "task.readout_angles_deg",
                        "marginal angles must lie in [0, 90] degrees",
                    ));
                }
                if *prep_pulses > 2 {
                    return Err(Error::config("task.prep_pulses", "at most 2"));
                }
                if let Some(t) = tomography {
                    if !(0.0..=1.0).contains(&t.apodization) {
                        return Err(Error::config("task.tomography.apodization", "must be in [0, 1]"));
                    }
                    if t.grid_size < 8 {
                        return Err(Error::config("task.tomography.grid_size", "must be >= 8"));
                    }
                }
            }
            Task::WidthVsTheta {
                repetitions,
                angles_deg,
                prep_pulses,
                ..
            } => {
                if *repetitions == 0 {
                    return Err(Error::config("task.repetitions", "must be at least 1"));
                }
                if angles_deg.is_empty() {
                    return Err(Error::config("task.angles_deg", "must be non-empty"));
                }
                if *prep_pulses > 2 {
                    return Err(Error::config("task.prep_pulses", "at most 2"));
                }
            }
            Task::WidthVsStrength {
                repetitions,
                photon_numbers,
                ..
            } => {
                if *repetitions == 0 {
                    return Err(Error::config("task.repetitions", "must be at least 1"));
                }
                if photon_numbers.is_empty() || photon_numbers.iter().any(|n| !(n > &0.0)) {
                    return Err(Error::config(
                        "task.photon_numbers",
                        "must be non-empty and positive",
                    ));
                }
            }
            Task::NoiseScan {
                n_tot,
                pulse_separation_s,
                pairs_per_point,
                ..
            } => {
                if n_tot.is_empty() || n_tot.iter().any(|n| !(n > &0.0)) {
                    return Err(Error::config("task.n_tot", "must be non-empty and positive"));
                }
                if !(pulse_separation_s > &0.0) {
                    return Err(Error::config("task.pulse_separation_s", "must be positive"));
                }
                if *pairs_per_point < 2 {
                    return Err(Error::config("task.pairs_per_point", "must be at least 2"));
                }
            }
            Task::EffectiveMass {
                grid_file,
                synthetic,
                beam,
                ..
            } => {
                if grid_file.is_none() && synthetic.is_none() {
                    return Err(Error::config(
                        "task",
                        "needs either grid_file or synthetic",
                    ));
                }
                if !(beam.diameter_m > 0.0) {
                    return Err(Error::config("task.beam.diameter_m", "must be positive"));
                }
            }
            Task::Calibrate {
                drive_hz,
                volts_pp_at_half_wave,
                fringe_periods,
                samples_per_period,
                pulse_count,
                pulse_scan_fraction,
                ..
            } => {
                if !(drive_hz > &0.0) || !(volts_pp_at_half_wave > &0.0) {
                    return Err(Error::config("task", "drive and volts must be positive"));
                }
                if *fringe_periods < 3 || *samples_per_period < 16 {
                    return Err(Error::config(
                        "task",
                        "need at least 3 fringe periods and 16 samples per period",
                    ));
                }
                if *pulse_count < 10 || !(pulse_scan_fraction > &0.0) {
                    return Err(Error::config(
                        "task",
                        "need at least 10 pulses and a positive scan fraction",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn oscillator_params(&self) -> OscillatorParams {
        OscillatorParams::from_frequency_hz(
            self.oscillator.frequency_hz,
            self.oscillator.effective_mass_kg,
            self.oscillator.quality_factor,
            self.oscillator.bath_temperature_k,
        )
        .expect("validated")
    }

    pub fn pulse_spec(&self) -> PulseSpec {
        PulseSpec::new(
            self.pulse.signal_photons,
            self.pulse.lo_photons,
            self.pulse.wavelength_m,
            self.pulse.duration_s,
        )
        .expect("validated")
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            classical_phase_coeff: self.noise.classical_phase_coeff,
            classical_corr_time: self.noise.classical_corr_time_s,
            electronic_variance: self.noise.electronic_variance,
            rng_seed: self.seed,
        }
    }

    fn protocol_spec(
        &self,
        initial_state: InitialStateConfig,
        prep_pulses: usize,
        theta_r: f64,
        repetitions: usize,
        reinit_time_s: Option<f64>,
    ) -> ProtocolSpec {
        let pulse = self.pulse_spec();
        let preps = match prep_pulses {
            0 => vec![],
            1 => vec![PrepPulse {
                pulse,
                angle_from_previous: 0.0,
            }],
            _ => vec![
                PrepPulse {
                    pulse,
                    angle_from_previous: 0.0,
                },
                PrepPulse {
                    pulse,
                    angle_from_previous: std::f64::consts::FRAC_PI_2,
                },
            ],
        };
        ProtocolSpec {
            prep_pulses: preps,
            readout_pulse: pulse,
            theta_r,
            repetitions,
            initial_state: initial_state.into(),
            noise: self.noise_spec(),
            reinit_time: reinit_time_s,
        }
    }
}

/// Scalar summary of a protocol run, written alongside the datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub chi: f64,
    pub omega: f64,
    pub x0_m: f64,
    pub angles_deg: Vec<f64>,
    pub sigma_x_m: Vec<f64>,
    pub flagged: Vec<bool>,
    pub mean_sigma_x_m: f64,
    /// From the first/last angle pair when both are clean.
    pub t_eff_k: Option<f64>,
    pub n_eff: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolOutput {
    pub records: Vec<RunRecord>,
    pub widths: Vec<WidthPoint>,
    pub marginals: MarginalSet,
    pub summary: ProtocolSummary,
    pub map: Option<PhaseSpaceMap>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseScanOutput {
    pub points: Vec<ScanPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub quadratic_preferred: bool,
    pub quadratic_t: f64,
    /// Configured and simulated electronic floor relative to quantum noise.
    pub floor_configured_db: Option<f64>,
    pub floor_measured_db: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveMassOutput {
    pub m_eff_kg: f64,
    pub overlap_per_amplitude: f64,
    pub grid_label: String,
    pub rms: Option<Vec<RmsContribution>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrateOutput {
    pub half_wave: HalfWaveCheck,
    pub volts_to_meters: f64,
    pub fit: CalibrationFit,
    pub expected_slope_per_meter: f64,
    pub slope_relative_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOutput {
    Protocol(ProtocolOutput),
    WidthVsTheta(Vec<WidthPoint>),
    WidthVsStrength(Vec<StrengthPoint>),
    NoiseScan(NoiseScanOutput),
    EffectiveMass(EffectiveMassOutput),
    Calibrate(CalibrateOutput),
}

/// Executes the scenario. `parallel = false` forces sequential repetition
/// loops; results are identical either way.
pub fn run_scenario(scenario: &Scenario, parallel: bool) -> Result<TaskOutput> {
    scenario.validate()?;
    let osc = scenario.oscillator_params();
    let seed = scenario.seed;
    match &scenario.task {
        Task::Protocol {
            initial_state,
            prep_pulses,
            readout_angles_deg,
            repetitions,
            histogram_bins,
            reinit_time_s,
            tomography,
        } => {
            let bins = histogram_bins.unwrap_or(crate::protocol::SWEEP_BINS);
            let x0 = osc.zero_point();
            let chi_r = measurement_strength(&scenario.pulse_spec(), x0);
            let mut records = Vec::new();
            let mut widths = Vec::new();
            let mut histograms = Vec::new();
            let mut angles = Vec::new();
            for (i, &deg) in readout_angles_deg.iter().enumerate() {
                let theta = deg.to_radians();
                let spec = scenario.protocol_spec(
                    *initial_state,
                    *prep_pulses,
                    theta,
                    *repetitions,
                    *reinit_time_s,
                );
                let rec_seed = seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
                let record = run_protocol(&osc, &spec, rec_seed, parallel)?;
                widths.push(analyze_widths(&osc, &spec, &record, bins)?);
                let xm: Vec<f64> = record
                    .transformed()
                    .iter()
                    .map(|v| v / chi_r)
                    .collect();
                histograms.push(histogram_outcomes(&xm, bins)?);
                angles.push(theta);
                records.push(record);
            }
            let marginals = MarginalSet {
                angles,
                histograms,
                scale: osc.meters_per_quadrature(),
                chi_used: chi_r,
            };
            let map = match tomography {
                Some(t) => {
                    let full = symmetrize(&marginals)?;
                    Some(inverse_radon(
                        &full,
                        t.grid_size,
                        &ReconOptions {
                            apodization: t.apodization,
                            extent: t.extent,
                        },
                    )?)
                }
                None => None,
            };
            let sigma: Vec<f64> = widths.iter().map(|w| w.sigma_x_m).collect();
            let flagged: Vec<bool> = widths.iter().map(|w| w.flagged).collect();
            let mean_sigma = sigma.iter().sum::<f64>() / sigma.len() as f64;
            let (t_eff, n_eff) = if sigma.len() >= 2 && !flagged[0] && !flagged[sigma.len() - 1] {
                let t = osc
                    .effective_temperature(sigma[0], sigma[sigma.len() - 1])
                    .ok();
                let n = t.map(|t| osc.mean_occupation(t));
                (t, n)
            } else {
                (None, None)
            };
            let summary = ProtocolSummary {
                chi: chi_r,
                omega: momentum_kick(&scenario.pulse_spec(), x0),
                x0_m: x0,
                angles_deg: readout_angles_deg.clone(),
                sigma_x_m: sigma,
                flagged,
                mean_sigma_x_m: mean_sigma,
                t_eff_k: t_eff,
                n_eff,
            };
            Ok(TaskOutput::Protocol(ProtocolOutput {
                records,
                widths,
                marginals,
                summary,
                map,
            }))
        }
        Task::WidthVsTheta {
            initial_state,
            prep_pulses,
            angles_deg,
            repetitions,
            reinit_time_s,
        } => {
            let base = scenario.protocol_spec(
                *initial_state,
                *prep_pulses,
                0.0,
                *repetitions,
                *reinit_time_s,
            );
            let thetas: Vec<f64> = angles_deg.iter().map(|d| d.to_radians()).collect();
            Ok(TaskOutput::WidthVsTheta(width_vs_theta(
                &osc, &base, &thetas, seed, parallel,
            )?))
        }
        Task::WidthVsStrength {
            initial_state,
            photon_numbers,
            readout_angle_deg,
            repetitions,
            reinit_time_s,
        } => {
            let base = scenario.protocol_spec(
                *initial_state,
                1,
                readout_angle_deg.to_radians(),
                *repetitions,
                *reinit_time_s,
            );
            Ok(TaskOutput::WidthVsStrength(width_vs_strength(
                &osc,
                &base,
                photon_numbers,
                seed,
                parallel,
            )?))
        }
        Task::NoiseScan {
            n_tot,
            pulse_separation_s,
            pairs_per_point,
            electronic_floor,
        } => {
            let mut noise = scenario.noise_spec();
            let mut floor_configured_db = None;
            if let Some(f) = electronic_floor {
                noise.electronic_variance =
                    electronic_variance_for_floor(f.db_below_quantum, f.at_n_tot);
                floor_configured_db = Some(-f.db_below_quantum);
            }
            let points =
                scan_total_photons(n_tot, &noise, *pulse_separation_s, *pairs_per_point, seed)?;
            let (slope, intercept, r_squared) = fit_linear_r2(&points)?;
            let cmp = compare_linear_quadratic(&points)?;
            let floor_measured_db = electronic_floor
                .as_ref()
                .map(|f| -> Result<f64> {
                    // Simulate the no-light conditional variance and the
                    // quantum-limited variance at the reference point.
                    let dark = scan_total_photons(
                        &[1e-300],
                        &NoiseSpec {
                            classical_phase_coeff: 0.0,
                            classical_corr_time: noise.classical_corr_time,
                            electronic_variance: noise.electronic_variance,
                            rng_seed: noise.rng_seed,
                        },
                        *pulse_separation_s,
                        200_000,
                        seed ^ 0xD1CE,
                    )?;
                    let bright = scan_total_photons(
                        &[f.at_n_tot],
                        &NoiseSpec {
                            electronic_variance: 0.0,
                            ..noise
                        },
                        *pulse_separation_s,
                        200_000,
                        seed ^ 0xB001,
                    )?;
                    Ok(10.0 * (dark[0].variance / bright[0].variance).log10())
                })
                .transpose()?;
            Ok(TaskOutput::NoiseScan(NoiseScanOutput {
                points,
                slope,
                intercept,
                r_squared,
                quadratic_preferred: cmp.quadratic_preferred,
                quadratic_t: cmp.quadratic_t,
                floor_configured_db,
                floor_measured_db,
            }))
        }
        Task::EffectiveMass {
            grid_file,
            synthetic,
            beam,
            emit_grid,
            mode_set,
            rms_temperature_k,
        } => {
            let mode: ModeShape = match (grid_file, synthetic) {
                (Some(path), _) => read_grid(Path::new(path))?,
                (None, Some(SyntheticMode::Piston {
                    lx_m,
                    ly_m,
                    lz_m,
                    amplitude,
                    nodes,
                })) => piston_mode(
                    *lx_m,
                    *ly_m,
                    *lz_m,
                    *amplitude,
                    scenario.oscillator.effective_mass_kg / (lx_m * ly_m * lz_m),
                    scenario.oscillator.frequency_hz,
                    *nodes,
                ),
                (None, Some(SyntheticMode::Cantilever { geometry, nx, ny, nz })) => {
                    geometry.sample(*nx, *ny, *nz, "fundamental")
                }
                (None, None) => unreachable!("validated"),
            };
            if let Some(path) = emit_grid {
                crate::modal::write_grid(&mode, Path::new(path))?;
            }
            let center = beam.center_m.unwrap_or(match synthetic {
                Some(SyntheticMode::Cantilever { geometry, .. }) if grid_file.is_none() => {
                    geometry.head_center()
                }
                _ => [
                    mode.origin[0] + (mode.nx - 1) as f64 * mode.spacing[0] / 2.0,
                    mode.origin[1] + (mode.ny - 1) as f64 * mode.spacing[1] / 2.0,
                ],
            });
            let profile = BeamProfile::new(beam.diameter_m / 4.0, center)?;
            let m_eff = effective_mass(&mode, &profile)?;
            let overlap = optical_overlap(&mode, &profile)?;
            let rms = match (mode_set, rms_temperature_k) {
                (Some(set), Some(t)) => {
                    let summaries: Vec<ModeSummary> = set
                        .iter()
                        .map(|m| ModeSummary {
                            label: m.label.clone(),
                            m_eff: m.m_eff_kg,
                            frequency_hz: m.frequency_hz,
                        })
                        .collect();
                    Some(rms_contributions(&summaries, *t)?)
                }
                _ => None,
            };
            Ok(TaskOutput::EffectiveMass(EffectiveMassOutput {
                m_eff_kg: m_eff,
                overlap_per_amplitude: overlap,
                grid_label: mode.label.clone(),
                rms,
            }))
        }
        Task::Calibrate {
            drive_hz,
            volts_pp_at_half_wave,
            modulation_depth_rad,
            fringe_periods,
            samples_per_period,
            drift_rms_rad,
            drift_cutoff_hz,
            pulse_count,
            pulse_scan_fraction,
        } => {
            let rate = drive_hz * *samples_per_period as f64;
            let n = fringe_periods * samples_per_period;
            let phi0 = band_limited_drift(n, rate, *drift_cutoff_hz, *drift_rms_rad, seed);
            let trace = simulate_piezo_fringe(
                &phi0,
                *modulation_depth_rad,
                std::f64::consts::TAU * drive_hz,
                rate,
            )?;
            let half_wave = detect_half_wave_condition(&trace, DEFAULT_TURNING_TOLERANCE)?;
            // Half a wavelength of travel per volts_pp at the matched depth.
            let volts_to_meters = scenario.pulse.wavelength_m / 2.0 / volts_pp_at_half_wave;
            let pulse = scenario.pulse_spec();
            let (volts, outcomes) = simulate_pulse_calibration(
                *pulse_count,
                scenario.pulse.wavelength_m * pulse_scan_fraction,
                volts_to_meters,
                &pulse,
                scenario.noise.electronic_variance,
                seed,
            );
            let fit = calibrate_outcome_per_meter(&volts, volts_to_meters, &outcomes)?;
            let expected = expected_slope_per_meter(&pulse);
            Ok(TaskOutput::Calibrate(CalibrateOutput {
                half_wave,
                volts_to_meters,
                fit,
                expected_slope_per_meter: expected,
                slope_relative_error: (fit.slope_per_meter - expected).abs() / expected,
            }))
        }
    }
}
