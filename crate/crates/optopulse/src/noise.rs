//! Quantum-noise-limit verification: conditional variance of pulse pairs
//! against total photon number.
//!
//! The scan runs in rigid-mirror mode (no mechanical coupling) and in
//! absolute homodyne units with the scale fixed by the quantum term's slope:
//! one photon of `N_TOT` contributes one unit of single-pulse quantum
//! variance. Shot noise then grows linearly with `N_TOT`, classical phase
//! noise quadratically, and electronic noise stays constant, so a weighted
//! linear fit distinguishes the quantum-limited regime from classical-phase-
//! noise domination.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::NoiseSpec;
use crate::rng::{stream_rng, StreamDomain};
use crate::stats::{mean_variance, polyfit_weighted, PolyFit};

/// Sample variance of pairwise differences `P2 - P1`.
pub fn conditional_variance_pair(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| b - a).collect();
    Ok(mean_variance(&diffs).1)
}

/// One scan point: conditional variance (absolute homodyne units) with its
/// one-standard-deviation estimator uncertainty.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScanPoint {
    pub n_tot: f64,
    pub variance: f64,
    pub uncertainty: f64,
}

/// Simulates conditional variances of pulse pairs over `n_tot_list`, with a
/// fixed signal-to-LO ratio implied (only the total matters here), at the
/// given pulse separation. Embarrassingly parallel over points via disjoint
/// RNG streams, evaluated sequentially for its modest size.
pub fn scan_total_photons(
    n_tot_list: &[f64],
    noise: &NoiseSpec,
    pulse_separation: f64,
    pairs_per_point: usize,
    seed: u64,
) -> Result<Vec<ScanPoint>> {
    noise.validate()?;
    if pairs_per_point < 2 {
        return Err(Error::InsufficientData("need at least 2 pairs".into()));
    }
    if !(pulse_separation > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "pulse separation = {pulse_separation}"
        )));
    }
    let rho = (-pulse_separation / noise.classical_corr_time).exp();
    let normal = Normal::new(0.0, 1.0).unwrap();
    n_tot_list
        .iter()
        .enumerate()
        .map(|(k, &n_tot)| {
            if !(n_tot > 0.0) {
                return Err(Error::InvalidParameter(format!("n_tot = {n_tot}")));
            }
            let mut rng = stream_rng(seed, StreamDomain::NoiseScan, k as u64);
            let quantum_sigma = n_tot.sqrt();
            // Classical offset in absolute units: sqrt(2 c_cl) * N_TOT.
            let classical_sigma = (2.0 * noise.classical_phase_coeff).sqrt() * n_tot;
            let electronic_sigma = noise.electronic_variance.sqrt();
            let pairs: Vec<(f64, f64)> = (0..pairs_per_point)
                .map(|_| {
                    let phi1: f64 = normal.sample(&mut rng);
                    let phi2 = rho * phi1 + (1.0 - rho * rho).sqrt() * normal.sample(&mut rng);
                    let draw = |phi: f64, rng: &mut _| {
                        quantum_sigma * normal.sample(rng)
                            + classical_sigma * phi
                            + electronic_sigma * normal.sample(rng)
                    };
                    let a = draw(phi1, &mut rng);
                    let b = draw(phi2, &mut rng);
                    (a, b)
                })
                .collect();
            let variance = conditional_variance_pair(&pairs)?;
            let uncertainty = variance * (2.0 / (pairs_per_point as f64 - 1.0)).sqrt();
            Ok(ScanPoint {
                n_tot,
                variance,
                uncertainty,
            })
        })
        .collect()
}

/// Electronic-floor level relative to the optical quantum noise at `n_tot`,
/// in dB (negative when the floor sits below the quantum noise).
pub fn electronic_floor_db(noise: &NoiseSpec, n_tot: f64) -> f64 {
    10.0 * (noise.electronic_variance / n_tot).log10()
}

/// Electronic variance that places the floor `db_below` decibels under the
/// quantum noise at `n_tot` (absolute units).
pub fn electronic_variance_for_floor(db_below: f64, n_tot: f64) -> f64 {
    n_tot * 10f64.powf(-db_below / 10.0)
}

/// Weighted linear fit over scan points: `(slope, intercept, R^2)`.
pub fn fit_linear_r2(points: &[ScanPoint]) -> Result<(f64, f64, f64)> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let x: Vec<f64> = points.iter().map(|p| p.n_tot).collect();
    let y: Vec<f64> = points.iter().map(|p| p.variance).collect();
    let s: Vec<f64> = points.iter().map(|p| p.uncertainty).collect();
    let fit = polyfit_weighted(&x, &y, &s, 1)?;
    Ok((fit.coeffs[1], fit.coeffs[0], fit.r_squared))
}

/// Linear-versus-quadratic model comparison for a scan.
#[derive(Debug, Clone)]
pub struct ModelComparison {
    pub linear: PolyFit,
    pub quadratic: PolyFit,
    /// Significance of the quadratic coefficient in standard deviations.
    pub quadratic_t: f64,
    pub quadratic_preferred: bool,
}

/// Fits both models; the quadratic wins when its extra coefficient is
/// significant at five standard deviations.
pub fn compare_linear_quadratic(points: &[ScanPoint]) -> Result<ModelComparison> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    let x: Vec<f64> = points.iter().map(|p| p.n_tot).collect();
    let y: Vec<f64> = points.iter().map(|p| p.variance).collect();
    let s: Vec<f64> = points.iter().map(|p| p.uncertainty).collect();
    let linear = polyfit_weighted(&x, &y, &s, 1)?;
    let quadratic = polyfit_weighted(&x, &y, &s, 2)?;
    let quadratic_t = if quadratic.coeff_errors[2] > 0.0 {
        (quadratic.coeffs[2] / quadratic.coeff_errors[2]).abs()
    } else {
        0.0
    };
    Ok(ModelComparison {
        quadratic_preferred: quadratic_t > 5.0,
        linear,
        quadratic,
        quadratic_t,
    })
}
