//! Marginal histograms and phase-space reconstruction.
//!
//! Transformed read-out outcomes scaled by `1/chi` sample the mechanical
//! marginal `p(X_M, theta)` convolved with the optical noise. This module
//! histograms outcomes, fits Gaussian profiles, subtracts the optical noise
//! budget, mirrors marginals measured on the first quadrant to the full
//! circle, and reconstructs the phase-space distribution `W(X_M, P_M)` by
//! filtered back-projection with a ramp filter and optional raised-cosine
//! apodization.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{fit_gaussian, GaussianFit};

/// Asymmetry tolerance for the symmetrization consistency check:
/// `|mean| / sigma` of each input marginal must stay below this.
pub const ASYMMETRY_TOLERANCE: f64 = 0.35;

/// Uniform-bin histogram with explicit edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Strictly increasing bin edges, length `counts.len() + 1`.
    pub edges: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.edges[self.edges.len() - 1] - self.edges[0]) / self.counts.len() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Probability density at bin centers.
    pub fn density(&self) -> Vec<f64> {
        let norm = self.total() * self.bin_width();
        self.counts.iter().map(|c| c / norm).collect()
    }

    /// Grouped sample mean and variance from bin centers.
    pub fn moments(&self) -> (f64, f64) {
        let total = self.total();
        let centers = self.centers();
        let mean = centers
            .iter()
            .zip(&self.counts)
            .map(|(x, c)| x * c)
            .sum::<f64>()
            / total;
        let var = centers
            .iter()
            .zip(&self.counts)
            .map(|(x, c)| c * (x - mean) * (x - mean))
            .sum::<f64>()
            / total;
        (mean, var)
    }

    /// Histogram mirrored about zero.
    pub fn reflected(&self) -> Histogram {
        let edges: Vec<f64> = self.edges.iter().rev().map(|e| -e).collect();
        let counts: Vec<f64> = self.counts.iter().rev().cloned().collect();
        Histogram { edges, counts }
    }

    /// Indices of prominent local maxima after light smoothing; used to
    /// detect multi-peaked marginals. Adjacent maxima without a genuine dip
    /// between them collapse onto the taller one.
    pub fn local_maxima(&self) -> Vec<usize> {
        let n = self.counts.len();
        if n < 3 {
            return vec![];
        }
        let smooth: Vec<f64> = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(2);
                let hi = (i + 2).min(n - 1);
                (lo..=hi).map(|j| self.counts[j]).sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();
        let peak = smooth.iter().cloned().fold(0.0f64, f64::max);
        let mut maxima: Vec<usize> = vec![];
        for i in 1..n - 1 {
            if !(smooth[i] > smooth[i - 1] && smooth[i] >= smooth[i + 1]
                && smooth[i] > 0.35 * peak)
            {
                continue;
            }
            if let Some(&last) = maxima.last() {
                let valley = smooth[last..=i].iter().cloned().fold(f64::INFINITY, f64::min);
                let lower = smooth[last].min(smooth[i]);
                if valley > 0.75 * lower {
                    if smooth[i] > smooth[last] {
                        *maxima.last_mut().unwrap() = i;
                    }
                    continue;
                }
            }
            maxima.push(i);
        }
        maxima
    }
}

/// Histograms `values` over uniform bins spanning the sample mean plus or
/// minus four standard deviations, widened when needed so every value is
/// counted. Deterministic given its inputs.
pub fn histogram_outcomes(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "histogram needs at least 2 values, got {}",
            values.len()
        )));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be positive".into()));
    }
    let (mean, var) = crate::stats::mean_variance(values);
    if var == 0.0 {
        return Err(Error::Degenerate(
            "all values identical; histogram collapses to a single bin".into(),
        ));
    }
    let sd = var.sqrt();
    let vmin = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = (mean - 4.0 * sd).min(vmin);
    let hi = (mean + 4.0 * sd).max(vmax) * (1.0 + 1e-12) + 1e-300;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1.0;
    }
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    Ok(Histogram { edges, counts })
}

/// Gaussian profile fit; uncertainties come from the fit covariance.
pub fn gaussian_fit(h: &Histogram) -> Result<GaussianFit> {
    fit_gaussian(&h.centers(), &h.counts, h.total())
}

/// Optical noise contributions to an outcome variance, in `P_L` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalNoiseBudget {
    pub shot: f64,
    pub classical: f64,
    pub electronic: f64,
}

impl OpticalNoiseBudget {
    pub fn shot_only() -> Self {
        OpticalNoiseBudget {
            shot: crate::pulse::SHOT_VARIANCE,
            classical: 0.0,
            electronic: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.shot + self.classical + self.electronic
    }
}

/// Mechanical variance after noise subtraction, in `X_M` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSubtraction {
    /// `(sigma_PL^2 - budget) / chi^2`, clamped at zero when negative.
    pub variance_xm: f64,
    /// Set when the subtraction went negative; the value is then an upper
    /// bound of zero, reported rather than silently clipped.
    pub flagged: bool,
}

/// Subtracts the optical noise budget from an outcome variance and converts
/// to mechanical units: `(sigma_PL^2 - shot - v_cl - v_el) / chi^2`.
pub fn subtract_optical_noise(
    sigma_pl_sq: f64,
    budget: &OpticalNoiseBudget,
    chi: f64,
) -> NoiseSubtraction {
    let residual = sigma_pl_sq - budget.total();
    if residual < 0.0 {
        NoiseSubtraction {
            variance_xm: 0.0,
            flagged: true,
        }
    } else {
        NoiseSubtraction {
            variance_xm: residual / (chi * chi),
            flagged: false,
        }
    }
}

/// Per-angle marginals in `X_M` units, plus the calibration needed to map
/// back to meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalSet {
    /// Phase-space angles (rad).
    pub angles: Vec<f64>,
    /// One histogram per angle, bin edges in `X_M` units.
    pub histograms: Vec<Histogram>,
    /// Meters per unit `X_M` (`sqrt(2) x0`).
    pub scale: f64,
    /// Measurement strength of the read-out pulse.
    pub chi_used: f64,
}

impl MarginalSet {
    pub fn validate(&self) -> Result<()> {
        if self.angles.len() != self.histograms.len() {
            return Err(Error::InvalidParameter(
                "angle and histogram counts differ".into(),
            ));
        }
        for h in &self.histograms {
            if h.edges.len() != h.counts.len() + 1 {
                return Err(Error::InvalidParameter("inconsistent histogram".into()));
            }
            if h.edges.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidParameter("bin edges must increase".into()));
            }
            if h.counts.iter().any(|&c| c < 0.0) {
                return Err(Error::InvalidParameter("negative counts".into()));
            }
        }
        Ok(())
    }
}

/// Mirrors marginals measured on `[0, pi/2]` to the full circle using the
/// symmetry of the studied states about both quadrature axes:
/// `p(x, pi - t) = p(-x, t)`, `p(x, pi + t) = p(-x, t)`,
/// `p(x, 2 pi - t) = p(x, t)`. Duplicate angles (endpoints at 0 and pi/2)
/// are emitted once; each input marginal must itself be symmetric within
/// [`ASYMMETRY_TOLERANCE`].
pub fn symmetrize(set: &MarginalSet) -> Result<MarginalSet> {
    set.validate()?;
    let half_pi = std::f64::consts::FRAC_PI_2;
    for (&theta, h) in set.angles.iter().zip(&set.histograms) {
        if !(-1e-9..=half_pi + 1e-9).contains(&theta) {
            return Err(Error::Precondition(format!(
                "input angles must lie in [0, pi/2], got {theta}"
            )));
        }
        let (mean, var) = h.moments();
        let skew = mean.abs() / var.sqrt().max(1e-300);
        if skew > ASYMMETRY_TOLERANCE {
            return Err(Error::ModelMismatch(format!(
                "marginal at {theta:.4} rad violates axis symmetry: |mean|/sigma = {skew:.3}"
            )));
        }
    }

    let two_pi = std::f64::consts::TAU;
    let mut angles: Vec<f64> = Vec::new();
    let mut histograms: Vec<Histogram> = Vec::new();
    let push = |theta: f64, h: Histogram, angles: &mut Vec<f64>, hists: &mut Vec<Histogram>| {
        let theta = theta.rem_euclid(two_pi);
        if angles.iter().all(|&a| {
            let d = (a - theta).abs();
            d > 1e-9 && (two_pi - d) > 1e-9
        }) {
            angles.push(theta);
            hists.push(h);
        }
    };
    for (&theta, h) in set.angles.iter().zip(&set.histograms) {
        push(theta, h.clone(), &mut angles, &mut histograms);
        push(
            std::f64::consts::PI - theta,
            h.reflected(),
            &mut angles,
            &mut histograms,
        );
        push(
            std::f64::consts::PI + theta,
            h.reflected(),
            &mut angles,
            &mut histograms,
        );
        push(two_pi - theta, h.clone(), &mut angles, &mut histograms);
    }
    Ok(MarginalSet {
        angles,
        histograms,
        scale: set.scale,
        chi_used: set.chi_used,
    })
}

/// Reconstruction options for [`inverse_radon`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReconOptions {
    /// Raised-cosine apodization strength in `[0, 1]`; 0 is a bare ramp.
    pub apodization: f64,
    /// Half-width of the square grid in `X_M` units; derived from the
    /// marginal support when absent.
    pub extent: Option<f64>,
}

impl Default for ReconOptions {
    fn default() -> Self {
        ReconOptions {
            apodization: 0.5,
            extent: None,
        }
    }
}

/// Reconstructed phase-space distribution on a square grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseSpaceMap {
    /// Row-major values, `grid_size` x `grid_size`; row index moves `P_M`.
    pub values: Vec<f64>,
    pub grid_size: usize,
    /// Symmetric bounds: both axes span `[-extent, extent]`.
    pub extent: f64,
    /// Total mass (sum times cell area) before normalization to one.
    pub raw_mass: f64,
    /// Most negative cell value after normalization; filter artifacts only.
    pub min_value: f64,
    /// Fraction of total absolute mass carried by negative cells.
    pub negative_fraction: f64,
}

impl PhaseSpaceMap {
    pub fn cell(&self) -> f64 {
        2.0 * self.extent / self.grid_size as f64
    }

    pub fn axis(&self) -> Vec<f64> {
        let cell = self.cell();
        (0..self.grid_size)
            .map(|i| -self.extent + (i as f64 + 0.5) * cell)
            .collect()
    }

    pub fn value(&self, ix: usize, ip: usize) -> f64 {
        self.values[ip * self.grid_size + ix]
    }

    /// Sum times cell area; 1 after normalization.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell() * self.cell()
    }
}

/// Filtered back-projection over the symmetrized marginal set.
///
/// Projections are ramp-filtered (discrete band-limited kernel evaluated via
/// FFT) with a raised-cosine apodization of the requested strength, then
/// back-projected with linear interpolation and a fixed summation order. The
/// output grid is normalized to unit mass; the pre-normalization mass is kept
/// in `raw_mass`.
pub fn inverse_radon(
    set: &MarginalSet,
    grid_size: usize,
    opts: &ReconOptions,
) -> Result<PhaseSpaceMap> {
    set.validate()?;
    let mut distinct: Vec<f64> = Vec::new();
    for &a in &set.angles {
        if distinct.iter().all(|&b| (a - b).abs() > 1e-9) {
            distinct.push(a);
        }
    }
    if distinct.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "reconstruction needs at least 5 distinct angles, got {}",
            distinct.len()
        )));
    }
    if grid_size < 8 {
        return Err(Error::InvalidParameter("grid too small".into()));
    }
    if !(0.0..=1.0).contains(&opts.apodization) {
        return Err(Error::InvalidParameter("apodization must be in [0, 1]".into()));
    }

    let extent = match opts.extent {
        Some(e) if e > 0.0 => e,
        Some(e) => return Err(Error::InvalidParameter(format!("extent = {e}"))),
        None => set
            .histograms
            .iter()
            .flat_map(|h| [h.edges[0].abs(), h.edges[h.edges.len() - 1].abs()])
            .fold(0.0f64, f64::max),
    };

    // Filter each projection once.
    let mut planner = FftPlanner::new();
    let filtered: Vec<(Vec<f64>, Vec<f64>)> = set
        .histograms
        .iter()
        .map(|h| {
            let centers = h.centers();
            let density = h.density();
            let q = ramp_filter(&density, h.bin_width(), opts.apodization, &mut planner);
            (centers, q)
        })
        .collect();

    let n = grid_size;
    let cell = 2.0 * extent / n as f64;
    let mut values = vec![0.0; n * n];
    let weight = std::f64::consts::PI / set.angles.len() as f64;
    // Fixed angle-major accumulation order keeps the result independent of
    // any parallel scheduling upstream.
    for (k, &theta) in set.angles.iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let (centers, q) = &filtered[k];
        let s0 = centers[0];
        let ds = centers[1] - centers[0];
        let m = centers.len();
        for ip in 0..n {
            let p = -extent + (ip as f64 + 0.5) * cell;
            for ix in 0..n {
                let x = -extent + (ix as f64 + 0.5) * cell;
                let proj = x * c + p * s;
                let u = (proj - s0) / ds;
                if u >= 0.0 && u <= (m - 1) as f64 {
                    let i0 = (u as usize).min(m - 2);
                    let frac = u - i0 as f64;
                    values[ip * n + ix] += weight * ((1.0 - frac) * q[i0] + frac * q[i0 + 1]);
                }
            }
        }
    }

    // The projections only determine the map inside the inscribed circle;
    // corner cells collect filter-tail junk and are zeroed.
    for ip in 0..n {
        let p = -extent + (ip as f64 + 0.5) * cell;
        for ix in 0..n {
            let x = -extent + (ix as f64 + 0.5) * cell;
            if x * x + p * p > extent * extent {
                values[ip * n + ix] = 0.0;
            }
        }
    }

    let raw_mass = values.iter().sum::<f64>() * cell * cell;
    if !(raw_mass.is_finite() && raw_mass > 0.0) {
        return Err(Error::Degenerate(format!(
            "reconstruction mass = {raw_mass}"
        )));
    }
    for v in &mut values {
        *v /= raw_mass;
    }
    let min_value = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let abs_mass: f64 = values.iter().map(|v| v.abs()).sum();
    let neg_mass: f64 = values.iter().filter(|v| **v < 0.0).map(|v| -*v).sum();
    Ok(PhaseSpaceMap {
        values,
        grid_size: n,
        extent,
        raw_mass,
        min_value,
        negative_fraction: if abs_mass > 0.0 { neg_mass / abs_mass } else { 0.0 },
    })
}

/// Discrete ramp filtering of one sampled projection.
fn ramp_filter(
    density: &[f64],
    ds: f64,
    apodization: f64,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let n = density.len();
    let m = (2 * n).next_power_of_two();

    // Band-limited ramp kernel sampled in the spatial domain; its DFT keeps
    // the small positive DC response that preserves total mass.
    let mut kernel = vec![Complex::new(0.0, 0.0); m];
    kernel[0] = Complex::new(1.0 / (4.0 * ds * ds), 0.0);
    for k in (1..=m / 2).step_by(2) {
        let v = -1.0 / (std::f64::consts::PI * k as f64 * ds).powi(2);
        kernel[k] = Complex::new(v, 0.0);
        kernel[m - k] = Complex::new(v, 0.0);
    }
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut kernel);

    let mut spectrum: Vec<Complex<f64>> = density
        .iter()
        .map(|&d| Complex::new(d, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    fft.process(&mut spectrum);

    for k in 0..m {
        let u = if k <= m / 2 {
            k as f64 / (m / 2) as f64
        } else {
            (m - k) as f64 / (m / 2) as f64
        };
        let window = (1.0 - apodization) + apodization * 0.5 * (1.0 + (std::f64::consts::PI * u).cos());
        spectrum[k] *= kernel[k].re * window;
    }

    let ifft = planner.plan_fft_inverse(m);
    ifft.process(&mut spectrum);
    // rustfft leaves the inverse unnormalized; fold in the convolution step.
    spectrum[..n].iter().map(|c| c.re * ds / m as f64).collect()
}

/// Numerical Radon projection of `map` onto the direction `theta`, deposited
/// on the bins given by `edges` (returns a probability density per bin).
pub fn forward_radon(map: &PhaseSpaceMap, theta: f64, edges: &[f64]) -> Vec<f64> {
    let bins = edges.len() - 1;
    let ds = (edges[bins] - edges[0]) / bins as f64;
    let (s, c) = theta.sin_cos();
    let n = map.grid_size;
    let cell = map.cell();
    let mut out = vec![0.0; bins];
    for ip in 0..n {
        let p = -map.extent + (ip as f64 + 0.5) * cell;
        for ix in 0..n {
            let x = -map.extent + (ix as f64 + 0.5) * cell;
            let proj = x * c + p * s;
            let mass = map.value(ix, ip) * cell * cell;
            // Linear split between the two nearest bin centers.
            let u = (proj - edges[0]) / ds - 0.5;
            let i0 = u.floor();
            let frac = u - i0;
            let i0 = i0 as isize;
            if (0..bins as isize).contains(&i0) {
                out[i0 as usize] += mass * (1.0 - frac);
            }
            if (0..bins as isize).contains(&(i0 + 1)) {
                out[(i0 + 1) as usize] += mass * frac;
            }
        }
    }
    for v in &mut out {
        *v /= ds;
    }
    out
}

/// Variance of the map's marginal along direction `theta`, from the forward
/// projection over the map's support.
pub fn map_marginal_variance(map: &PhaseSpaceMap, theta: f64) -> f64 {
    let bins = 4 * map.grid_size;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| -map.extent + 2.0 * map.extent * i as f64 / bins as f64)
        .collect();
    let density = forward_radon(map, theta, &edges);
    let ds = edges[1] - edges[0];
    let mass: f64 = density.iter().sum::<f64>() * ds;
    let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mean: f64 = centers
        .iter()
        .zip(&density)
        .map(|(x, d)| x * d)
        .sum::<f64>()
        * ds
        / mass;
    centers
        .iter()
        .zip(&density)
        .map(|(x, d)| d * (x - mean) * (x - mean))
        .sum::<f64>()
        * ds
        / mass
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, StreamDomain};
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn gaussian_marginals(sigma: f64, angles: &[f64], bins: usize, extent: f64) -> MarginalSet {
        // Analytic isotropic-Gaussian projections, expressed as counts.
        let histograms = angles
            .iter()
            .map(|_| {
                let edges: Vec<f64> = (0..=bins)
                    .map(|i| -extent + 2.0 * extent * i as f64 / bins as f64)
                    .collect();
                let counts: Vec<f64> = (0..bins)
                    .map(|i| {
                        let x = 0.5 * (edges[i] + edges[i + 1]);
                        1e6 * (-x * x / (2.0 * sigma * sigma)).exp()
                    })
                    .collect();
                Histogram { edges, counts }
            })
            .collect();
        MarginalSet {
            angles: angles.to_vec(),
            histograms,
            scale: 1.0,
            chi_used: 1.0,
        }
    }

    #[test]
    fn histogram_conserves_counts() {
        let mut rng = stream_rng(3, StreamDomain::Synthetic, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let values: Vec<f64> = (0..300).map(|_| normal.sample(&mut rng)).collect();
        let h = histogram_outcomes(&values, 20).unwrap();
        assert_eq!(h.total(), 300.0);
        assert_eq!(h.counts.len(), 20);
    }

    #[test]
    fn histogram_fit_recovers_parameters() {
        let mut rng = stream_rng(4, StreamDomain::Synthetic, 0);
        let normal = Normal::new(1.5, 2.0).unwrap();
        let values: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let h = histogram_outcomes(&values, 60).unwrap();
        let fit = gaussian_fit(&h).unwrap();
        // Within three standard errors of the sampling distribution.
        let se_mean = 2.0 / (100_000f64).sqrt();
        let se_sigma = 2.0 / (2.0 * 100_000f64).sqrt();
        assert!((fit.mean - 1.5).abs() < 3.0 * se_mean, "mean = {}", fit.mean);
        assert!((fit.sigma - 2.0).abs() < 4.0 * se_sigma, "sigma = {}", fit.sigma);
    }

    #[test]
    fn histogram_rejects_degenerate_data() {
        let values = vec![2.0; 50];
        assert!(matches!(
            histogram_outcomes(&values, 10),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn fit_uncertainty_tracks_sample_size() {
        let mut rng = stream_rng(5, StreamDomain::Synthetic, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let values: Vec<f64> = (0..300).map(|_| normal.sample(&mut rng)).collect();
        let h = histogram_outcomes(&values, 18).unwrap();
        let fit = gaussian_fit(&h).unwrap();
        // sigma / sqrt(2 n) ~ 4 % for n = 300; allow a factor of two.
        let expected = fit.sigma / (2.0 * 300.0f64).sqrt();
        assert!(
            fit.sigma_error > 0.4 * expected && fit.sigma_error < 2.5 * expected,
            "sigma_error = {}, expected ~{expected}",
            fit.sigma_error
        );
    }

    #[test]
    fn bimodal_marginal_detected() {
        let mut rng = stream_rng(6, StreamDomain::Synthetic, 0);
        let a = Normal::new(-4.0, 0.7).unwrap();
        let b = Normal::new(4.0, 0.7).unwrap();
        let values: Vec<f64> = (0..20_000)
            .map(|i| {
                if i % 2 == 0 {
                    a.sample(&mut rng)
                } else {
                    b.sample(&mut rng)
                }
            })
            .collect();
        let h = histogram_outcomes(&values, 40).unwrap();
        assert_eq!(h.local_maxima().len(), 2);
        assert!(gaussian_fit(&h).is_err());
    }

    #[test]
    fn subtraction_cases() {
        let shot = OpticalNoiseBudget::shot_only();
        let r = subtract_optical_noise(0.5, &shot, 1.0);
        assert_eq!(r.variance_xm, 0.0);
        assert!(!r.flagged);

        let r = subtract_optical_noise(1.0, &shot, 1.0);
        assert_relative_eq!(r.variance_xm, 0.5);

        let r = subtract_optical_noise(0.3, &shot, 1.0);
        assert!(r.flagged);
        assert_eq!(r.variance_xm, 0.0);
    }

    #[test]
    fn symmetrize_mirrors_and_dedupes() {
        let angles: Vec<f64> = (0..9)
            .map(|i| std::f64::consts::FRAC_PI_2 * i as f64 / 8.0)
            .collect();
        let set = gaussian_marginals(1.0, &angles, 32, 6.0);
        let full = symmetrize(&set).unwrap();
        // 9 angles including both endpoints: 0 -> {0, pi}, pi/2 -> {pi/2,
        // 3pi/2}, interior 7 angles -> 4 images each.
        assert_eq!(full.angles.len(), 32);
        for h in &full.histograms {
            assert_eq!(h.total(), set.histograms[0].total());
        }

        // Interior-only input keeps all four images per angle.
        let inner: Vec<f64> = (1..=9).map(|i| 0.0872665 + 0.15 * i as f64 / 9.0).collect();
        let set = gaussian_marginals(1.0, &inner, 32, 6.0);
        assert_eq!(symmetrize(&set).unwrap().angles.len(), 36);
    }

    #[test]
    fn symmetrize_flags_asymmetric_input() {
        let angles = [0.0, 0.3, 0.6];
        let mut set = gaussian_marginals(1.0, &angles, 32, 6.0);
        // Shift one marginal well off zero.
        let h = &mut set.histograms[1];
        for e in &mut h.edges {
            *e += 1.5;
        }
        let err = symmetrize(&set).unwrap_err();
        assert!(matches!(err, Error::ModelMismatch(_)), "{err:?}");
    }

    #[test]
    fn isotropic_gaussian_reconstruction() {
        let angles: Vec<f64> = (0..9)
            .map(|i| std::f64::consts::FRAC_PI_2 * i as f64 / 8.0)
            .collect();
        let sigma = 1.3;
        let set = symmetrize(&gaussian_marginals(sigma, &angles, 64, 8.0)).unwrap();
        let map = inverse_radon(&set, 128, &ReconOptions::default()).unwrap();

        assert_relative_eq!(map.mass(), 1.0, max_relative = 1e-9);
        assert!((map.raw_mass - 1.0).abs() < 0.05, "raw mass {}", map.raw_mass);

        // Compare against the analytic bivariate normal.
        let axis = map.axis();
        let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
        let mut err2 = 0.0;
        let mut peak: f64 = 0.0;
        for (ip, &p) in axis.iter().enumerate() {
            for (ix, &x) in axis.iter().enumerate() {
                let truth = norm * (-(x * x + p * p) / (2.0 * sigma * sigma)).exp();
                peak = peak.max(truth);
                let d = map.value(ix, ip) - truth;
                err2 += d * d;
            }
        }
        let rms = (err2 / (axis.len() * axis.len()) as f64).sqrt();
        assert!(rms < 0.03 * peak, "rms {rms}, peak {peak}");

        // Rotational invariance of the reconstruction.
        let v0 = map_marginal_variance(&map, 0.0);
        let v45 = map_marginal_variance(&map, std::f64::consts::FRAC_PI_4);
        assert!((v0 - v45).abs() / v0 < 0.02);
        assert!((v0 - sigma * sigma).abs() / (sigma * sigma) < 0.05);
    }

    #[test]
    fn displaced_gaussian_lands_at_rotated_position() {
        // Marginal of a Gaussian displaced to (x0, p0): mean projects as
        // x0 cos(theta) + p0 sin(theta).
        let (x0, p0, sigma) = (2.0, 0.0, 0.8);
        let bins = 64;
        let extent = 6.0;
        let angles: Vec<f64> = (0..12).map(|i| std::f64::consts::TAU * i as f64 / 12.0).collect();
        let histograms: Vec<Histogram> = angles
            .iter()
            .map(|&t| {
                let mu = x0 * t.cos() + p0 * t.sin();
                let edges: Vec<f64> = (0..=bins)
                    .map(|i| -extent + 2.0 * extent * i as f64 / bins as f64)
                    .collect();
                let counts: Vec<f64> = (0..bins)
                    .map(|i| {
                        let x = 0.5 * (edges[i] + edges[i + 1]);
                        1e6 * (-(x - mu) * (x - mu) / (2.0 * sigma * sigma)).exp()
                    })
                    .collect();
                Histogram { edges, counts }
            })
            .collect();
        let set = MarginalSet {
            angles,
            histograms,
            scale: 1.0,
            chi_used: 1.0,
        };
        let map = inverse_radon(&set, 96, &ReconOptions::default()).unwrap();
        let axis = map.axis();
        let mut best = (0usize, 0usize, f64::MIN);
        for ip in 0..map.grid_size {
            for ix in 0..map.grid_size {
                if map.value(ix, ip) > best.2 {
                    best = (ix, ip, map.value(ix, ip));
                }
            }
        }
        assert!((axis[best.0] - x0).abs() < map.cell());
        assert!((axis[best.1] - p0).abs() < map.cell());
    }

    #[test]
    fn too_few_angles_faults() {
        let set = gaussian_marginals(1.0, &[0.0, 0.4, 0.8, 1.2], 32, 5.0);
        assert!(matches!(
            inverse_radon(&set, 64, &ReconOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn forward_projection_consistency() {
        let angles: Vec<f64> = (0..10)
            .map(|i| std::f64::consts::FRAC_PI_2 * (i as f64 + 0.5) / 10.0)
            .collect();
        let sigma = 1.1;
        let set = symmetrize(&gaussian_marginals(sigma, &angles, 64, 7.0)).unwrap();
        let map = inverse_radon(&set, 128, &ReconOptions::default()).unwrap();
        let h0 = &set.histograms[0];
        let proj = forward_radon(&map, set.angles[0], &h0.edges);
        let input = h0.density();
        let l2_num: f64 = proj
            .iter()
            .zip(&input)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let l2_den: f64 = input.iter().map(|b| b * b).sum();
        assert!(
            (l2_num / l2_den).sqrt() < 0.05,
            "relative L2 {}",
            (l2_num / l2_den).sqrt()
        );
    }
}
