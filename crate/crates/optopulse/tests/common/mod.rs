//! Shared test oracles, independent of the library's sampling and
//! conditioning paths.
//!
//! The joint-Gaussian oracle propagates the full covariance of
//! `(X, P, outcomes...)` through pulses, rotations, and damping by plain
//! linear-Gaussian algebra; transformed-outcome variances are read off as
//! quadratic forms. The grid oracle evaluates the Bayesian conditional
//! update by brute-force numeric integration on a 2-D grid.

#![allow(dead_code)]

/// Joint covariance of the mechanical quadratures and every recorded pulse
/// outcome. Index 0 is `X`, index 1 is `P`; outcomes follow in order.
pub struct JointOracle {
    cov: Vec<Vec<f64>>,
}

impl JointOracle {
    pub fn isotropic(variance: f64) -> Self {
        JointOracle {
            cov: vec![vec![variance, 0.0], vec![0.0, variance]],
        }
    }

    fn dim(&self) -> usize {
        self.cov.len()
    }

    /// Harmonic rotation by `theta` followed by damping over `gamma_dt`
    /// toward an isotropic bath of variance `bath_var`.
    pub fn evolve_retherm(&mut self, theta: f64, gamma_dt: f64, bath_var: f64) {
        let n = self.dim();
        let (s, c) = theta.sin_cos();
        // Rotate the mechanical block and its cross-covariances.
        for j in 0..n {
            let x = self.cov[0][j];
            let p = self.cov[1][j];
            self.cov[0][j] = c * x + s * p;
            self.cov[1][j] = -s * x + c * p;
        }
        for i in 0..n {
            let x = self.cov[i][0];
            let p = self.cov[i][1];
            self.cov[i][0] = c * x + s * p;
            self.cov[i][1] = -s * x + c * p;
        }
        // Damping: mechanical variances decay at gamma, cross terms at
        // gamma / 2, and the bath injects isotropic noise.
        let decay = (-gamma_dt).exp();
        let half = decay.sqrt();
        for i in 0..n {
            for j in 0..n {
                let mech_i = i < 2;
                let mech_j = j < 2;
                if mech_i && mech_j {
                    self.cov[i][j] *= decay;
                } else if mech_i || mech_j {
                    self.cov[i][j] *= half;
                }
            }
        }
        let blend = (1.0 - decay) * bath_var;
        self.cov[0][0] += blend;
        self.cov[1][1] += blend;
    }

    /// Records a pulse outcome `o = chi X + noise` (noise variance includes
    /// shot and electronic contributions) and applies the momentum
    /// back-action `P += chi * b` with `Var(b) = 1/2`. Returns the outcome
    /// index for later quadratic forms.
    pub fn pulse(&mut self, chi: f64, outcome_noise_var: f64) -> usize {
        let n = self.dim();
        let mut row: Vec<f64> = (0..n).map(|j| chi * self.cov[0][j]).collect();
        let var = chi * chi * self.cov[0][0] + outcome_noise_var;
        for (j, r) in row.iter().enumerate() {
            self.cov[j].push(*r);
        }
        row.push(var);
        self.cov.push(row);
        // Back-action on P, uncorrelated with everything recorded so far.
        self.cov[1][1] += chi * chi * 0.5;
        n
    }

    /// Adds a stationary correlated classical offset to each listed outcome:
    /// `Cov(o_i, o_j) += sqrt(v_i v_j) exp(-|t_i - t_j| / tau)`.
    pub fn add_classical_offsets(&mut self, outcomes: &[(usize, f64, f64)], tau: f64) {
        for &(i, v_i, t_i) in outcomes {
            for &(j, v_j, t_j) in outcomes {
                self.cov[i][j] += (v_i * v_j).sqrt() * (-(t_i - t_j).abs() / tau).exp();
            }
        }
    }

    /// Variance of a linear combination of tracked components.
    pub fn combination_variance(&self, coeffs: &[(usize, f64)]) -> f64 {
        let mut var = 0.0;
        for &(i, a) in coeffs {
            for &(j, b) in coeffs {
                var += a * b * self.cov[i][j];
            }
        }
        var
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.cov[i][i]
    }
}

/// Expected transformed-outcome variance for the standard protocols, from
/// the joint oracle: `preps` in {0, 1, 2}, quarter-period two-pulse spacing,
/// read-out after `theta`.
pub struct ProtocolOracleSpec {
    pub preps: usize,
    pub theta: f64,
    pub chi: f64,
    pub initial_variance: f64,
    pub gamma: f64,
    pub omega_m: f64,
    pub bath_variance: f64,
    pub electronic_variance: f64,
    /// Per-pulse classical offset variance and the correlation time.
    pub classical_variance: f64,
    pub classical_corr_time: f64,
}

pub fn transformed_variance_oracle(s: &ProtocolOracleSpec) -> f64 {
    let mut oracle = JointOracle::isotropic(s.initial_variance);
    let noise_var = 0.5 + s.electronic_variance;
    let mut outcome_meta: Vec<(usize, f64, f64)> = Vec::new();
    let mut time = 0.0;
    let mut indices = Vec::new();
    for k in 0..s.preps {
        if s.preps == 2 && k == 1 {
            let dt = std::f64::consts::FRAC_PI_2 / s.omega_m;
            oracle.evolve_retherm(std::f64::consts::FRAC_PI_2, s.gamma * dt, s.bath_variance);
            time += dt;
        }
        let idx = oracle.pulse(s.chi, noise_var);
        outcome_meta.push((idx, s.classical_variance, time));
        indices.push(idx);
    }
    let dt = s.theta / s.omega_m;
    oracle.evolve_retherm(s.theta, s.gamma * dt, s.bath_variance);
    time += dt;
    let idx_r = oracle.pulse(s.chi, noise_var);
    outcome_meta.push((idx_r, s.classical_variance, time));
    oracle.add_classical_offsets(&outcome_meta, s.classical_corr_time);

    let coeffs: Vec<(usize, f64)> = match s.preps {
        0 => vec![(idx_r, 1.0)],
        1 => vec![(idx_r, 1.0), (indices[0], -s.theta.cos())],
        2 => vec![
            (idx_r, 1.0),
            (indices[1], -s.theta.cos()),
            (indices[0], s.theta.sin()),
        ],
        _ => unreachable!(),
    };
    oracle.combination_variance(&coeffs)
}

/// Brute-force 2-D grid evaluation of the Gaussian conditional update with
/// likelihood `o | X ~ Normal(chi X, shot)`. Returns posterior means and the
/// posterior covariance `(xx, xp, pp)` before any momentum kick.
///
/// Two passes: a coarse grid over the prior support locates the posterior
/// mass, then a fine grid spanning that region delivers the moments. This
/// keeps the oracle accurate even when conditioning shrinks the posterior by
/// orders of magnitude.
pub fn grid_bayes_posterior(
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    chi: f64,
    shot: f64,
    outcome: f64,
    n: usize,
) -> ([f64; 2], [f64; 3]) {
    let sx = cov[0][0].sqrt();
    let sp = cov[1][1].sqrt();
    let coarse = grid_pass(
        mean,
        cov,
        chi,
        shot,
        outcome,
        [mean[0] - 8.5 * sx, mean[0] + 8.5 * sx],
        [mean[1] - 8.5 * sp, mean[1] + 8.5 * sp],
        (n / 2).max(301),
    );
    let (cm, cv) = coarse;
    let fx = cv[0].sqrt();
    let fp = cv[2].sqrt();
    grid_pass(
        mean,
        cov,
        chi,
        shot,
        outcome,
        [cm[0] - 9.0 * fx, cm[0] + 9.0 * fx],
        [cm[1] - 9.0 * fp, cm[1] + 9.0 * fp],
        n,
    )
}

#[allow(clippy::too_many_arguments)]
fn grid_pass(
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    chi: f64,
    shot: f64,
    outcome: f64,
    x_range: [f64; 2],
    p_range: [f64; 2],
    n: usize,
) -> ([f64; 2], [f64; 3]) {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[0][1];
    let inv = [
        [cov[1][1] / det, -cov[0][1] / det],
        [-cov[0][1] / det, cov[0][0] / det],
    ];
    let dx = (x_range[1] - x_range[0]) / n as f64;
    let dp = (p_range[1] - p_range[0]) / n as f64;

    // Log-weights on cell centers, normalized by their maximum.
    let mut logs = vec![0.0f64; n * n];
    let mut max_log = f64::NEG_INFINITY;
    for ip in 0..n {
        let p = p_range[0] + (ip as f64 + 0.5) * dp;
        let dpv = p - mean[1];
        for ix in 0..n {
            let x = x_range[0] + (ix as f64 + 0.5) * dx;
            let dxv = x - mean[0];
            let prior = -0.5
                * (inv[0][0] * dxv * dxv + 2.0 * inv[0][1] * dxv * dpv + inv[1][1] * dpv * dpv);
            let resid = outcome - chi * x;
            let l = prior - resid * resid / (2.0 * shot);
            logs[ip * n + ix] = l;
            if l > max_log {
                max_log = l;
            }
        }
    }
    let weights: Vec<f64> = logs.iter().map(|l| (l - max_log).exp()).collect();

    let mut mass = 0.0;
    let mut mx = 0.0;
    let mut mp = 0.0;
    for ip in 0..n {
        let p = p_range[0] + (ip as f64 + 0.5) * dp;
        for ix in 0..n {
            let x = x_range[0] + (ix as f64 + 0.5) * dx;
            let w = weights[ip * n + ix];
            mass += w;
            mx += w * x;
            mp += w * p;
        }
    }
    mx /= mass;
    mp /= mass;
    let mut vxx = 0.0;
    let mut vxp = 0.0;
    let mut vpp = 0.0;
    for ip in 0..n {
        let p = p_range[0] + (ip as f64 + 0.5) * dp;
        for ix in 0..n {
            let x = x_range[0] + (ix as f64 + 0.5) * dx;
            let w = weights[ip * n + ix];
            vxx += w * (x - mx) * (x - mx);
            vxp += w * (x - mx) * (p - mp);
            vpp += w * (p - mp) * (p - mp);
        }
    }
    ([mx, mp], [vxx / mass, vxp / mass, vpp / mass])
}

/// Independent trapezoidal quadrature of a cantilever deflection shape on a
/// refined grid: returns `(rho * integral w^2 dV, beam overlap D)`.
pub fn refined_cantilever_quadrature(
    geom: &optopulse::modal::CantileverGeometry,
    beam_r0: f64,
    beam_center: [f64; 2],
    nx: usize,
    ny: usize,
    nz: usize,
) -> (f64, f64) {
    let x_max = match geom.head {
        optopulse::modal::HeadShape::Disk { diameter } => geom.arm_length + diameter,
        optopulse::modal::HeadShape::Pad { length, .. } => geom.arm_length + length,
    };
    let y_half = match geom.head {
        optopulse::modal::HeadShape::Disk { diameter } => diameter / 2.0,
        optopulse::modal::HeadShape::Pad { width, .. } => width / 2.0,
    };
    let dx = x_max / (nx - 1) as f64;
    let dy = 2.0 * y_half / (ny - 1) as f64;
    let dz = geom.thickness / (nz - 1) as f64;
    let wt = |i: usize, n: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };

    let mut w2 = 0.0;
    let mut overlap = 0.0;
    let mut gauss_mass = 0.0;
    let two_r0_sq = 2.0 * beam_r0 * beam_r0;
    for j in 0..ny {
        let y = -y_half + j as f64 * dy;
        let wy = wt(j, ny);
        for i in 0..nx {
            let x = i as f64 * dx;
            let wx = wt(i, nx);
            let w = geom.displacement(x, y);
            w2 += wx * wy * w * w;
            let g = (-((x - beam_center[0]).powi(2) + (y - beam_center[1]).powi(2)) / two_r0_sq)
                .exp();
            overlap += wx * wy * g * w;
            gauss_mass += wx * wy * g;
        }
    }
    // Shape uniform through the thickness; the z integral contributes the
    // exact thickness factor.
    let z_weight: f64 = (0..nz).map(|k| wt(k, nz)).sum::<f64>() * dz;
    let volume_integral = geom.density * w2 * dx * dy * z_weight;
    (volume_integral, overlap / gauss_mass)
}
