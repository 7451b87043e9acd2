//! Small-scale statistics: sample moments, weighted polynomial least
//! squares, and a Levenberg-Marquardt Gaussian profile fit.

use crate::error::{Error, Result};

/// Sample mean and unbiased variance.
pub fn mean_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, ss / (n - 1) as f64)
}

/// Solves a small dense symmetric system in place (Gaussian elimination with
/// partial pivoting). Sized for the 2-4 parameter fits used here.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot_row][col].abs() < 1e-300 {
            return Err(Error::Degenerate("singular design matrix".into()));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in (row + 1)..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Ok(x)
}

/// Inverse of a small dense matrix via column-by-column solves.
fn invert_dense(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv = vec![vec![0.0; n]; n];
    for col in 0..n {
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let x = solve_dense(&mut m, &mut e)?;
        for row in 0..n {
            inv[row][col] = x[row];
        }
    }
    Ok(inv)
}

/// Weighted polynomial fit `y = c0 + c1 x + ... + c_d x^d`.
#[derive(Debug, Clone)]
pub struct PolyFit {
    /// Coefficients in ascending power order, in the original `x` units.
    pub coeffs: Vec<f64>,
    /// One-standard-deviation coefficient uncertainties.
    pub coeff_errors: Vec<f64>,
    /// Weighted coefficient of determination.
    pub r_squared: f64,
    /// Weighted residual sum of squares.
    pub chi_squared: f64,
}

/// Weighted least squares with per-point standard deviations `sigma`
/// (weights `1/sigma^2`). The abscissa is internally centered and scaled
/// before solving; coefficients are reported in original units.
pub fn polyfit_weighted(x: &[f64], y: &[f64], sigma: &[f64], degree: usize) -> Result<PolyFit> {
    let n = x.len();
    if n != y.len() || n != sigma.len() {
        return Err(Error::InvalidParameter("mismatched fit input lengths".into()));
    }
    if n < degree + 2 {
        return Err(Error::InsufficientData(format!(
            "need at least {} points for degree {degree}, got {n}",
            degree + 2
        )));
    }
    if sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter("sigmas must be positive".into()));
    }

    let x_mean = x.iter().sum::<f64>() / n as f64;
    let x_scale = x
        .iter()
        .map(|v| (v - x_mean).abs())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let u: Vec<f64> = x.iter().map(|v| (v - x_mean) / x_scale).collect();

    let p = degree + 1;
    let mut ata = vec![vec![0.0; p]; p];
    let mut atb = vec![0.0; p];
    for i in 0..n {
        let w = 1.0 / (sigma[i] * sigma[i]);
        let mut pow = vec![1.0; p];
        for k in 1..p {
            pow[k] = pow[k - 1] * u[i];
        }
        for r in 0..p {
            atb[r] += w * pow[r] * y[i];
            for c in 0..p {
                ata[r][c] += w * pow[r] * pow[c];
            }
        }
    }

    let cov_u = invert_dense(&ata)?;
    let mut ata_solve = ata.clone();
    let mut rhs = atb.clone();
    let coeffs_u = solve_dense(&mut ata_solve, &mut rhs)?;

    // Weighted residuals and R^2 against the weighted mean.
    let mut ss_res = 0.0;
    let mut sw = 0.0;
    let mut swy = 0.0;
    for i in 0..n {
        let w = 1.0 / (sigma[i] * sigma[i]);
        let mut fit = 0.0;
        let mut pw = 1.0;
        for c in coeffs_u.iter() {
            fit += c * pw;
            pw *= u[i];
        }
        ss_res += w * (y[i] - fit) * (y[i] - fit);
        sw += w;
        swy += w * y[i];
    }
    let y_wmean = swy / sw;
    let ss_tot: f64 = (0..n)
        .map(|i| (y[i] - y_wmean).powi(2) / (sigma[i] * sigma[i]))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    // Map coefficients and covariance back to original x units:
    // y = sum_k c_u[k] ((x - x_mean)/s)^k  =>  binomial expansion.
    let mut transform = vec![vec![0.0; p]; p]; // coeffs_x = T * coeffs_u
    for k in 0..p {
        // ((x - m)/s)^k = s^-k sum_j binom(k,j) x^j (-m)^(k-j)
        for j in 0..=k {
            let binom = binomial(k, j);
            transform[j][k] +=
                binom * (-x_mean).powi((k - j) as i32) / x_scale.powi(k as i32);
        }
    }
    let mut coeffs = vec![0.0; p];
    for j in 0..p {
        for k in 0..p {
            coeffs[j] += transform[j][k] * coeffs_u[k];
        }
    }
    let mut coeff_errors = vec![0.0; p];
    for j in 0..p {
        let mut var = 0.0;
        for k in 0..p {
            for l in 0..p {
                var += transform[j][k] * cov_u[k][l] * transform[j][l];
            }
        }
        coeff_errors[j] = var.max(0.0).sqrt();
    }

    Ok(PolyFit {
        coeffs,
        coeff_errors,
        r_squared,
        chi_squared: ss_res,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Gaussian profile fitted to histogram counts.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
    pub mean_error: f64,
    pub sigma_error: f64,
    /// Residual sum of squares at the optimum.
    pub residual_ss: f64,
}

/// Least-squares fit of `a exp(-(x - mu)^2 / (2 sigma^2))` to `(x, c)` pairs
/// via Levenberg-Marquardt. Faults on non-convergence (with the residual in
/// the message) and on gross model mismatch such as bimodal data.
pub fn fit_gaussian(xs: &[f64], counts: &[f64], total_counts: f64) -> Result<GaussianFit> {
    let populated = counts.iter().filter(|&&c| c > 0.0).count();
    if populated < 5 {
        return Err(Error::InsufficientData(format!(
            "gaussian fit needs at least 5 populated bins, got {populated}"
        )));
    }

    // Moment-based initialization.
    let mass: f64 = counts.iter().sum();
    let mean0 = xs.iter().zip(counts).map(|(x, c)| x * c).sum::<f64>() / mass;
    let var0 = xs
        .iter()
        .zip(counts)
        .map(|(x, c)| c * (x - mean0) * (x - mean0))
        .sum::<f64>()
        / mass;
    let mut a = counts.iter().cloned().fold(0.0f64, f64::max);
    let mut mu = mean0;
    let mut sg = var0.sqrt().max(1e-12);

    let cost = |a: f64, mu: f64, sg: f64| -> f64 {
        xs.iter()
            .zip(counts)
            .map(|(&x, &c)| {
                let m = a * (-((x - mu) * (x - mu)) / (2.0 * sg * sg)).exp();
                (c - m) * (c - m)
            })
            .sum()
    };

    let mut lambda = 1e-3;
    let mut prev_cost = cost(a, mu, sg);
    let mut converged = false;
    for _ in 0..200 {
        // Jacobian and normal equations.
        let mut jtj = vec![vec![0.0; 3]; 3];
        let mut jtr = vec![0.0; 3];
        for (&x, &c) in xs.iter().zip(counts) {
            let z = (x - mu) / sg;
            let e = (-0.5 * z * z).exp();
            let m = a * e;
            let r = c - m;
            let grad = [e, m * z / sg, m * z * z / sg];
            for i in 0..3 {
                jtr[i] += grad[i] * r;
                for j in 0..3 {
                    jtj[i][j] += grad[i] * grad[j];
                }
            }
        }
        let mut damped = jtj.clone();
        for i in 0..3 {
            damped[i][i] *= 1.0 + lambda;
        }
        let mut rhs = jtr.clone();
        let step = match solve_dense(&mut damped, &mut rhs) {
            Ok(s) => s,
            Err(_) => {
                lambda *= 10.0;
                continue;
            }
        };
        let (na, nmu, nsg) = (a + step[0], mu + step[1], (sg + step[2]).abs().max(1e-300));
        let new_cost = cost(na, nmu, nsg);
        if new_cost <= prev_cost {
            let improvement = (prev_cost - new_cost) / prev_cost.max(1e-300);
            a = na;
            mu = nmu;
            sg = nsg;
            prev_cost = new_cost;
            lambda = (lambda * 0.3).max(1e-12);
            if improvement < 1e-12 {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                converged = true; // stalled at a (local) optimum
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "gaussian fit stalled with residual sum {prev_cost:.6e}"
        )));
    }

    // Counting statistics put the expected residual sum near the total
    // number of samples; far beyond that the single-Gaussian model does not
    // describe the data.
    if total_counts > 0.0 && prev_cost > 4.0 * total_counts.max(25.0) {
        return Err(Error::ModelMismatch(format!(
            "residual sum {prev_cost:.3e} vs {total_counts:.3e} counts"
        )));
    }

    // Parameter covariance from the final Jacobian, scaled by the residual
    // variance.
    let n = xs.len();
    let mut jtj = vec![vec![0.0; 3]; 3];
    for &x in xs {
        let z = (x - mu) / sg;
        let e = (-0.5 * z * z).exp();
        let m = a * e;
        let grad = [e, m * z / sg, m * z * z / sg];
        for i in 0..3 {
            for j in 0..3 {
                jtj[i][j] += grad[i] * grad[j];
            }
        }
    }
    let dof = (n as f64 - 3.0).max(1.0);
    let s2 = prev_cost / dof;
    let cov = invert_dense(&jtj)?;
    Ok(GaussianFit {
        amplitude: a,
        mean: mu,
        sigma: sg.abs(),
        mean_error: (cov[1][1] * s2).max(0.0).sqrt(),
        sigma_error: (cov[2][2] * s2).max(0.0).sqrt(),
        residual_ss: prev_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments() {
        let (m, v) = mean_variance(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(v, 5.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn exact_line_recovered() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        let s = vec![1.0; 10];
        let fit = polyfit_weighted(&x, &y, &s, 1).unwrap();
        assert_relative_eq!(fit.coeffs[0], 3.0, max_relative = 1e-10);
        assert_relative_eq!(fit.coeffs[1], -2.0, max_relative = 1e-10);
        assert_relative_eq!(fit.r_squared, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn weighted_fit_matches_reference() {
        // Heteroscedastic data; reference values from an independent
        // weighted normal-equations evaluation.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.1, 3.9, 6.2, 7.8, 10.3];
        let s = [0.1, 0.2, 0.2, 0.3, 0.5];
        let fit = polyfit_weighted(&x, &y, &s, 1).unwrap();
        // Direct solution of the 2x2 weighted normal equations.
        let w: Vec<f64> = s.iter().map(|v| 1.0 / (v * v)).collect();
        let sw: f64 = w.iter().sum();
        let swx: f64 = w.iter().zip(&x).map(|(w, x)| w * x).sum();
        let swy: f64 = w.iter().zip(&y).map(|(w, y)| w * y).sum();
        let swxx: f64 = w.iter().zip(&x).map(|(w, x)| w * x * x).sum();
        let swxy: f64 = w
            .iter()
            .zip(x.iter().zip(&y))
            .map(|(w, (x, y))| w * x * y)
            .sum();
        let det = sw * swxx - swx * swx;
        let slope = (sw * swxy - swx * swy) / det;
        let intercept = (swxx * swy - swx * swxy) / det;
        assert_relative_eq!(fit.coeffs[1], slope, max_relative = 1e-10);
        assert_relative_eq!(fit.coeffs[0], intercept, max_relative = 1e-10);
    }

    #[test]
    fn huge_abscissa_is_conditioned() {
        // Photon-number scale abscissa with a tiny quadratic component.
        let x: Vec<f64> = (1..=12).map(|i| 1e9 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 5.0e-9 * v + 1e-21 * v * v).collect();
        let s = vec![1.0; 12];
        let fit = polyfit_weighted(&x, &y, &s, 2).unwrap();
        assert_relative_eq!(fit.coeffs[1], 5.0e-9, max_relative = 1e-6);
        assert_relative_eq!(fit.coeffs[2], 1e-21, max_relative = 1e-6);
    }

    #[test]
    fn gaussian_fit_noiseless() {
        let xs: Vec<f64> = (0..41).map(|i| -4.0 + 0.2 * i as f64).collect();
        let counts: Vec<f64> = xs
            .iter()
            .map(|x| 120.0 * (-(x - 0.3) * (x - 0.3) / (2.0 * 1.21)).exp())
            .collect();
        let fit = fit_gaussian(&xs, &counts, counts.iter().sum()).unwrap();
        assert_relative_eq!(fit.amplitude, 120.0, max_relative = 1e-6);
        assert_relative_eq!(fit.mean, 0.3, epsilon = 1e-6);
        assert_relative_eq!(fit.sigma, 1.1, max_relative = 1e-6);
    }

    #[test]
    fn gaussian_fit_rejects_bimodal() {
        let xs: Vec<f64> = (0..81).map(|i| -8.0 + 0.2 * i as f64).collect();
        let counts: Vec<f64> = xs
            .iter()
            .map(|x| {
                2000.0 * (-(x - 4.0) * (x - 4.0) / 0.5).exp()
                    + 2000.0 * (-(x + 4.0) * (x + 4.0) / 0.5).exp()
            })
            .collect();
        let err = fit_gaussian(&xs, &counts, counts.iter().sum()).unwrap_err();
        assert!(
            matches!(err, Error::ModelMismatch(_) | Error::NonConvergence(_)),
            "unexpected: {err:?}"
        );
    }

    #[test]
    fn gaussian_fit_needs_populated_bins() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let counts = [1.0, 5.0, 1.0, 0.0];
        assert!(fit_gaussian(&xs, &counts, 7.0).is_err());
    }
}
