use optopulse::tomo::*;

fn gaussian_marginals(sigma: f64, angles: &[f64], bins: usize, extent: f64) -> MarginalSet {
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
    MarginalSet { angles: angles.to_vec(), histograms, scale: 1.0, chi_used: 1.0 }
}

fn main() {
    let angles: Vec<f64> = (0..9).map(|i| std::f64::consts::FRAC_PI_2 * i as f64 / 8.0).collect();
    let sigma: f64 = 1.3;
    for apod in [0.0, 0.25, 0.5] {
        let set = symmetrize(&gaussian_marginals(sigma, &angles, 64, 8.0)).unwrap();
        let map = inverse_radon(&set, 128, &ReconOptions { apodization: apod, extent: None }).unwrap();
        let v0 = map_marginal_variance(&map, 0.0);
        let v45 = map_marginal_variance(&map, std::f64::consts::FRAC_PI_4);
        println!(
            "apod {apod}: raw_mass {:.5}, v0 {:.5} (true {:.5}), v45 {:.5}, min {:.3e}, negfrac {:.3e}",
            map.raw_mass, v0, sigma * sigma, v45, map.min_value, map.negative_fraction
        );
        // profile along the x axis at p = 0
        let axis = map.axis();
        let mid = map.grid_size / 2;
        let profile: Vec<(f64, f64)> = (0..map.grid_size).step_by(8)
            .map(|i| (axis[i], map.value(i, mid))).collect();
        println!("  profile: {:?}", profile.iter().map(|(x,v)| format!("{x:.1}:{v:.4}")).collect::<Vec<_>>());
    }
}
