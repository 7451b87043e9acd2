//! Scenario-driven command line for the pulsed optomechanics simulator.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use optopulse::report::{self, OutputFormat};
use optopulse::scenario::{run_scenario, Scenario, Task, TaskOutput};
use optopulse::tomo::{inverse_radon, symmetrize, MarginalSet, ReconOptions};

#[derive(Parser)]
#[command(name = "optopulse", version, about = "Pulsed optomechanical measurement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Table format.
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
    /// Force sequential execution for bit-exact audits.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a pulse protocol or sweep scenario.
    Run(CommonOpts),
    /// Reconstruct a phase-space map from a `marginals.json` dataset.
    Tomo {
        /// Directory containing `marginals.json` from a previous run.
        #[arg(long)]
        input: PathBuf,
        /// Scenario config echoed into the outputs.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Reconstruction grid size.
        #[arg(long, default_value_t = 128)]
        grid: usize,
        /// Raised-cosine apodization strength in [0, 1].
        #[arg(long, default_value_t = 0.5)]
        apodization: f64,
    },
    /// Conditional-variance scan against total photon number.
    NoiseScan(CommonOpts),
    /// Effective mass from a mode-shape grid.
    Meff(CommonOpts),
    /// Piezo fringe and outcome-per-meter calibration.
    Calibrate(CommonOpts),
}

fn load(opts: &CommonOpts) -> anyhow::Result<Scenario> {
    let mut scenario = Scenario::from_file(&opts.config)
        .with_context(|| format!("loading {}", opts.config.display()))?;
    if let Some(seed) = opts.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn run_and_write(opts: &CommonOpts, expect: &str) -> anyhow::Result<()> {
    let scenario = load(opts)?;
    let matches_task = matches!(
        (&scenario.task, expect),
        (Task::Protocol { .. }, "run")
            | (Task::WidthVsTheta { .. }, "run")
            | (Task::WidthVsStrength { .. }, "run")
            | (Task::NoiseScan { .. }, "noise-scan")
            | (Task::EffectiveMass { .. }, "meff")
            | (Task::Calibrate { .. }, "calibrate")
    );
    if !matches_task {
        bail!(
            "scenario task does not match the `{expect}` subcommand; check the config's task.kind"
        );
    }
    let output = run_scenario(&scenario, !opts.deterministic)?;
    let files = report::write_outputs(&opts.out, &scenario, &output, opts.format)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    print_highlights(&output);
    Ok(())
}

fn print_highlights(output: &TaskOutput) {
    match output {
        TaskOutput::Protocol(p) => {
            println!(
                "chi = {:.4e}, omega = {:.4}, mean sigma_x = {:.4e} m",
                p.summary.chi, p.summary.omega, p.summary.mean_sigma_x_m
            );
            if let Some(t) = p.summary.t_eff_k {
                println!("T_eff = {t:.4} K");
            }
            if let Some(map) = &p.map {
                println!(
                    "map: {0}x{0} cells, raw mass {1:.4}, min value {2:.3e}",
                    map.grid_size, map.raw_mass, map.min_value
                );
            }
        }
        TaskOutput::WidthVsTheta(rows) => {
            for r in rows {
                println!(
                    "theta = {:.4} rad: sigma_x = {:.4e} m{}",
                    r.theta,
                    r.sigma_x_m,
                    if r.flagged { " (flagged)" } else { "" }
                );
            }
        }
        TaskOutput::WidthVsStrength(rows) => {
            for r in rows {
                println!(
                    "N = {:.3e}: fitted {:.4e} m, inferred {:.4e} m",
                    r.n_signal, r.fitted_sigma_x_m, r.inferred_sigma_x_m
                );
            }
        }
        TaskOutput::NoiseScan(s) => {
            println!(
                "linear fit: slope {:.4e}, intercept {:.4e}, R^2 = {:.4}",
                s.slope, s.intercept, s.r_squared
            );
            println!(
                "quadratic preferred: {} (t = {:.2})",
                s.quadratic_preferred, s.quadratic_t
            );
            if let (Some(c), Some(m)) = (s.floor_configured_db, s.floor_measured_db) {
                println!("electronic floor: configured {c:.2} dB, measured {m:.2} dB");
            }
        }
        TaskOutput::EffectiveMass(m) => {
            println!(
                "m_eff = {:.4e} kg (grid `{}`), overlap per amplitude = {:.4e}",
                m.m_eff_kg, m.grid_label, m.overlap_per_amplitude
            );
        }
        TaskOutput::Calibrate(c) => {
            println!(
                "half-wave coincident: {} (mismatch {:.2e}); slope = {:.6e} /m (expected {:.6e}, err {:.3} %)",
                c.half_wave.coincident,
                c.half_wave.mismatch,
                c.fit.slope_per_meter,
                c.expected_slope_per_meter,
                100.0 * c.slope_relative_error
            );
        }
    }
}

fn cmd_tomo(
    input: PathBuf,
    config: PathBuf,
    out: PathBuf,
    grid: usize,
    apodization: f64,
) -> anyhow::Result<()> {
    let scenario = Scenario::from_file(&config)?;
    let marginals_path = input.join("marginals.json");
    if !marginals_path.exists() {
        bail!("no marginals.json in {}", input.display());
    }
    let hash = report::sha256_file(&marginals_path)?;
    let text = std::fs::read_to_string(&marginals_path)?;
    #[derive(serde::Deserialize)]
    struct Wrapper {
        data: MarginalSet,
    }
    let set: MarginalSet = serde_json::from_str::<Wrapper>(&text)
        .map(|w| w.data)
        .or_else(|_| serde_json::from_str(&text))
        .context("parsing marginals.json")?;
    let full = symmetrize(&set)?;
    let map = inverse_radon(
        &full,
        grid,
        &ReconOptions {
            apodization,
            extent: None,
        },
    )?;
    std::fs::create_dir_all(&out)?;
    let path = out.join("map.grid");
    report::write_phase_space_grid(&path, &scenario, &map, Some(&hash))?;
    println!("wrote {}", path.display());
    println!(
        "map: {0}x{0} cells, raw mass {1:.4}, min value {2:.3e}, negative fraction {3:.3e}",
        map.grid_size, map.raw_mass, map.min_value, map.negative_fraction
    );
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(opts) => run_and_write(&opts, "run"),
        Command::NoiseScan(opts) => run_and_write(&opts, "noise-scan"),
        Command::Meff(opts) => run_and_write(&opts, "meff"),
        Command::Calibrate(opts) => run_and_write(&opts, "calibrate"),
        Command::Tomo {
            input,
            config,
            out,
            grid,
            apodization,
        } => cmd_tomo(input, config, out, grid, apodization),
    }
}
