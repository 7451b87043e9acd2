//! Dataset writers. Every file embeds the resolved scenario (JSON outputs as
//! a `config` field, CSV and grid files as `#`-prefixed header lines) plus
//! the seed, so any output can be traced back to its exact inputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::protocol::{RunRecord, StrengthPoint, WidthPoint};
use crate::scenario::{Scenario, TaskOutput};
use crate::tomo::{MarginalSet, PhaseSpaceMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

fn config_line(scenario: &Scenario) -> String {
    serde_json::to_string(scenario).expect("scenario serializes")
}

fn write_json_with_config<T: Serialize>(
    path: &Path,
    scenario: &Scenario,
    data: &T,
) -> Result<()> {
    #[derive(Serialize)]
    struct Wrapper<'a, T> {
        seed: u64,
        config: &'a Scenario,
        data: &'a T,
    }
    let text = serde_json::to_string_pretty(&Wrapper {
        seed: scenario.seed,
        config: scenario,
        data,
    })
    .expect("output serializes");
    std::fs::write(path, text)?;
    Ok(())
}

fn csv_header(out: &mut impl Write, scenario: &Scenario) -> std::io::Result<()> {
    writeln!(out, "# optopulse v{}", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "# seed {}", scenario.seed)?;
    writeln!(out, "# config {}", config_line(scenario))
}

pub fn write_width_table(
    path: &Path,
    scenario: &Scenario,
    rows: &[WidthPoint],
    format: OutputFormat,
) -> Result<()> {
    match format {
        OutputFormat::Json => write_json_with_config(path, scenario, &rows),
        OutputFormat::Csv => {
            let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
            csv_header(&mut out, scenario)?;
            writeln!(
                out,
                "theta_rad,samples,transformed_variance,mech_variance,sigma_x_m,flagged"
            )?;
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.theta, r.samples, r.transformed_variance, r.mech_variance, r.sigma_x_m,
                    r.flagged
                )?;
            }
            Ok(())
        }
    }
}

pub fn write_strength_table(
    path: &Path,
    scenario: &Scenario,
    rows: &[StrengthPoint],
    format: OutputFormat,
) -> Result<()> {
    match format {
        OutputFormat::Json => write_json_with_config(path, scenario, &rows),
        OutputFormat::Csv => {
            let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
            csv_header(&mut out, scenario)?;
            writeln!(
                out,
                "n_signal,sqrt_n,chi,fitted_sigma_x_m,flagged,inferred_sigma_x_m"
            )?;
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.n_signal, r.sqrt_n, r.chi, r.fitted_sigma_x_m, r.flagged,
                    r.inferred_sigma_x_m
                )?;
            }
            Ok(())
        }
    }
}

pub fn write_run_records(
    path: &Path,
    scenario: &Scenario,
    records: &[RunRecord],
    format: OutputFormat,
) -> Result<()> {
    match format {
        OutputFormat::Json => write_json_with_config(path, scenario, &records),
        OutputFormat::Csv => {
            let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
            csv_header(&mut out, scenario)?;
            writeln!(out, "run,theta_rad,rep,p1,p2,r,transformed")?;
            for (run_idx, record) in records.iter().enumerate() {
                for (rep_idx, rep) in record.repetitions.iter().enumerate() {
                    let p1 = rep.prep.first().map(|o| o.value);
                    let p2 = rep.prep.get(1).map(|o| o.value);
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        run_idx,
                        record.protocol.theta_r,
                        rep_idx,
                        p1.map(|v| v.to_string()).unwrap_or_default(),
                        p2.map(|v| v.to_string()).unwrap_or_default(),
                        rep.readout.value,
                        rep.transformed
                    )?;
                }
            }
            Ok(())
        }
    }
}

pub fn write_marginals(path: &Path, scenario: &Scenario, set: &MarginalSet) -> Result<()> {
    write_json_with_config(path, scenario, set)
}

/// Self-describing text grid for a phase-space map.
pub fn write_phase_space_grid(
    path: &Path,
    scenario: &Scenario,
    map: &PhaseSpaceMap,
    provenance: Option<&str>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "optopulse-phase-space-grid v1")?;
    writeln!(out, "# seed {}", scenario.seed)?;
    writeln!(out, "# config {}", config_line(scenario))?;
    if let Some(p) = provenance {
        writeln!(out, "# input_sha256 {p}")?;
    }
    writeln!(out, "grid {}", map.grid_size)?;
    writeln!(out, "extent {}", map.extent)?;
    writeln!(out, "raw_mass {}", map.raw_mass)?;
    writeln!(out, "min_value {}", map.min_value)?;
    writeln!(out, "negative_fraction {}", map.negative_fraction)?;
    writeln!(out, "data")?;
    for row in map.values.chunks(map.grid_size) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Writes every dataset a task produced into `out_dir`; returns the list of
/// files written.
pub fn write_outputs(
    out_dir: &Path,
    scenario: &Scenario,
    output: &TaskOutput,
    format: OutputFormat,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut push = |p: PathBuf| -> PathBuf {
        written.push(p.clone());
        p
    };
    let table_ext = match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    match output {
        TaskOutput::Protocol(p) => {
            write_run_records(
                &push(out_dir.join(format!("records.{table_ext}"))),
                scenario,
                &p.records,
                format,
            )?;
            write_width_table(
                &push(out_dir.join(format!("widths.{table_ext}"))),
                scenario,
                &p.widths,
                format,
            )?;
            write_marginals(&push(out_dir.join("marginals.json")), scenario, &p.marginals)?;
            write_json_with_config(&push(out_dir.join("summary.json")), scenario, &p.summary)?;
            if let Some(map) = &p.map {
                write_phase_space_grid(&push(out_dir.join("map.grid")), scenario, map, None)?;
            }
        }
        TaskOutput::WidthVsTheta(rows) => {
            write_width_table(
                &push(out_dir.join(format!("widths.{table_ext}"))),
                scenario,
                rows,
                format,
            )?;
        }
        TaskOutput::WidthVsStrength(rows) => {
            write_strength_table(
                &push(out_dir.join(format!("strength.{table_ext}"))),
                scenario,
                rows,
                format,
            )?;
        }
        TaskOutput::NoiseScan(scan) => {
            write_json_with_config(&push(out_dir.join("noise_scan.json")), scenario, scan)?;
            if format == OutputFormat::Csv {
                let path = push(out_dir.join("noise_scan.csv"));
                let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
                csv_header(&mut out, scenario)?;
                writeln!(out, "n_tot,variance,uncertainty")?;
                for p in &scan.points {
                    writeln!(out, "{},{},{}", p.n_tot, p.variance, p.uncertainty)?;
                }
            }
        }
        TaskOutput::EffectiveMass(m) => {
            write_json_with_config(&push(out_dir.join("effective_mass.json")), scenario, m)?;
        }
        TaskOutput::Calibrate(c) => {
            write_json_with_config(&push(out_dir.join("calibration.json")), scenario, c)?;
        }
    }
    Ok(written)
}
