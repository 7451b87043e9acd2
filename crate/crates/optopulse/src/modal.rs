//! Optically probed effective mass from discretized mode shapes.
//!
//! A vibrational mode sampled on a rectilinear grid is reduced to the
//! optically probed displacement `D` (overlap of the out-of-plane deflection
//! with the Gaussian beam intensity profile on the mirror surface) and the
//! effective mass `m_eff = rho * integral(u^2 + v^2 + w^2) dV / D^2`.
//! Quadrature is trapezoidal on the supplied grid; the Gaussian weights are
//! normalized discretely so a piston mode yields its total mass exactly.
//! No eigenvalue solving happens here: mode grids are supplied externally
//! or generated from closed-form deflection shapes.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constants::K_B;
use crate::error::{Error, Result};

/// Displacement field sampled on a rectilinear grid (x fastest, then y,
/// then z).
#[derive(Debug, Clone, PartialEq)]
pub struct ModeShape {
    pub label: String,
    pub frequency_hz: f64,
    /// Material density (kg/m^3).
    pub density: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Node spacings (m).
    pub spacing: [f64; 3],
    /// Coordinates of node (0, 0, 0) (m); the mirror surface is the z = 0
    /// plane.
    pub origin: [f64; 3],
    /// Displacement triplets `(u, v, w)` per node.
    pub displacements: Vec<[f64; 3]>,
}

/// Gaussian optical intensity profile on the mirror surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamProfile {
    /// Intensity standard deviation (m); the beam diameter is `4 r0`.
    pub r0: f64,
    /// Beam center on the surface (m).
    pub center: [f64; 2],
}

impl BeamProfile {
    pub fn new(r0: f64, center: [f64; 2]) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::InvalidParameter(format!("r0 = {r0}")));
        }
        Ok(BeamProfile { r0, center })
    }
}

fn trapezoid_weight(i: usize, n: usize) -> f64 {
    if n == 1 {
        1.0
    } else if i == 0 || i == n - 1 {
        0.5
    } else {
        1.0
    }
}

impl ModeShape {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidParameter("empty grid".into()));
        }
        if self.displacements.len() != self.nx * self.ny * self.nz {
            return Err(Error::InvalidParameter(format!(
                "expected {} displacement triplets, got {}",
                self.nx * self.ny * self.nz,
                self.displacements.len()
            )));
        }
        if !(self.density > 0.0) {
            return Err(Error::InvalidParameter(format!("density = {}", self.density)));
        }
        if self.spacing.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidParameter("spacings must be positive".into()));
        }
        if self.displacements.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mode displacements".into()));
        }
        Ok(())
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    pub fn node_x(&self, i: usize) -> f64 {
        self.origin[0] + i as f64 * self.spacing[0]
    }

    pub fn node_y(&self, j: usize) -> f64 {
        self.origin[1] + j as f64 * self.spacing[1]
    }

    pub fn node_z(&self, k: usize) -> f64 {
        self.origin[2] + k as f64 * self.spacing[2]
    }

    /// Index of the grid layer on the mirror surface (z = 0).
    fn surface_layer(&self) -> Result<usize> {
        let tol = self.spacing[2] * 1e-9;
        (0..self.nz)
            .find(|&k| self.node_z(k).abs() <= tol)
            .ok_or_else(|| {
                Error::Coverage(format!(
                    "grid has no layer on the z = 0 surface (z range {} .. {})",
                    self.node_z(0),
                    self.node_z(self.nz - 1)
                ))
            })
    }

    /// `rho * integral (u^2 + v^2 + w^2) dV` by trapezoidal quadrature (kg,
    /// for a unit-amplitude mode the units work out to kg m^2 per m^2).
    pub fn kinetic_integral(&self) -> f64 {
        let cell = self.spacing[0] * self.spacing[1] * self.spacing[2];
        let mut sum = 0.0;
        for k in 0..self.nz {
            let wz = trapezoid_weight(k, self.nz);
            for j in 0..self.ny {
                let wy = trapezoid_weight(j, self.ny);
                for i in 0..self.nx {
                    let wx = trapezoid_weight(i, self.nx);
                    let d = self.displacements[self.index(i, j, k)];
                    sum += wx * wy * wz * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
                }
            }
        }
        self.density * cell * sum
    }
}

/// Overlap of the surface deflection with the Gaussian intensity profile:
/// the optically probed displacement per unit modal amplitude.
///
/// The discrete Gaussian weights are normalized to unit integral over the
/// grid, which keeps a piston deflection exact regardless of grid extent.
/// Faults when the grid does not cover the beam out to `4 r0`.
pub fn optical_overlap(mode: &ModeShape, beam: &BeamProfile) -> Result<f64> {
    mode.validate()?;
    let reach = 4.0 * beam.r0;
    let (x_lo, x_hi) = (mode.node_x(0), mode.node_x(mode.nx - 1));
    let (y_lo, y_hi) = (mode.node_y(0), mode.node_y(mode.ny - 1));
    if beam.center[0] - reach < x_lo - 1e-12
        || beam.center[0] + reach > x_hi + 1e-12
        || beam.center[1] - reach < y_lo - 1e-12
        || beam.center[1] + reach > y_hi + 1e-12
    {
        return Err(Error::Coverage(format!(
            "beam support [{:.3e}, {:.3e}] x [{:.3e}, {:.3e}] exceeds grid",
            beam.center[0] - reach,
            beam.center[0] + reach,
            beam.center[1] - reach,
            beam.center[1] + reach
        )));
    }

    let surface = mode.surface_layer()?;
    let two_r0_sq = 2.0 * beam.r0 * beam.r0;
    let mut weight_sum = 0.0;
    let mut overlap = 0.0;
    for j in 0..mode.ny {
        let wy = trapezoid_weight(j, mode.ny);
        let dy = mode.node_y(j) - beam.center[1];
        for i in 0..mode.nx {
            let wx = trapezoid_weight(i, mode.nx);
            let dx = mode.node_x(i) - beam.center[0];
            let g = wx * wy * (-(dx * dx + dy * dy) / two_r0_sq).exp();
            weight_sum += g;
            overlap += g * mode.displacements[mode.index(i, j, surface)][2];
        }
    }
    Ok(overlap / weight_sum)
}

/// Effective mass `rho * integral(u^2 + v^2 + w^2) dV / D^2` (kg).
pub fn effective_mass(mode: &ModeShape, beam: &BeamProfile) -> Result<f64> {
    let d = optical_overlap(mode, beam)?;
    let peak = mode
        .displacements
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    if d.abs() < 1e-12 * peak.max(1e-300) {
        return Err(Error::Degenerate(
            "optically dark mode: beam overlap vanishes".into(),
        ));
    }
    Ok(mode.kinetic_integral() / (d * d))
}

/// Mode summary for the thermal-amplitude bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSummary {
    pub label: String,
    pub m_eff: f64,
    pub frequency_hz: f64,
}

/// Equipartition RMS amplitude per mode and its fraction of the first
/// (fundamental) entry: `x_rms = sqrt(k_B T / (m_eff omega^2))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmsContribution {
    pub label: String,
    pub rms_m: f64,
    pub fraction_of_fundamental: f64,
}

pub fn rms_contributions(modes: &[ModeSummary], temperature: f64) -> Result<Vec<RmsContribution>> {
    if modes.is_empty() {
        return Err(Error::InsufficientData("no modes supplied".into()));
    }
    if temperature < 0.0 {
        return Err(Error::InvalidParameter(format!("T = {temperature}")));
    }
    let rms = |m: &ModeSummary| -> Result<f64> {
        if !(m.m_eff > 0.0 && m.frequency_hz > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mode {}: m_eff = {}, f = {}",
                m.label, m.m_eff, m.frequency_hz
            )));
        }
        let omega = 2.0 * std::f64::consts::PI * m.frequency_hz;
        Ok((K_B * temperature / (m.m_eff * omega * omega)).sqrt())
    };
    let fundamental = rms(&modes[0])?;
    modes
        .iter()
        .map(|m| {
            let r = rms(m)?;
            Ok(RmsContribution {
                label: m.label.clone(),
                rms_m: r,
                fraction_of_fundamental: if fundamental > 0.0 { r / fundamental } else { 1.0 },
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Grid file format
// ---------------------------------------------------------------------------

const GRID_MAGIC: &str = "optopulse-mode-grid v1";

/// Writes the self-describing text grid format:
///
/// ```text
/// optopulse-mode-grid v1
/// label <token>
/// frequency_hz <f64>
/// density_kg_m3 <f64>
/// dims <nx> <ny> <nz>
/// spacing_m <dx> <dy> <dz>
/// origin_m <x> <y> <z>
/// data
/// <u> <v> <w>        (nx*ny*nz lines, x fastest, then y, then z)
/// ```
pub fn write_grid(mode: &ModeShape, path: &Path) -> Result<()> {
    mode.validate()?;
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{GRID_MAGIC}")?;
    writeln!(out, "label {}", mode.label)?;
    writeln!(out, "frequency_hz {}", mode.frequency_hz)?;
    writeln!(out, "density_kg_m3 {}", mode.density)?;
    writeln!(out, "dims {} {} {}", mode.nx, mode.ny, mode.nz)?;
    writeln!(
        out,
        "spacing_m {} {} {}",
        mode.spacing[0], mode.spacing[1], mode.spacing[2]
    )?;
    writeln!(
        out,
        "origin_m {} {} {}",
        mode.origin[0], mode.origin[1], mode.origin[2]
    )?;
    writeln!(out, "data")?;
    for d in &mode.displacements {
        writeln!(out, "{} {} {}", d[0], d[1], d[2])?;
    }
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<ModeShape> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Parse(format!("unexpected end of grid file at {what}")))?
            .map_err(Error::Io)
    };
    if next("magic")? != GRID_MAGIC {
        return Err(Error::Parse("not an optopulse mode grid".into()));
    }
    let field = |line: String, key: &str| -> Result<Vec<String>> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let head = parts.next().unwrap_or_default();
        if head != key {
            return Err(Error::Parse(format!("expected `{key}`, found `{head}`")));
        }
        Ok(parts.collect())
    };
    let parse_f64 = |s: &str, what: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Parse(format!("bad {what}: `{s}`")))
    };

    let label = field(next("label")?, "label")?
        .first()
        .cloned()
        .unwrap_or_default();
    let frequency_hz = parse_f64(&field(next("frequency_hz")?, "frequency_hz")?[0], "frequency")?;
    let density = parse_f64(&field(next("density")?, "density_kg_m3")?[0], "density")?;
    let dims = field(next("dims")?, "dims")?;
    if dims.len() != 3 {
        return Err(Error::Parse("dims needs three entries".into()));
    }
    let nx: usize = dims[0].parse().map_err(|_| Error::Parse("bad nx".into()))?;
    let ny: usize = dims[1].parse().map_err(|_| Error::Parse("bad ny".into()))?;
    let nz: usize = dims[2].parse().map_err(|_| Error::Parse("bad nz".into()))?;
    let spacing_v = field(next("spacing")?, "spacing_m")?;
    let origin_v = field(next("origin")?, "origin_m")?;
    if spacing_v.len() != 3 || origin_v.len() != 3 {
        return Err(Error::Parse("spacing/origin need three entries".into()));
    }
    let mut spacing = [0.0; 3];
    let mut origin = [0.0; 3];
    for a in 0..3 {
        spacing[a] = parse_f64(&spacing_v[a], "spacing")?;
        origin[a] = parse_f64(&origin_v[a], "origin")?;
    }
    if next("data")? != "data" {
        return Err(Error::Parse("expected `data`".into()));
    }
    let mut displacements = Vec::with_capacity(nx * ny * nz);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 3 {
            return Err(Error::Parse(format!("bad displacement line: `{line}`")));
        }
        displacements.push([
            parse_f64(vals[0], "u")?,
            parse_f64(vals[1], "v")?,
            parse_f64(vals[2], "w")?,
        ]);
    }
    let mode = ModeShape {
        label,
        frequency_hz,
        density,
        nx,
        ny,
        nz,
        spacing,
        origin,
        displacements,
    };
    mode.validate()?;
    Ok(mode)
}

// ---------------------------------------------------------------------------
// Closed-form deflection shapes for synthetic grids
// ---------------------------------------------------------------------------

/// Head geometry of a synthetic cantilever.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum HeadShape {
    /// Circular mirror pad of the given diameter.
    Disk { diameter: f64 },
    /// Rectangular pad (length along the arm, width across), boundaries
    /// alignable with grid nodes for clean quadrature.
    Pad { length: f64, width: f64 },
}

/// Cantilever with an end mirror: arm along +x clamped at x = 0, head
/// centered beyond the arm tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CantileverGeometry {
    pub arm_length: f64,
    pub arm_width: f64,
    pub thickness: f64,
    pub head: HeadShape,
    pub density: f64,
    pub frequency_hz: f64,
}

impl CantileverGeometry {
    fn head_extent_x(&self) -> f64 {
        match self.head {
            HeadShape::Disk { diameter } => diameter,
            HeadShape::Pad { length, .. } => length,
        }
    }

    fn head_halfwidth(&self) -> f64 {
        match self.head {
            HeadShape::Disk { diameter } => diameter / 2.0,
            HeadShape::Pad { width, .. } => width / 2.0,
        }
    }

    /// Beam-center position: middle of the head on the surface.
    pub fn head_center(&self) -> [f64; 2] {
        [self.arm_length + 0.5 * self.head_extent_x(), 0.0]
    }

    /// Fundamental out-of-plane deflection, unit displacement at the arm
    /// tip: end-loaded static shape along the arm, rigid (tilting) head.
    /// Zero outside the material.
    pub fn displacement(&self, x: f64, y: f64) -> f64 {
        let l = self.arm_length;
        if x < 0.0 {
            return 0.0;
        }
        if x <= l {
            if y.abs() > self.arm_width / 2.0 {
                return 0.0;
            }
            return (3.0 * x * x * l - x * x * x) / (2.0 * l * l * l);
        }
        let tilt = 1.5 / l;
        let inside = match self.head {
            HeadShape::Disk { diameter } => {
                let r = diameter / 2.0;
                let cx = l + r;
                (x - cx).powi(2) + y * y <= r * r
            }
            HeadShape::Pad { length, width } => {
                x <= l + length && y.abs() <= width / 2.0
            }
        };
        if inside {
            1.0 + tilt * (x - l)
        } else {
            0.0
        }
    }

    /// Samples the deflection onto a grid with the given node counts. The
    /// y range spans the head half-width plus one spacing margin; material
    /// boundaries should be aligned by the caller's choice of counts.
    pub fn sample(&self, nx: usize, ny: usize, nz: usize, label: &str) -> ModeShape {
        let x_max = self.arm_length + self.head_extent_x();
        let y_half = self.head_halfwidth();
        let dx = x_max / (nx - 1) as f64;
        let dy = 2.0 * y_half / (ny - 1) as f64;
        let dz = self.thickness / (nz - 1) as f64;
        let mut displacements = Vec::with_capacity(nx * ny * nz);
        for _k in 0..nz {
            for j in 0..ny {
                let y = -y_half + j as f64 * dy;
                for i in 0..nx {
                    let x = i as f64 * dx;
                    displacements.push([0.0, 0.0, self.displacement(x, y)]);
                }
            }
        }
        ModeShape {
            label: label.into(),
            frequency_hz: self.frequency_hz,
            density: self.density,
            nx,
            ny,
            nz,
            spacing: [dx, dy, dz],
            origin: [0.0, -y_half, 0.0],
            displacements,
        }
    }
}

/// Uniform piston deflection over a rectangular block: `w = amplitude`
/// everywhere. Its effective mass is the total block mass exactly.
pub fn piston_mode(
    lx: f64,
    ly: f64,
    lz: f64,
    amplitude: f64,
    density: f64,
    frequency_hz: f64,
    n: usize,
) -> ModeShape {
    let (nx, ny, nz) = (n, n, 3.max(n / 8));
    ModeShape {
        label: "piston".into(),
        frequency_hz,
        density,
        nx,
        ny,
        nz,
        spacing: [
            lx / (nx - 1) as f64,
            ly / (ny - 1) as f64,
            lz / (nz - 1) as f64,
        ],
        origin: [-lx / 2.0, -ly / 2.0, 0.0],
        displacements: vec![[0.0, 0.0, amplitude]; nx * ny * nz],
    }
}
