//! Physical parameters shared by every engine: plate and membrane media,
//! the point source, the computational grid, dispersion laws, the analytic
//! revival time and explicit-scheme stability limits.
//!
//! Units are SI throughout. Field names carry the unit as a suffix so that
//! serialized configurations are self-describing.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("negative wavenumber {0}")]
    NegativeWavenumber(f64),
    #[error("membrane dispersion is linear; no finite revival time exists")]
    NoRevivalForLinearDispersion,
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn require(ok: bool, name: &'static str, value: f64, reason: &'static str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}

/// Edge condition of a square plate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryCondition {
    /// Zero displacement and zero normal slope (rigid edge).
    Clamped,
    /// Zero displacement and zero bending moment.
    SimplySupported,
}

impl BoundaryCondition {
    /// Sign applied to the first interior value to fill the ghost node
    /// outside an edge: mirror for clamped, anti-mirror for simply supported.
    pub fn ghost_sign(self) -> f64 {
        match self {
            BoundaryCondition::Clamped => 1.0,
            BoundaryCondition::SimplySupported => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundaryCondition::Clamped => "clamped",
            BoundaryCondition::SimplySupported => "simply-supported",
        }
    }
}

impl std::str::FromStr for BoundaryCondition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "clamped" | "rigid" => Ok(BoundaryCondition::Clamped),
            "simply-supported" | "ss" => Ok(BoundaryCondition::SimplySupported),
            other => Err(format!(
                "unknown boundary condition `{other}` (expected clamped or simply-supported)"
            )),
        }
    }
}

/// Thin square plate described by Kirchhoff-Love theory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateSpec {
    pub youngs_modulus_pa: f64,
    pub thickness_m: f64,
    pub poisson_ratio: f64,
    pub density_kg_m3: f64,
    pub side_m: f64,
    pub boundary: BoundaryCondition,
}

impl Default for PlateSpec {
    /// 40 mm × 40 mm × 0.5 mm duralumin cavity with rigid edges.
    fn default() -> Self {
        PlateSpec {
            youngs_modulus_pa: 74.0e9,
            thickness_m: 0.5e-3,
            poisson_ratio: 0.33,
            density_kg_m3: 2790.0,
            side_m: 0.04,
            boundary: BoundaryCondition::Clamped,
        }
    }
}

impl PlateSpec {
    pub fn with_boundary(mut self, boundary: BoundaryCondition) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn validate(&self) -> Result<()> {
        require(self.youngs_modulus_pa > 0.0, "youngs_modulus_pa", self.youngs_modulus_pa, "must be positive")?;
        require(self.thickness_m > 0.0, "thickness_m", self.thickness_m, "must be positive")?;
        require(
            (0.0..0.5).contains(&self.poisson_ratio),
            "poisson_ratio",
            self.poisson_ratio,
            "must lie in [0, 0.5)",
        )?;
        require(self.density_kg_m3 > 0.0, "density_kg_m3", self.density_kg_m3, "must be positive")?;
        require(self.side_m > 0.0, "side_m", self.side_m, "must be positive")?;
        Ok(())
    }

    /// Flexural coefficient `a` of the dispersion law ω = a k², in m²/s.
    pub fn flexural_coefficient(&self) -> Result<f64> {
        self.validate()?;
        let nu2 = self.poisson_ratio * self.poisson_ratio;
        let h2 = self.thickness_m * self.thickness_m;
        Ok((self.youngs_modulus_pa * h2 / (12.0 * (1.0 - nu2) * self.density_kg_m3)).sqrt())
    }
}

/// Square membrane with fixed edges and linear dispersion ω = c k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembraneSpec {
    pub side_m: f64,
    pub wave_speed_m_s: f64,
}

/// Default membrane speed: first boundary return after 70 µs in a 40 mm
/// cavity, c = 2L / T_cl.
pub const DEFAULT_MEMBRANE_SPEED_M_S: f64 = 2.0 * 0.04 / 70.0e-6;

impl Default for MembraneSpec {
    fn default() -> Self {
        MembraneSpec {
            side_m: 0.04,
            wave_speed_m_s: DEFAULT_MEMBRANE_SPEED_M_S,
        }
    }
}

impl MembraneSpec {
    pub fn validate(&self) -> Result<()> {
        require(self.side_m > 0.0, "side_m", self.side_m, "must be positive")?;
        require(self.wave_speed_m_s > 0.0, "wave_speed_m_s", self.wave_speed_m_s, "must be positive")?;
        Ok(())
    }

    /// Boundary round-trip time of a pulse launched from the cavity interior.
    pub fn classical_time(&self) -> f64 {
        2.0 * self.side_m / self.wave_speed_m_s
    }
}

/// Either propagation medium. Engines dispatch on this.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Medium {
    Plate(PlateSpec),
    Membrane(MembraneSpec),
}

impl Medium {
    pub fn side_m(&self) -> f64 {
        match self {
            Medium::Plate(p) => p.side_m,
            Medium::Membrane(m) => m.side_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Medium::Plate(p) => p.validate(),
            Medium::Membrane(m) => m.validate(),
        }
    }

    pub fn dispersion(&self) -> Result<Dispersion> {
        match self {
            Medium::Plate(p) => Ok(Dispersion::Plate {
                a: p.flexural_coefficient()?,
            }),
            Medium::Membrane(m) => {
                m.validate()?;
                Ok(Dispersion::Membrane {
                    c: m.wave_speed_m_s,
                })
            }
        }
    }

    /// Boundary condition of a plate; `None` for the membrane, whose edges
    /// are always fixed.
    pub fn boundary(&self) -> Option<BoundaryCondition> {
        match self {
            Medium::Plate(p) => Some(p.boundary),
            Medium::Membrane(_) => None,
        }
    }
}

impl From<PlateSpec> for Medium {
    fn from(p: PlateSpec) -> Self {
        Medium::Plate(p)
    }
}

impl From<MembraneSpec> for Medium {
    fn from(m: MembraneSpec) -> Self {
        Medium::Membrane(m)
    }
}

/// Dispersion law of a medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dispersion {
    /// ω = a k²
    Plate { a: f64 },
    /// ω = c k
    Membrane { c: f64 },
}

impl Dispersion {
    pub fn omega(&self, k: f64) -> Result<f64> {
        if k < 0.0 || k.is_nan() {
            return Err(ModelError::NegativeWavenumber(k));
        }
        Ok(match *self {
            Dispersion::Plate { a } => a * k * k,
            Dispersion::Membrane { c } => c * k,
        })
    }

    /// Inverse law: wavenumber carrying angular frequency `omega`.
    pub fn wavenumber(&self, omega: f64) -> f64 {
        match *self {
            Dispersion::Plate { a } => (omega / a).sqrt(),
            Dispersion::Membrane { c } => omega / c,
        }
    }
}

/// Full revival time of the square cavity, 4L² / (π ∂²ω/∂k²) = 2L²/(πa).
pub fn revival_time_theoretical(medium: &Medium) -> Result<f64> {
    match medium {
        Medium::Plate(p) => {
            let a = p.flexural_coefficient()?;
            Ok(2.0 * p.side_m * p.side_m / (PI * a))
        }
        Medium::Membrane(_) => Err(ModelError::NoRevivalForLinearDispersion),
    }
}

/// Point excitation: Gaussian-windowed sinusoid at a fixed position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub x_m: f64,
    pub y_m: f64,
    pub carrier_hz: f64,
    /// Full width at half maximum of the pulse envelope.
    pub duration_s: f64,
    #[serde(default = "unit_amplitude")]
    pub amplitude: f64,
}

fn unit_amplitude() -> f64 {
    1.0
}

impl SourceSpec {
    pub const DEFAULT_CARRIER_HZ: f64 = 500.0e3;
    pub const DEFAULT_DURATION_S: f64 = 6.0e-6;

    /// Source at fractional position (fx·L, fy·L) with the default pulse.
    pub fn at_fraction(side_m: f64, fx: f64, fy: f64) -> Self {
        SourceSpec {
            x_m: fx * side_m,
            y_m: fy * side_m,
            carrier_hz: Self::DEFAULT_CARRIER_HZ,
            duration_s: Self::DEFAULT_DURATION_S,
            amplitude: 1.0,
        }
    }

    pub fn with_carrier(mut self, carrier_hz: f64) -> Self {
        self.carrier_hz = carrier_hz;
        self
    }

    pub fn validate(&self, side_m: f64) -> Result<()> {
        require(self.x_m > 0.0 && self.x_m < side_m, "x_m", self.x_m, "must lie strictly inside the cavity")?;
        require(self.y_m > 0.0 && self.y_m < side_m, "y_m", self.y_m, "must lie strictly inside the cavity")?;
        require(self.carrier_hz > 0.0, "carrier_hz", self.carrier_hz, "must be positive")?;
        require(self.duration_s > 0.0, "duration_s", self.duration_s, "must be positive")?;
        require(self.amplitude.is_finite(), "amplitude", self.amplitude, "must be finite")?;
        Ok(())
    }

    /// Standard deviation of the Gaussian envelope in time.
    pub fn sigma_t(&self) -> f64 {
        self.duration_s / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }

    /// Standard deviation of the pulse spectrum around the carrier, in Hz.
    pub fn sigma_f(&self) -> f64 {
        1.0 / (2.0 * PI * self.sigma_t())
    }

    /// Relative spectral weight of frequency `f_hz` in the pulse.
    pub fn spectral_weight(&self, f_hz: f64) -> f64 {
        let d = (f_hz - self.carrier_hz) / self.sigma_f();
        (-0.5 * d * d).exp()
    }

    /// Delay between simulation start and the envelope peak of the injected
    /// pulse; the forcing window spans twice this delay.
    pub fn peak_delay_s(&self) -> f64 {
        4.0 * self.sigma_t()
    }

    /// Drive signal at time `t` from simulation start.
    pub fn signal(&self, t: f64) -> f64 {
        let tau = t - self.peak_delay_s();
        if t < 0.0 || tau > self.peak_delay_s() {
            return 0.0;
        }
        let s = self.sigma_t();
        self.amplitude * (-0.5 * tau * tau / (s * s)).exp() * (2.0 * PI * self.carrier_hz * tau).cos()
    }
}

/// Uniform square grid over the cavity, boundary nodes included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    pub dt_s: f64,
    pub t_end_s: f64,
}

pub const MIN_GRID_POINTS: usize = 16;
pub const DEFAULT_GRID_POINTS: usize = 80;
pub const DEFAULT_SAFETY: f64 = 0.9;

impl GridSpec {
    /// Grid with the largest stable time step scaled by `safety`.
    pub fn stable(points: usize, medium: &Medium, t_end_s: f64, safety: f64) -> Result<Self> {
        let mut g = GridSpec {
            points,
            dt_s: 0.0,
            t_end_s,
        };
        g.dt_s = stable_time_step(&g, medium, safety)?;
        Ok(g)
    }

    pub fn dx(&self, side_m: f64) -> f64 {
        side_m / (self.points as f64 - 1.0)
    }

    pub fn coordinate(&self, side_m: f64, index: usize) -> f64 {
        index as f64 * self.dx(side_m)
    }

    /// Nearest grid index to coordinate `x`.
    pub fn nearest_index(&self, side_m: f64, x: f64) -> usize {
        let i = (x / self.dx(side_m)).round();
        (i.max(0.0) as usize).min(self.points - 1)
    }

    pub fn steps(&self) -> usize {
        (self.t_end_s / self.dt_s).ceil() as usize
    }

    pub fn validate(&self, medium: &Medium) -> Result<()> {
        require(
            self.points >= MIN_GRID_POINTS,
            "points",
            self.points as f64,
            "grid needs at least 16 points per side",
        )?;
        require(self.t_end_s >= 0.0, "t_end_s", self.t_end_s, "must be nonnegative")?;
        let limit = stable_time_step(self, medium, 1.0)?;
        require(
            self.dt_s > 0.0 && self.dt_s <= limit * (1.0 + 1e-12),
            "dt_s",
            self.dt_s,
            "must be positive and within the explicit stability limit",
        )?;
        Ok(())
    }
}

/// Largest stable leapfrog step, scaled by `safety`.
///
/// Plate: the squared 5-point Laplacian has spectral radius ≤ 64/dx⁴, so
/// ω_max = 8a/dx² and dt ≤ dx²/(4a). Membrane: dt ≤ dx/(c√2).
pub fn stable_time_step(grid: &GridSpec, medium: &Medium, safety: f64) -> Result<f64> {
    require(safety > 0.0 && safety <= 1.0, "safety", safety, "must lie in (0, 1]")?;
    let dx = grid.dx(medium.side_m());
    Ok(match medium.dispersion()? {
        Dispersion::Plate { a } => safety * dx * dx / (4.0 * a),
        Dispersion::Membrane { c } => safety * dx / (c * std::f64::consts::SQRT_2),
    })
}

/// Revival-time divisor from the source's symmetry: 8 at the centre,
/// 3 at one or two thirds of the main diagonal, 1 elsewhere.
///
/// The test is carried out on the source position reduced into the
/// fundamental triangle of the square, so all eight square symmetries give
/// the same answer. Matching uses half a grid cell of tolerance, but never
/// less than one percent of the side so that positions quoted to two
/// decimals (0.66 L) still match.
pub fn symmetry_factor(src: &SourceSpec, side_m: f64, dx: f64) -> u32 {
    let fold = |v: f64| v.min(side_m - v);
    let (mut u, mut v) = (fold(src.x_m), fold(src.y_m));
    if u > v {
        std::mem::swap(&mut u, &mut v);
    }
    let tol = (0.5 * dx).max(0.01 * side_m);
    let near = |p: f64, q: f64| (u - p).abs() <= tol && (v - q).abs() <= tol;
    if near(0.5 * side_m, 0.5 * side_m) {
        8
    } else if near(side_m / 3.0, side_m / 3.0) {
        3
    } else {
        1
    }
}
