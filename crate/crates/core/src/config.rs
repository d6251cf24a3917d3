//! Run configuration and the built-in experiment presets.
//!
//! Configs are TOML. Every physical quantity carries its unit in the key
//! name, e.g. `thickness_m` or `carrier_hz`.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{DetectionParams, DEFAULT_COMMENSURABILITY_TOL, DEFAULT_MIN_EXCESS};
use crate::model::{
    BoundaryCondition, GridSpec, Medium, MembraneSpec, ModelError, PlateSpec, SourceSpec, DEFAULT_GRID_POINTS,
    DEFAULT_SAFETY, MIN_GRID_POINTS,
};
use crate::spectral::{DEFAULT_EIGEN_NODE_TOL, DEFAULT_NOISE_FLOOR};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot write config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{key}: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("override {key}: {reason}")]
    Override { key: String, reason: String },
    #[error("unknown preset `{0}` (expected center, diagonal-third, arbitrary, membrane or simply-supported-oracle)")]
    UnknownPreset(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Modal,
    Fdtd,
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "modal" => Ok(Engine::Modal),
            "fdtd" => Ok(Engine::Fdtd),
            other => Err(format!("unknown engine `{other}` (expected modal or fdtd)")),
        }
    }
}

/// Spatial and temporal sampling.
///
/// Maps (movies, envelopes, C(t)) live on a `map_points` × `map_points`
/// grid. The finite-difference solver runs on a grid refined `oversample`
/// times per axis whose every `oversample`-th node is a map node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub map_points: usize,
    pub oversample: usize,
    pub t_end_s: f64,
    pub safety: f64,
    /// Snapshot interval of the modal engine; 0 picks four samples per
    /// period of the top of the pulse band.
    #[serde(default)]
    pub frame_interval_s: f64,
}

pub const DEFAULT_OVERSAMPLE: usize = 4;
pub const DEFAULT_T_END_S: f64 = 600.0e-6;

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            map_points: DEFAULT_GRID_POINTS,
            oversample: DEFAULT_OVERSAMPLE,
            t_end_s: DEFAULT_T_END_S,
            safety: DEFAULT_SAFETY,
            frame_interval_s: 0.0,
        }
    }
}

impl GridConfig {
    pub fn solver_points(&self) -> usize {
        (self.map_points - 1) * self.oversample.max(1) + 1
    }

    /// Time-stepping grid, extended by the pulse lead-in so that `t_end_s`
    /// is reached after the pulse peak.
    pub fn solver_grid(&self, medium: &Medium, src: &SourceSpec) -> std::result::Result<GridSpec, ModelError> {
        GridSpec::stable(self.solver_points(), medium, self.t_end_s + src.peak_delay_s(), self.safety)
    }

    /// Grid of the output maps (time step unused).
    pub fn map_grid(&self) -> GridSpec {
        GridSpec {
            points: self.map_points,
            dt_s: 1.0,
            t_end_s: self.t_end_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Full width at half maximum of the Gaussian bandpass; 0 uses the
    /// pulse's own spectral width.
    pub bandwidth_hz: f64,
    /// Events are searched after this time (from the pulse peak).
    pub t_min_s: f64,
    pub k_prominence: f64,
    pub min_separation_s: f64,
    /// Image disk radius; 0 uses 1.5 carrier wavelengths.
    pub spot_radius_m: f64,
    pub min_excess: f64,
    pub mode_count: usize,
    pub eigen_points: usize,
    pub node_tol: f64,
    pub noise_floor: f64,
    pub commensurability_tol: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let det = DetectionParams::default();
        AnalysisConfig {
            bandwidth_hz: 0.0,
            t_min_s: 30.0e-6,
            k_prominence: det.k_prominence,
            min_separation_s: det.min_separation_s,
            spot_radius_m: 0.0,
            min_excess: DEFAULT_MIN_EXCESS,
            mode_count: 15,
            eigen_points: DEFAULT_GRID_POINTS,
            node_tol: DEFAULT_EIGEN_NODE_TOL,
            noise_floor: DEFAULT_NOISE_FLOOR,
            commensurability_tol: DEFAULT_COMMENSURABILITY_TOL,
        }
    }
}

pub const SPOT_RADIUS_WAVELENGTHS: f64 = 1.5;

impl AnalysisConfig {
    pub fn detection(&self) -> DetectionParams {
        DetectionParams {
            k_prominence: self.k_prominence,
            min_separation_s: self.min_separation_s,
        }
    }

    pub fn effective_bandwidth_hz(&self, src: &SourceSpec) -> f64 {
        if self.bandwidth_hz > 0.0 {
            self.bandwidth_hz
        } else {
            2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * src.sigma_f()
        }
    }

    pub fn effective_spot_radius_m(&self, medium: &Medium, src: &SourceSpec) -> std::result::Result<f64, ModelError> {
        if self.spot_radius_m > 0.0 {
            return Ok(self.spot_radius_m);
        }
        let k = medium.dispersion()?.wavenumber(2.0 * std::f64::consts::PI * src.carrier_hz);
        Ok(SPOT_RADIUS_WAVELENGTHS * 2.0 * std::f64::consts::PI / k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub engine: Engine,
    pub output_dir: PathBuf,
    pub medium: Medium,
    pub source: SourceSpec,
    pub grid: GridConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let plate = PlateSpec::default();
        RunConfig {
            preset: None,
            engine: Engine::Fdtd,
            output_dir: PathBuf::from("out"),
            medium: plate.into(),
            source: SourceSpec::at_fraction(plate.side_m, 0.5, 0.5),
            grid: GridConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Replaces one key, addressed by a dotted path such as
    /// `source.carrier_hz`. Values use TOML syntax; bare words are strings.
    pub fn set(&mut self, path: &str, value: &str) -> Result<()> {
        let fail = |reason: String| ConfigError::Override {
            key: path.to_string(),
            reason,
        };
        let parsed = match format!("v = {value}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.to_string())),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let mut root = toml::Value::try_from(&*self)?;
        let mut node = &mut root;
        let mut parts = path.split('.').peekable();
        while let Some(part) = parts.next() {
            let table = node.as_table_mut().ok_or_else(|| fail(format!("`{part}` is not inside a section")))?;
            if parts.peek().is_none() {
                if !table.contains_key(part) && part != "preset" && part != "frame_interval_s" {
                    return Err(fail("no such key".to_string()));
                }
                table.insert(part.to_string(), parsed);
                break;
            }
            node = table.get_mut(part).ok_or_else(|| fail(format!("no section `{part}`")))?;
        }
        *self = root.try_into().map_err(|e: toml::de::Error| fail(e.message().to_string()))?;
        Ok(())
    }

    pub fn side_m(&self) -> f64 {
        self.medium.side_m()
    }

    /// Checks consistency and reports the first problem with the key it
    /// concerns.
    pub fn validate(&self) -> Result<()> {
        self.medium.validate()?;
        self.source.validate(self.side_m())?;
        let g = &self.grid;
        if g.map_points < MIN_GRID_POINTS {
            return Err(invalid("grid.map_points", format!("must be at least {MIN_GRID_POINTS}")));
        }
        if g.oversample == 0 {
            return Err(invalid("grid.oversample", "must be at least 1"));
        }
        if g.t_end_s.is_nan() || g.t_end_s < 0.0 {
            return Err(invalid("grid.t_end_s", "must be nonnegative"));
        }
        if !(g.safety > 0.0 && g.safety <= 1.0) {
            return Err(invalid("grid.safety", "must lie in (0, 1]; values above 1 are unstable"));
        }
        if g.frame_interval_s < 0.0 {
            return Err(invalid("grid.frame_interval_s", "must be nonnegative"));
        }
        let dx = self.side_m() / (g.solver_points() as f64 - 1.0);
        let (fx, fy) = (self.source.x_m / dx, self.source.y_m / dx);
        let last = (g.solver_points() - 1) as f64;
        if fx < 1.0 || fy < 1.0 || fx.ceil() > last - 1.0 || fy.ceil() > last - 1.0 {
            return Err(invalid("source", "source must sit at least one solver cell inside the edge"));
        }
        let a = &self.analysis;
        if a.bandwidth_hz < 0.0 {
            return Err(invalid("analysis.bandwidth_hz", "must be nonnegative"));
        }
        if a.k_prominence <= 0.0 {
            return Err(invalid("analysis.k_prominence", "must be positive"));
        }
        if a.spot_radius_m < 0.0 {
            return Err(invalid("analysis.spot_radius_m", "must be nonnegative"));
        }
        if a.eigen_points < 8 {
            return Err(invalid("analysis.eigen_points", "must be at least 8"));
        }
        if a.mode_count < 3 {
            return Err(invalid("analysis.mode_count", "need at least 3 modes for a spacing report"));
        }
        if !(0.0..1.0).contains(&a.noise_floor) {
            return Err(invalid("analysis.noise_floor", "must lie in [0, 1)"));
        }
        if a.commensurability_tol <= 0.0 {
            return Err(invalid("analysis.commensurability_tol", "must be positive"));
        }
        if self.engine == Engine::Modal {
            match self.medium {
                Medium::Plate(p) if p.boundary == BoundaryCondition::Clamped => {
                    return Err(invalid(
                        "engine",
                        "the modal engine needs closed-form modes: use a simply supported plate or a membrane",
                    ))
                }
                _ => {}
            }
        }
        self.medium.dispersion()?;
        Ok(())
    }
}

pub const PRESETS: [&str; 5] = ["center", "diagonal-third", "arbitrary", "membrane", "simply-supported-oracle"];

/// Built-in experiment by name.
pub fn preset(name: &str) -> Result<RunConfig> {
    let plate = PlateSpec::default();
    let side = plate.side_m;
    let base = RunConfig {
        preset: Some(name.to_string()),
        output_dir: PathBuf::from(format!("out/{name}")),
        ..RunConfig::default()
    };
    let cfg = match name {
        "center" => RunConfig {
            source: SourceSpec::at_fraction(side, 0.5, 0.5),
            ..base
        },
        "diagonal-third" => RunConfig {
            source: SourceSpec::at_fraction(side, 2.0 / 3.0, 2.0 / 3.0),
            ..base
        },
        "arbitrary" => RunConfig {
            source: SourceSpec::at_fraction(side, 0.83, 0.32),
            ..base
        },
        "membrane" => RunConfig {
            medium: MembraneSpec::default().into(),
            source: SourceSpec::at_fraction(side, 2.0 / 3.0, 2.0 / 3.0),
            ..base
        },
        "simply-supported-oracle" => RunConfig {
            engine: Engine::Modal,
            medium: plate.with_boundary(BoundaryCondition::SimplySupported).into(),
            source: SourceSpec::at_fraction(side, 0.83, 0.32),
            grid: GridConfig {
                t_end_s: 1.4e-3,
                ..GridConfig::default()
            },
            ..base
        },
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    Ok(cfg)
}
