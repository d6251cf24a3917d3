//! Closed-form modal synthesis for the simply supported plate and the
//! fixed-edge membrane.
//!
//! Both cavities share the eigenfunctions φ_nm(x, y) = sin(nπx/L) sin(mπy/L);
//! only the eigenfrequencies differ. A point source at (x0, y0) excites mode
//! (n, m) in proportion to φ_nm(x0, y0), weighted by the pulse spectrum,
//! and every mode is launched in phase at t = 0. This engine is the exact
//! reference the finite-difference and eigen-solver engines are checked
//! against.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use thiserror::Error;

use crate::model::{BoundaryCondition, GridSpec, Medium, ModelError, SourceSpec};
use crate::movie::FieldMovie;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("clamped plates have no closed-form modes; use the eigen solver or the FDTD engine")]
    NoClosedForm,
    #[error("no mode below the truncation frequency {0} Hz")]
    EmptyExpansion(f64),
    #[error("mode indices must be positive, got ({0}, {1})")]
    InvalidIndex(u32, u32),
}

pub type Result<T> = std::result::Result<T, ModalError>;

/// Half-wave counts along x and y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeIndex {
    pub n: u32,
    pub m: u32,
}

impl ModeIndex {
    pub fn new(n: u32, m: u32) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(ModalError::InvalidIndex(n, m));
        }
        Ok(ModeIndex { n, m })
    }

    /// n² + m², the integer that fixes the plate frequency.
    pub fn norm2(&self) -> u64 {
        let (n, m) = (u64::from(self.n), u64::from(self.m));
        n * n + m * m
    }

    /// Mode shape sin(nπx/L) sin(mπy/L).
    pub fn shape(&self, side_m: f64, x: f64, y: f64) -> f64 {
        (f64::from(self.n) * PI * x / side_m).sin() * (f64::from(self.m) * PI * y / side_m).sin()
    }
}

/// ω_nm = aπ²(n²+m²)/L² for the simply supported plate.
pub fn ss_plate_frequency(idx: ModeIndex, a: f64, side_m: f64) -> f64 {
    a * PI * PI * idx.norm2() as f64 / (side_m * side_m)
}

/// ω_nm = cπ√(n²+m²)/L for the fixed-edge membrane.
pub fn membrane_frequency(idx: ModeIndex, c: f64, side_m: f64) -> f64 {
    c * PI * (idx.norm2() as f64).sqrt() / side_m
}

/// Angular frequency of a mode in `medium`.
pub fn mode_frequency(idx: ModeIndex, medium: &Medium) -> Result<f64> {
    match medium {
        Medium::Plate(p) => {
            if p.boundary != BoundaryCondition::SimplySupported {
                return Err(ModalError::NoClosedForm);
            }
            Ok(ss_plate_frequency(idx, p.flexural_coefficient()?, p.side_m))
        }
        Medium::Membrane(m) => {
            m.validate()?;
            Ok(membrane_frequency(idx, m.wave_speed_m_s, m.side_m))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub index: ModeIndex,
    /// rad/s
    pub omega: f64,
    /// φ_nm(x0, y0)
    pub source_shape: f64,
    /// φ_nm(x0, y0) · G(ω_nm)
    pub coefficient: f64,
    /// Mode term is coefficient · cos(ωt + phase).
    pub phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalExpansion {
    /// Sorted by ascending ω.
    pub modes: Vec<Mode>,
    pub source: SourceSpec,
    pub side_m: f64,
    pub truncation_hz: f64,
}

pub const DEFAULT_NODE_TOL: f64 = 1e-6;

/// 1.2 × carrier plus three spectral standard deviations of the pulse.
pub fn default_truncation_hz(src: &SourceSpec) -> f64 {
    1.2 * src.carrier_hz + 3.0 * src.sigma_f()
}

/// Collects every mode below `truncation_hz` that the source excites.
///
/// Modes whose shape at the source is below `node_tol` (the shape maximum
/// is one) are dropped: a source on a nodal line does not excite them.
pub fn build_expansion(
    src: &SourceSpec,
    medium: &Medium,
    truncation_hz: f64,
    node_tol: f64,
) -> Result<ModalExpansion> {
    medium.validate()?;
    let side = medium.side_m();
    src.validate(side)?;
    let omega_max = 2.0 * PI * truncation_hz;
    let mut modes = Vec::new();
    let mut n = 1u32;
    while mode_frequency(ModeIndex { n, m: 1 }, medium)? <= omega_max {
        let mut m = 1u32;
        loop {
            let index = ModeIndex { n, m };
            let omega = mode_frequency(index, medium)?;
            if omega > omega_max {
                break;
            }
            let source_shape = index.shape(side, src.x_m, src.y_m);
            if source_shape.abs() >= node_tol {
                let weight = src.spectral_weight(omega / (2.0 * PI));
                modes.push(Mode {
                    index,
                    omega,
                    source_shape,
                    coefficient: src.amplitude * source_shape * weight,
                    phase_rad: 0.0,
                });
            }
            m += 1;
        }
        n += 1;
    }
    if modes.is_empty() {
        return Err(ModalError::EmptyExpansion(truncation_hz));
    }
    modes.sort_by(|a, b| a.omega.total_cmp(&b.omega).then(a.index.cmp(&b.index)));
    Ok(ModalExpansion {
        modes,
        source: *src,
        side_m: side,
        truncation_hz,
    })
}

impl ModalExpansion {
    /// Displacement response to the source injected as a point acceleration
    /// density, valid once the drive has ended (t measured from the pulse
    /// peak): Σ (4/L²) φ(x) φ(x0) Ŝ(ω)/ω sin(ωt), with Ŝ the spectrum of
    /// the drive signal.
    pub fn driven(&self) -> ModalExpansion {
        let s = self.source.sigma_t();
        let norm = 4.0 / (self.side_m * self.side_m);
        let wc = 2.0 * PI * self.source.carrier_hz;
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let spectrum = 0.5
                    * self.source.amplitude
                    * s
                    * (2.0 * PI).sqrt()
                    * ((-0.5 * ((m.omega - wc) * s).powi(2)).exp() + (-0.5 * ((m.omega + wc) * s).powi(2)).exp());
                Mode {
                    coefficient: norm * m.source_shape * spectrum / m.omega,
                    phase_rad: -0.5 * PI,
                    ..*m
                }
            })
            .collect();
        ModalExpansion {
            modes,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Σ |c_nm|, the bound on what any set of modes can contribute at a point.
    pub fn coefficient_l1(&self) -> f64 {
        self.modes.iter().map(|m| m.coefficient.abs()).sum()
    }

    /// Field at a single point.
    pub fn field_at(&self, x: f64, y: f64, t: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| m.coefficient * m.index.shape(self.side_m, x, y) * (m.omega * t + m.phase_rad).cos())
            .sum()
    }
}

/// Precomputed sine tables for repeated synthesis on one grid.
///
/// The field is separable: w = Sx · A(t) · Syᵀ where A holds c_nm cos(ω_nm t)
/// at (n, m). Cost per frame is O(points² · n_max) instead of
/// O(points² · modes).
pub struct Synthesizer<'a> {
    expansion: &'a ModalExpansion,
    points: usize,
    n_max: usize,
    m_max: usize,
    // [n-1][i] = sin(nπx_i/L)
    sin_x: Array2<f64>,
    sin_y: Array2<f64>,
}

impl<'a> Synthesizer<'a> {
    pub fn new(expansion: &'a ModalExpansion, grid: &GridSpec) -> Self {
        let n_max = expansion.modes.iter().map(|m| m.index.n).max().unwrap_or(1) as usize;
        let m_max = expansion.modes.iter().map(|m| m.index.m).max().unwrap_or(1) as usize;
        let side = expansion.side_m;
        let table = |count: usize| {
            Array2::from_shape_fn((count, grid.points), |(k, i)| {
                let x = grid.coordinate(side, i);
                ((k + 1) as f64 * PI * x / side).sin()
            })
        };
        Synthesizer {
            expansion,
            points: grid.points,
            n_max,
            m_max,
            sin_x: table(n_max),
            sin_y: table(m_max),
        }
    }

    fn combine<T>(&self, amplitude: impl Fn(&Mode) -> T) -> Array2<T>
    where
        T: Copy + Default + std::ops::AddAssign + std::ops::Mul<f64, Output = T>,
    {
        // B[n][j] = Σ_m A[n][m] sin(mπy_j/L)
        let mut coeff = Array2::<T>::from_elem((self.n_max, self.m_max), T::default());
        for mode in &self.expansion.modes {
            let (n, m) = (mode.index.n as usize - 1, mode.index.m as usize - 1);
            coeff[[n, m]] += amplitude(mode);
        }
        let mut partial = Array2::<T>::from_elem((self.n_max, self.points), T::default());
        for n in 0..self.n_max {
            for m in 0..self.m_max {
                let c = coeff[[n, m]];
                for j in 0..self.points {
                    partial[[n, j]] += c * self.sin_y[[m, j]];
                }
            }
        }
        let mut field = Array2::<T>::from_elem((self.points, self.points), T::default());
        for n in 0..self.n_max {
            for i in 0..self.points {
                let s = self.sin_x[[n, i]];
                if s == 0.0 {
                    continue;
                }
                for j in 0..self.points {
                    field[[i, j]] += partial[[n, j]] * s;
                }
            }
        }
        field
    }

    /// Real displacement w(x_i, y_j, t), indexed `[i, j]`.
    pub fn field(&self, t: f64) -> Array2<f64> {
        self.combine(|m| m.coefficient * (m.omega * t + m.phase_rad).cos())
    }

    /// Analytic field Σ c φ e^{-iωt}; its real part is [`field`](Self::field)
    /// and its modulus is the exact envelope.
    pub fn analytic_field(&self, t: f64) -> Array2<Complex64> {
        self.combine(|m| Complex64::from_polar(m.coefficient, -(m.omega * t + m.phase_rad)))
    }

    pub fn movie(&self, times: &[f64]) -> FieldMovie {
        let frames = times.iter().map(|&t| self.field(t)).collect();
        FieldMovie::new(times.to_vec(), frames)
    }

    /// Exact envelope frames |Σ c φ e^{-iωt}|.
    pub fn envelope_frames(&self, times: &[f64]) -> Vec<Array2<f64>> {
        times
            .iter()
            .map(|&t| self.analytic_field(t).mapv(|z| z.norm()))
            .collect()
    }
}

/// Field at time `t` on `grid`.
pub fn synthesize_field(expansion: &ModalExpansion, t: f64, grid: &GridSpec) -> Array2<f64> {
    Synthesizer::new(expansion, grid).field(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MembraneSpec, PlateSpec};
    use approx::assert_relative_eq;

    const L: f64 = 0.04;

    fn ss_plate() -> Medium {
        PlateSpec::default().with_boundary(BoundaryCondition::SimplySupported).into()
    }

    fn a() -> f64 {
        PlateSpec::default().flexural_coefficient().unwrap()
    }

    fn idx(n: u32, m: u32) -> ModeIndex {
        ModeIndex::new(n, m).unwrap()
    }

    #[test]
    fn ss_fundamental() {
        let w = ss_plate_frequency(idx(1, 1), a(), L);
        assert!((w - 9717.0).abs() < 5.0, "{w}");
        assert!((w / (2.0 * PI) - 1546.0).abs() < 1.0);
        let unit_hz = ss_plate_frequency(idx(1, 1), a(), L) / (2.0 * PI) / 2.0;
        assert!((unit_hz - 773.0).abs() < 1.0, "{unit_hz}");
        assert!((unit_hz / 780.0 - 1.0).abs() < 0.01);
        assert_eq!(ss_plate_frequency(idx(2, 1), a(), L), ss_plate_frequency(idx(1, 2), a(), L));
    }

    #[test]
    fn membrane_frequencies() {
        let w = membrane_frequency(idx(1, 1), 1000.0, L);
        assert_relative_eq!(w, 1000.0 * PI * 2f64.sqrt() / L, max_relative = 1e-15);
        assert!((w - 1.111e5).abs() < 100.0);
        assert_relative_eq!(
            membrane_frequency(idx(2, 2), 1000.0, L),
            2.0 * w,
            max_relative = 1e-14
        );
        // √(5/2) is irrational: no small integer ratio fits
        let r = membrane_frequency(idx(1, 2), 1.0, L) / membrane_frequency(idx(1, 1), 1.0, L);
        for q in 1..=1000u32 {
            let p = (r * f64::from(q)).round();
            assert!((r * f64::from(q) - p).abs() > 1e-9, "{p}/{q}");
        }
        assert!(ModeIndex::new(5, 0).is_err());
    }

    #[test]
    fn plate_frequencies_are_integer_multiples() {
        let unit = a() * PI * PI / (L * L);
        for n in 1..30 {
            for m in 1..30 {
                let r = ss_plate_frequency(idx(n, m), a(), L) / unit;
                assert!((r - (n * n + m * m) as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn clamped_has_no_closed_form() {
        let src = SourceSpec::at_fraction(L, 0.5, 0.5);
        let err = build_expansion(&src, &PlateSpec::default().into(), 1e5, 1e-6);
        assert_eq!(err, Err(ModalError::NoClosedForm));
    }

    #[test]
    fn truncation_below_fundamental_is_empty() {
        let src = SourceSpec::at_fraction(L, 0.5, 0.5);
        let err = build_expansion(&src, &ss_plate(), 100.0, 1e-6);
        assert_eq!(err, Err(ModalError::EmptyExpansion(100.0)));
    }

    #[test]
    fn center_source_keeps_odd_odd() {
        let src = SourceSpec::at_fraction(L, 0.5, 0.5).with_carrier(50e3);
        let exp = build_expansion(&src, &ss_plate(), 100e3, DEFAULT_NODE_TOL).unwrap();
        // brute force: every (n, m) with sin(nπ/2) sin(mπ/2) ≠ 0 below cutoff
        let unit_hz = a() * PI / (2.0 * L * L);
        let mut expected = 0;
        for n in 1..200u32 {
            for m in 1..200u32 {
                if (n * n + m * m) as f64 * unit_hz <= 100e3 && n % 2 == 1 && m % 2 == 1 {
                    expected += 1;
                }
            }
        }
        assert_eq!(exp.len(), expected);
        for mode in &exp.modes {
            assert!(mode.index.n % 2 == 1 && mode.index.m % 2 == 1);
            assert_eq!(mode.index.norm2() % 8, 2);
        }
    }

    #[test]
    fn diagonal_third_source_drops_multiples_of_three() {
        let src = SourceSpec::at_fraction(L, 2.0 / 3.0, 2.0 / 3.0).with_carrier(50e3);
        let exp = build_expansion(&src, &ss_plate(), 100e3, DEFAULT_NODE_TOL).unwrap();
        let unit_hz = a() * PI / (2.0 * L * L);
        let mut expected = 0;
        for n in 1..200u32 {
            for m in 1..200u32 {
                if (n * n + m * m) as f64 * unit_hz <= 100e3 && n % 3 != 0 && m % 3 != 0 {
                    expected += 1;
                }
            }
        }
        assert_eq!(exp.len(), expected);
        for mode in &exp.modes {
            assert_eq!(mode.index.norm2() % 3, 2);
        }
    }

    #[test]
    fn arbitrary_source_keeps_everything() {
        let src = SourceSpec::at_fraction(L, 0.83, 0.32).with_carrier(20e3);
        let exp = build_expansion(&src, &ss_plate(), 40e3, DEFAULT_NODE_TOL).unwrap();
        let unit_hz = a() * PI / (2.0 * L * L);
        let mut expected = 0;
        for n in 1..200u32 {
            for m in 1..200u32 {
                if (n * n + m * m) as f64 * unit_hz <= 40e3 {
                    expected += 1;
                }
            }
        }
        assert_eq!(exp.len(), expected);
    }

    #[test]
    fn expansion_sorted_and_commensurable() {
        let src = SourceSpec::at_fraction(L, 0.83, 0.32).with_carrier(60e3);
        let exp = build_expansion(&src, &ss_plate(), 80e3, DEFAULT_NODE_TOL).unwrap();
        let unit = a() * PI * PI / (L * L);
        for pair in exp.modes.windows(2) {
            assert!(pair[0].omega <= pair[1].omega);
            let gap = (pair[1].omega - pair[0].omega) / unit;
            assert!((gap - gap.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn separable_synthesis_matches_pointwise_sum() {
        let src = SourceSpec::at_fraction(L, 0.3, 0.6).with_carrier(80e3);
        let exp = build_expansion(&src, &ss_plate(), 150e3, DEFAULT_NODE_TOL).unwrap();
        let grid = GridSpec { points: 21, dt_s: 1e-7, t_end_s: 1e-4 };
        let t = 37e-6;
        let field = synthesize_field(&exp, t, &grid);
        for i in [0, 3, 10, 17] {
            for j in [1, 5, 20] {
                let x = grid.coordinate(L, i);
                let y = grid.coordinate(L, j);
                let direct = exp.field_at(x, y, t);
                assert!((field[[i, j]] - direct).abs() < 1e-9 * exp.coefficient_l1());
            }
        }
    }

    #[test]
    fn membrane_expansion() {
        let m: Medium = MembraneSpec::default().into();
        let src = SourceSpec::at_fraction(L, 0.3, 0.6).with_carrier(200e3);
        let exp = build_expansion(&src, &m, 300e3, DEFAULT_NODE_TOL).unwrap();
        let c = MembraneSpec::default().wave_speed_m_s;
        for mode in &exp.modes {
            assert_relative_eq!(mode.omega, membrane_frequency(mode.index, c, L), max_relative = 1e-15);
        }
    }

    #[test]
    fn node_tolerance_bound_at_source() {
        let src = SourceSpec::at_fraction(L, 0.5, 0.5).with_carrier(100e3);
        let all = build_expansion(&src, &ss_plate(), 200e3, 0.0).unwrap();
        let tol = DEFAULT_NODE_TOL;
        let kept = build_expansion(&src, &ss_plate(), 200e3, tol).unwrap();
        assert!(kept.len() < all.len());
        for t in [0.0, 13e-6, 90e-6] {
            let d = (all.field_at(src.x_m, src.y_m, t) - kept.field_at(src.x_m, src.y_m, t)).abs();
            assert!(d <= tol * all.coefficient_l1());
        }
    }
}
