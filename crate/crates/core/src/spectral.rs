//! Spectrum of the discrete cavity operator.
//!
//! The stiffness operator K (a²Δ² for the plate, −c²Δ for the membrane) is
//! assembled as a dense symmetric matrix over the interior nodes with the
//! ghost rules folded into the diagonal, then diagonalized. A second route
//! reads eigenfrequencies off a long probe record by peak picking.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::model::{BoundaryCondition, GridSpec, Medium, ModelError, SourceSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("grid of {0} points per side is below the 8 required")]
    GridTooSmall(usize),
    #[error("asked for {asked} eigenpairs of a {dim}-dimensional operator")]
    TooManyModes { asked: usize, dim: usize },
    #[error("eigensolver failed to converge")]
    NoConvergence,
    #[error("no mode is excited by the source at ({x_m}, {y_m}) m")]
    EmptySubset { x_m: f64, y_m: f64 },
    #[error("time series of {0} samples is too short")]
    ShortRecord(usize),
}

pub type Result<T> = std::result::Result<T, SpectralError>;

pub const MIN_OPERATOR_POINTS: usize = 8;
pub const DEFAULT_EIGEN_NODE_TOL: f64 = 1e-3;
pub const DEFAULT_NOISE_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Plate(BoundaryCondition),
    Membrane,
}

/// Dense stiffness matrix on the (points − 2)² interior nodes, node
/// (i, j) at row (i − 1)·(points − 2) + (j − 1).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    pub matrix: Array2<f64>,
    pub points: usize,
    pub dx_m: f64,
    pub kind: OperatorKind,
}

impl DiscreteOperator {
    pub fn interior(&self) -> usize {
        self.points - 2
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Row index of interior node (i, j).
    pub fn row(&self, i: usize, j: usize) -> usize {
        (i - 1) * self.interior() + (j - 1)
    }

    /// K applied to a full-grid field (edges ignored, result edges zero).
    pub fn apply(&self, w: &Array2<f64>) -> Array2<f64> {
        let m = self.interior();
        let v = ndarray::Array1::from_shape_fn(m * m, |r| w[[r / m + 1, r % m + 1]]);
        let kv = self.matrix.dot(&v);
        let mut out = Array2::zeros((self.points, self.points));
        for (r, val) in kv.iter().enumerate() {
            out[[r / m + 1, r % m + 1]] = *val;
        }
        out
    }
}

/// Assembles K with the same stencil and ghost rules as the time stepper.
pub fn assemble(medium: &Medium, grid: &GridSpec) -> Result<DiscreteOperator> {
    medium.validate()?;
    let n = grid.points;
    if n < MIN_OPERATOR_POINTS {
        return Err(SpectralError::GridTooSmall(n));
    }
    let dx = grid.dx(medium.side_m());
    let m = n - 2;
    let mut matrix = Array2::<f64>::zeros((m * m, m * m));
    let (kind, scale, stencil, ghost): (OperatorKind, f64, &[(i64, i64, f64)], f64) = match *medium {
        Medium::Plate(ref p) => {
            let a = p.flexural_coefficient()?;
            (OperatorKind::Plate(p.boundary), a * a / dx.powi(4), &BIHARMONIC, p.boundary.ghost_sign())
        }
        Medium::Membrane(ref mb) => (OperatorKind::Membrane, mb.wave_speed_m_s.powi(2) / (dx * dx), &NEG_LAPLACIAN, 0.0),
    };
    let last = n as i64 - 1;
    // fold a coordinate: interior stays, edge drops, ghost mirrors
    let fold = |c: i64| -> Option<(usize, f64)> {
        if c >= 1 && c < last {
            Some((c as usize, 1.0))
        } else if c == -1 {
            Some((1, ghost))
        } else if c == last + 1 {
            Some((last as usize - 1, ghost))
        } else {
            None
        }
    };
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let row = (i - 1) * m + (j - 1);
            for &(di, dj, w) in stencil {
                let Some((ti, si)) = fold(i as i64 + di) else { continue };
                let Some((tj, sj)) = fold(j as i64 + dj) else { continue };
                let factor = si * sj;
                if factor != 0.0 {
                    matrix[[row, (ti - 1) * m + (tj - 1)]] += scale * w * factor;
                }
            }
        }
    }
    // the folded stencil is symmetric; copy the lower triangle to make it exact
    for r in 0..m * m {
        for c in 0..r {
            matrix[[c, r]] = matrix[[r, c]];
        }
    }
    Ok(DiscreteOperator {
        matrix,
        points: n,
        dx_m: dx,
        kind,
    })
}

const BIHARMONIC: [(i64, i64, f64); 13] = [
    (0, 0, 20.0),
    (1, 0, -8.0),
    (-1, 0, -8.0),
    (0, 1, -8.0),
    (0, -1, -8.0),
    (1, 1, 2.0),
    (1, -1, 2.0),
    (-1, 1, 2.0),
    (-1, -1, 2.0),
    (2, 0, 1.0),
    (-2, 0, 1.0),
    (0, 2, 1.0),
    (0, -2, 1.0),
];

const NEG_LAPLACIAN: [(i64, i64, f64); 5] = [(0, 0, 4.0), (1, 0, -1.0), (-1, 0, -1.0), (0, 1, -1.0), (0, -1, -1.0)];

/// Lowest eigenpairs, ascending. Column k of `vectors` is the unit-norm
/// eigenvector of `frequencies_hz[k]` on the interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSet {
    pub frequencies_hz: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub vectors: Array2<f64>,
    pub points: usize,
    pub dx_m: f64,
}

impl EigenSet {
    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }

    /// Eigenvector `k` on the full grid, edges zero.
    pub fn mode_shape(&self, k: usize) -> Array2<f64> {
        let m = self.points - 2;
        let mut out = Array2::zeros((self.points, self.points));
        for r in 0..m * m {
            out[[r / m + 1, r % m + 1]] = self.vectors[[r, k]];
        }
        out
    }

    /// Bilinear value of eigenvector `k` at (x, y).
    pub fn value_at(&self, k: usize, x_m: f64, y_m: f64) -> f64 {
        let m = self.points - 2;
        let node = |i: usize, j: usize| {
            if i == 0 || j == 0 || i > m || j > m {
                0.0
            } else {
                self.vectors[[(i - 1) * m + (j - 1), k]]
            }
        };
        let (fx, fy) = (x_m / self.dx_m, y_m / self.dx_m);
        let (i0, j0) = (fx.floor().max(0.0) as usize, fy.floor().max(0.0) as usize);
        let (wx, wy) = (fx - i0 as f64, fy - j0 as f64);
        (1.0 - wx) * (1.0 - wy) * node(i0, j0)
            + wx * (1.0 - wy) * node(i0 + 1, j0)
            + (1.0 - wx) * wy * node(i0, j0 + 1)
            + wx * wy * node(i0 + 1, j0 + 1)
    }

    fn max_abs(&self, k: usize) -> f64 {
        self.vectors.column(k).iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    fn select(&self, keep: &[usize]) -> EigenSet {
        let rows = self.vectors.nrows();
        let mut vectors = Array2::zeros((rows, keep.len()));
        for (c, &k) in keep.iter().enumerate() {
            vectors.column_mut(c).assign(&self.vectors.column(k));
        }
        EigenSet {
            frequencies_hz: keep.iter().map(|&k| self.frequencies_hz[k]).collect(),
            eigenvalues: keep.iter().map(|&k| self.eigenvalues[k]).collect(),
            vectors,
            points: self.points,
            dx_m: self.dx_m,
        }
    }

    /// First `count` members.
    pub fn truncate(&self, count: usize) -> EigenSet {
        let keep: Vec<usize> = (0..count.min(self.len())).collect();
        self.select(&keep)
    }

    /// Plain-text table: index, f_Hz, amplitude at the source.
    pub fn write_table(&self, src: &SourceSpec, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "index,f_Hz,amplitude_at_source")?;
        for k in 0..self.len() {
            writeln!(out, "{k},{:.6},{:.6e}", self.frequencies_hz[k], self.value_at(k, src.x_m, src.y_m))?;
        }
        Ok(())
    }
}

/// The `count` smallest eigenpairs by dense symmetric diagonalization.
pub fn eigen_solve(op: &DiscreteOperator, count: usize) -> Result<EigenSet> {
    let dim = op.dim();
    if count > dim {
        return Err(SpectralError::TooManyModes { asked: count, dim });
    }
    // the solver's deflation is not scale free, so work on a unit-scale copy
    let scale = op.matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mat = faer::Mat::<f64>::from_fn(dim, dim, |r, c| op.matrix[[r, c]] / scale);
    let eig = mat
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| SpectralError::NoConvergence)?;
    let values = eig.S().column_vector();
    let vecs = eig.U();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order.truncate(count);
    let mut vectors = Array2::zeros((dim, count));
    for (c, &k) in order.iter().enumerate() {
        for r in 0..dim {
            vectors[[r, c]] = vecs[(r, k)];
        }
    }
    let eigenvalues: Vec<f64> = order.iter().map(|&k| (values[k] * scale).max(0.0)).collect();
    Ok(EigenSet {
        frequencies_hz: eigenvalues.iter().map(|l| l.sqrt() / (2.0 * PI)).collect(),
        eigenvalues,
        vectors,
        points: op.points,
        dx_m: op.dx_m,
    })
}

/// Modes whose amplitude at the source is at least `node_tol` of their own
/// peak amplitude; order is preserved.
pub fn excited_subset(es: &EigenSet, src: &SourceSpec, node_tol: f64) -> Result<EigenSet> {
    let keep: Vec<usize> = (0..es.len())
        .filter(|&k| es.value_at(k, src.x_m, src.y_m).abs() >= node_tol * es.max_abs(k))
        .collect();
    if keep.is_empty() {
        return Err(SpectralError::EmptySubset {
            x_m: src.x_m,
            y_m: src.y_m,
        });
    }
    Ok(es.select(&keep))
}

/// Peaks read off a probe spectrum, ascending in frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakList {
    pub frequencies_hz: Vec<f64>,
    pub magnitudes: Vec<f64>,
    /// Fewer than the requested number of peaks cleared the noise floor.
    pub partial: bool,
}

/// The `count` strongest spectral peaks of a real series sampled at `dt_s`.
///
/// The record is Blackman-Harris windowed (sidelobes below −90 dB, so the
/// default floor never admits them) and zero-padded to a power of two at least
/// twice its length; only local maxima above `noise_floor` times the global
/// maximum qualify, and each is refined by a parabola through the log
/// magnitudes of its bin and neighbours.
pub fn frequencies_from_timeseries(samples: &[f64], dt_s: f64, count: usize, noise_floor: f64) -> Result<PeakList> {
    let n = samples.len();
    if n < 16 {
        return Err(SpectralError::ShortRecord(n));
    }
    let len = (2 * n).next_power_of_two();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<num_complex::Complex64> = samples
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let x = 2.0 * PI * k as f64 / (n - 1) as f64;
            let window = 0.35875 - 0.48829 * x.cos() + 0.14128 * (2.0 * x).cos() - 0.01168 * (3.0 * x).cos();
            num_complex::Complex64::new((v - mean) * window, 0.0)
        })
        .collect();
    buf.resize(len, num_complex::Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let mag: Vec<f64> = buf[..=len / 2].iter().map(|z| z.norm()).collect();
    let global = mag.iter().copied().fold(0.0, f64::max);
    let df = 1.0 / (len as f64 * dt_s);
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for k in 1..mag.len() - 1 {
        if mag[k] > mag[k - 1] && mag[k] >= mag[k + 1] && mag[k] >= noise_floor * global && mag[k] > 0.0 {
            let (l, c, r) = (mag[k - 1].max(1e-300).ln(), mag[k].ln(), mag[k + 1].max(1e-300).ln());
            let denom = l - 2.0 * c + r;
            let shift = if denom.abs() > 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            let height = (c - 0.25 * (l - r) * shift).exp();
            peaks.push(((k as f64 + shift) * df, height));
        }
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    let partial = peaks.len() < count;
    peaks.truncate(count);
    peaks.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(PeakList {
        frequencies_hz: peaks.iter().map(|p| p.0).collect(),
        magnitudes: peaks.iter().map(|p| p.1).collect(),
        partial,
    })
}
