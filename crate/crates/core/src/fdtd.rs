//! Explicit finite-difference time stepping of the Kirchhoff-Love plate
//! (∂²w/∂t² = −a²Δ²w + f) and of the membrane (∂²w/∂t² = c²Δw + f).
//!
//! Space uses the 13-point biharmonic stencil (or the 5-point Laplacian)
//! on a uniform grid whose outer ring of nodes is the cavity edge, held at
//! w = 0. The biharmonic stencil reaches one node beyond the edge; that
//! ghost value is the mirror (clamped) or anti-mirror (simply supported)
//! of the first interior node. Time uses the central-difference leapfrog.

use ndarray::Array2;
use thiserror::Error;

use crate::model::{BoundaryCondition, Dispersion, GridSpec, Medium, ModelError, SourceSpec};
use crate::movie::{FieldMovie, ProbeSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdtdError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("numerical instability at step {step} (t = {time_s:e} s)")]
    Instability { step: u64, time_s: f64 },
    #[error("grid too small for the stencil: {0} points per side")]
    GridTooSmall(usize),
    #[error("source at ({x_m}, {y_m}) m touches the cavity edge")]
    SourceOnBoundary { x_m: f64, y_m: f64 },
    #[error("probe ({0}, {1}) is not an interior node")]
    ProbeNotInterior(usize, usize),
    #[error("snapshot stride {stride} does not divide the {points}-point grid")]
    StrideMismatch { points: usize, stride: usize },
    #[error("forcing shape {0:?} does not match the grid")]
    ForcingShape((usize, usize)),
}

pub type Result<T> = std::result::Result<T, FdtdError>;

/// Magnitude beyond which a field is treated as diverged.
const BLOWUP: f64 = 1e150;

/// Copies `w` into a buffer padded by one ghost layer on every side and
/// fills the ghosts. `ghost_sign` is +1 (mirror) or −1 (anti-mirror).
/// Edge nodes of the copy are forced to zero.
fn fill_padded(w: &Array2<f64>, ghost_sign: f64, pad: &mut Vec<f64>) {
    let n = w.nrows();
    let s = n + 2;
    pad.clear();
    pad.resize(s * s, 0.0);
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            pad[(i + 1) * s + j + 1] = w[[i, j]];
        }
    }
    // x ghosts, then y ghosts (corners follow from the sequential rule)
    for j in 0..n {
        pad[j + 1] = ghost_sign * pad[2 * s + j + 1];
        pad[(n + 1) * s + j + 1] = ghost_sign * pad[(n - 1) * s + j + 1];
    }
    for i in 0..s {
        pad[i * s] = ghost_sign * pad[i * s + 2];
        pad[i * s + n + 1] = ghost_sign * pad[i * s + n - 1];
    }
}

/// 13-point stencil on a padded buffer at interior node (i, j), unscaled.
#[inline]
fn stencil13(pad: &[f64], s: usize, i: usize, j: usize) -> f64 {
    let c = (i + 1) * s + j + 1;
    20.0 * pad[c] - 8.0 * (pad[c - s] + pad[c + s] + pad[c - 1] + pad[c + 1])
        + 2.0 * (pad[c - s - 1] + pad[c - s + 1] + pad[c + s - 1] + pad[c + s + 1])
        + (pad[c - 2 * s] + pad[c + 2 * s] + pad[c - 2] + pad[c + 2])
}

#[inline]
fn stencil5(pad: &[f64], s: usize, i: usize, j: usize) -> f64 {
    let c = (i + 1) * s + j + 1;
    pad[c - s] + pad[c + s] + pad[c - 1] + pad[c + 1] - 4.0 * pad[c]
}

/// Discrete Δ²w with the ghost rule of `bc`; edge nodes of the result are zero.
pub fn biharmonic_apply(w: &Array2<f64>, bc: BoundaryCondition, dx: f64) -> Result<Array2<f64>> {
    let n = w.nrows();
    if n < 5 || w.ncols() != n {
        return Err(FdtdError::GridTooSmall(n.min(w.ncols())));
    }
    let mut pad = Vec::new();
    fill_padded(w, bc.ghost_sign(), &mut pad);
    let scale = 1.0 / dx.powi(4);
    let mut out = Array2::zeros((n, n));
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            out[[i, j]] = scale * stencil13(&pad, n + 2, i, j);
        }
    }
    Ok(out)
}

/// Discrete Δw with w = 0 on the edge; edge nodes of the result are zero.
pub fn laplacian_apply(w: &Array2<f64>, dx: f64) -> Result<Array2<f64>> {
    let n = w.nrows();
    if n < 3 || w.ncols() != n {
        return Err(FdtdError::GridTooSmall(n.min(w.ncols())));
    }
    let mut pad = Vec::new();
    fill_padded(w, 0.0, &mut pad);
    let scale = 1.0 / (dx * dx);
    let mut out = Array2::zeros((n, n));
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            out[[i, j]] = scale * stencil5(&pad, n + 2, i, j);
        }
    }
    Ok(out)
}

/// Two time levels of the leapfrog scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub prev: Array2<f64>,
    pub curr: Array2<f64>,
    pub step: u64,
    pub time_s: f64,
}

impl FieldState {
    pub fn zeros(points: usize) -> Self {
        FieldState {
            prev: Array2::zeros((points, points)),
            curr: Array2::zeros((points, points)),
            step: 0,
            time_s: 0.0,
        }
    }

    /// Starts from displacement `w` at rest: w(−dt) = w(0).
    pub fn at_rest(w: Array2<f64>) -> Self {
        FieldState {
            prev: w.clone(),
            curr: w,
            step: 0,
            time_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kernel {
    Plate { a2: f64, bc: BoundaryCondition },
    Membrane { c2: f64 },
}

/// Leapfrog integrator for one medium on one grid.
pub struct Stepper {
    kernel: Kernel,
    points: usize,
    dx: f64,
    dt: f64,
    pad: Vec<f64>,
    next: Array2<f64>,
}

impl Stepper {
    pub fn new(medium: &Medium, grid: &GridSpec) -> Result<Self> {
        medium.validate()?;
        if grid.points < 5 {
            return Err(FdtdError::GridTooSmall(grid.points));
        }
        let kernel = match (medium.dispersion()?, medium.boundary()) {
            (Dispersion::Plate { a }, Some(bc)) => Kernel::Plate { a2: a * a, bc },
            (Dispersion::Membrane { c }, _) => Kernel::Membrane { c2: c * c },
            (Dispersion::Plate { .. }, None) => unreachable!("plates carry a boundary"),
        };
        Ok(Stepper {
            kernel,
            points: grid.points,
            dx: grid.dx(medium.side_m()),
            dt: grid.dt_s,
            pad: Vec::new(),
            next: Array2::zeros((grid.points, grid.points)),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Stiffness operator K with w'' = −K w + f: a²Δ² for the plate, −c²Δ
    /// for the membrane.
    pub fn stiffness(&mut self, w: &Array2<f64>) -> Array2<f64> {
        let n = self.points;
        let (sign, scale) = self.fill(w);
        let mut out = Array2::zeros((n, n));
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                out[[i, j]] = scale * self.apply_at(i, j) * sign;
            }
        }
        out
    }

    fn fill(&mut self, w: &Array2<f64>) -> (f64, f64) {
        match self.kernel {
            Kernel::Plate { a2, bc } => {
                fill_padded(w, bc.ghost_sign(), &mut self.pad);
                (1.0, a2 / self.dx.powi(4))
            }
            Kernel::Membrane { c2 } => {
                fill_padded(w, 0.0, &mut self.pad);
                (-1.0, c2 / (self.dx * self.dx))
            }
        }
    }

    #[inline]
    fn apply_at(&self, i: usize, j: usize) -> f64 {
        match self.kernel {
            Kernel::Plate { .. } => stencil13(&self.pad, self.points + 2, i, j),
            Kernel::Membrane { .. } => stencil5(&self.pad, self.points + 2, i, j),
        }
    }

    fn advance(&mut self, state: &mut FieldState, force: impl Fn(usize, usize) -> f64) -> Result<()> {
        let n = self.points;
        let (sign, scale) = self.fill(&state.curr);
        let dt2 = self.dt * self.dt;
        let mut peak = 0.0f64;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let k = sign * scale * self.apply_at(i, j);
                let v = 2.0 * state.curr[[i, j]] - state.prev[[i, j]] + dt2 * (force(i, j) - k);
                self.next[[i, j]] = v;
                peak = peak.max(v.abs());
            }
        }
        state.step += 1;
        state.time_s = state.step as f64 * self.dt;
        if !peak.is_finite() || peak > BLOWUP {
            return Err(FdtdError::Instability {
                step: state.step,
                time_s: state.time_s,
            });
        }
        // rotate buffers: prev <- curr <- next
        std::mem::swap(&mut state.prev, &mut state.curr);
        std::mem::swap(&mut state.curr, &mut self.next);
        Ok(())
    }

    /// One leapfrog step with a distributed acceleration source.
    pub fn step(&mut self, state: &mut FieldState, forcing: Option<&Array2<f64>>) -> Result<()> {
        match forcing {
            Some(f) => {
                if f.dim() != (self.points, self.points) {
                    return Err(FdtdError::ForcingShape(f.dim()));
                }
                self.advance(state, |i, j| f[[i, j]])
            }
            None => self.advance(state, |_, _| 0.0),
        }
    }

    /// One step with acceleration `value · weight` at a few nodes.
    pub fn step_point(&mut self, state: &mut FieldState, nodes: &[(usize, usize, f64)], value: f64) -> Result<()> {
        self.advance(state, |i, j| {
            nodes
                .iter()
                .filter(|(a, b, _)| *a == i && *b == j)
                .map(|(_, _, w)| w * value)
                .sum()
        })
    }

    /// Discrete energy Σ((w⁺−w)/dt)² + ⟨w⁺, K w⟩, exactly conserved by the
    /// leapfrog scheme without forcing. Evaluated on the last two levels.
    pub fn energy(&mut self, state: &FieldState) -> f64 {
        let k_prev = self.stiffness(&state.prev);
        let mut kinetic = 0.0;
        let mut potential = 0.0;
        for ((c, p), kp) in state.curr.iter().zip(state.prev.iter()).zip(k_prev.iter()) {
            let v = (c - p) / self.dt;
            kinetic += v * v;
            potential += c * kp;
        }
        kinetic + potential
    }
}

/// Where full-rate probe series are recorded and how often snapshots are kept.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeSet {
    pub positions: Vec<(usize, usize)>,
    /// Keep one snapshot every `decimation` steps; 0 disables snapshots.
    pub decimation: usize,
    /// Snapshots keep every `stride`-th node per axis (0 or 1 keeps all);
    /// points − 1 must be a multiple of the stride.
    pub stride: usize,
}

/// Snapshot decimation that samples the pulse band (carrier + 3σ) at four
/// points per period or better.
pub fn default_decimation(dt_s: f64, src: &SourceSpec) -> usize {
    let f_top = src.carrier_hz + 3.0 * src.sigma_f();
    ((1.0 / (4.0 * f_top)) / dt_s).floor().max(1.0) as usize
}

/// Bilinear split of a point source over the enclosing grid cell.
/// Every node receiving weight must be interior.
pub fn source_nodes(src: &SourceSpec, side_m: f64, grid: &GridSpec) -> Result<Vec<(usize, usize, f64)>> {
    let dx = grid.dx(side_m);
    let fx = src.x_m / dx;
    let fy = src.y_m / dx;
    let (i0, j0) = (fx.floor(), fy.floor());
    let (wx, wy) = (fx - i0, fy - j0);
    let mut nodes = Vec::with_capacity(4);
    for (di, wi) in [(0usize, 1.0 - wx), (1, wx)] {
        for (dj, wj) in [(0usize, 1.0 - wy), (1, wy)] {
            let w = wi * wj;
            if w <= 1e-12 {
                continue;
            }
            let (i, j) = (i0 as i64 + di as i64, j0 as i64 + dj as i64);
            let last = grid.points as i64 - 1;
            if i < 1 || j < 1 || i >= last || j >= last {
                return Err(FdtdError::SourceOnBoundary {
                    x_m: src.x_m,
                    y_m: src.y_m,
                });
            }
            nodes.push((i as usize, j as usize, w));
        }
    }
    Ok(nodes)
}

/// Drives the cavity with the source pulse and records the movie.
///
/// The pulse is injected as an acceleration density (weight / dx²) over
/// the bilinear source nodes. Frame times run from the start of the
/// simulation; the pulse envelope peaks at [`SourceSpec::peak_delay_s`].
pub fn run_simulation(medium: &Medium, src: &SourceSpec, grid: &GridSpec, probes: &ProbeSet) -> Result<FieldMovie> {
    let side = medium.side_m();
    src.validate(side)?;
    grid.validate(medium)?;
    let dx = grid.dx(side);
    let nodes: Vec<_> = source_nodes(src, side, grid)?
        .into_iter()
        .map(|(i, j, w)| (i, j, w / (dx * dx)))
        .collect();
    let last = grid.points - 1;
    for &(i, j) in &probes.positions {
        if i == 0 || j == 0 || i >= last || j >= last {
            return Err(FdtdError::ProbeNotInterior(i, j));
        }
    }
    let stride = probes.stride.max(1);
    if !(grid.points - 1).is_multiple_of(stride) {
        return Err(FdtdError::StrideMismatch { points: grid.points, stride });
    }
    let mut stepper = Stepper::new(medium, grid)?;
    let mut state = FieldState::zeros(grid.points);
    let steps = grid.steps();
    let mut times = Vec::new();
    let mut frames = Vec::new();
    let mut series: Vec<ProbeSeries> = probes
        .positions
        .iter()
        .map(|&(i, j)| ProbeSeries {
            i,
            j,
            dt_s: grid.dt_s,
            samples: Vec::with_capacity(steps + 1),
        })
        .collect();
    let record = |state: &FieldState, times: &mut Vec<f64>, frames: &mut Vec<Array2<f64>>, series: &mut Vec<ProbeSeries>| {
        for p in series.iter_mut() {
            p.samples.push(state.curr[[p.i, p.j]]);
        }
        if probes.decimation > 0 && (state.step as usize).is_multiple_of(probes.decimation) {
            times.push(state.time_s);
            frames.push(if stride > 1 {
                state.curr.slice(ndarray::s![..;stride, ..;stride]).to_owned()
            } else {
                state.curr.clone()
            });
        }
    };
    record(&state, &mut times, &mut frames, &mut series);
    for _ in 0..steps {
        let drive = src.signal(state.time_s);
        if drive != 0.0 {
            stepper.step_point(&mut state, &nodes, drive)?;
        } else {
            stepper.step(&mut state, None)?;
        }
        record(&state, &mut times, &mut frames, &mut series);
    }
    let mut movie = FieldMovie::new(times, frames);
    movie.probes = series;
    Ok(movie)
}
