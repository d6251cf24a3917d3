//! Engine dispatch, analysis and file exports for one configured run.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::analysis::{
    self, AnalysisError, ConfinementSeries, EnvelopeMovie, ImageGeometry, RevivalEvent, RevivalKind, SpacingReport,
};
use crate::config::{ConfigError, Engine, RunConfig};
use crate::fdtd::{self, FdtdError, ProbeSet};
use crate::modal::{self, ModalError, ModalExpansion, Synthesizer};
use crate::model::{revival_time_theoretical, symmetry_factor, BoundaryCondition, Medium, ModelError};
use crate::movie::{read_raw_frames, write_raw_frames, FieldMovie};
use crate::spectral::{self, EigenSet, SpectralError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fdtd(#[from] FdtdError),
    #[error(transparent)]
    Modal(#[from] ModalError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("engine comparison needs a simply supported plate (set medium.boundary = \"simply-supported\")")]
    NotSimplySupported,
    #[error("movies have different shapes: {0:?} vs {1:?}")]
    GridMismatch((usize, usize), (usize, usize)),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// Process exit status: 2 for configuration problems, 3 for numerical
    /// instability, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Model(_) | RunError::NotSimplySupported | RunError::GridMismatch(..) => 2,
            RunError::Fdtd(FdtdError::Instability { .. }) => 3,
            RunError::Fdtd(FdtdError::Model(_)) | RunError::Modal(ModalError::Model(_)) => 2,
            RunError::Fdtd(_) => 2,
            RunError::Spectral(SpectralError::Model(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;

/// Displacement and envelope movies on the map grid, times from the pulse peak.
pub struct Simulation {
    pub movie: FieldMovie,
    pub envelope: EnvelopeMovie,
}

fn frame_interval(cfg: &RunConfig) -> f64 {
    if cfg.grid.frame_interval_s > 0.0 {
        return cfg.grid.frame_interval_s;
    }
    let top = cfg.source.carrier_hz + 3.0 * cfg.source.sigma_f();
    1.0 / (4.0 * top)
}

fn frame_times(cfg: &RunConfig) -> Vec<f64> {
    let dt = frame_interval(cfg);
    let count = (cfg.grid.t_end_s / dt).floor() as usize + 1;
    (0..count).map(|k| k as f64 * dt).collect()
}

/// Finite-difference run, recorded on the map grid and rebased to the
/// pulse peak. Frames before the peak are dropped.
pub fn run_fdtd(cfg: &RunConfig) -> Result<FieldMovie> {
    let grid = cfg.grid.solver_grid(&cfg.medium, &cfg.source)?;
    let probes = ProbeSet {
        positions: Vec::new(),
        decimation: fdtd::default_decimation(grid.dt_s, &cfg.source),
        stride: cfg.grid.oversample,
    };
    let mut movie = fdtd::run_simulation(&cfg.medium, &cfg.source, &grid, &probes)?;
    movie.rebase_time(cfg.source.peak_delay_s());
    let first = movie.times.partition_point(|&t| t < -1e-12);
    movie.times.drain(..first);
    movie.frames.drain(..first);
    Ok(movie)
}

pub fn modal_expansion(cfg: &RunConfig) -> Result<ModalExpansion> {
    Ok(modal::build_expansion(
        &cfg.source,
        &cfg.medium,
        modal::default_truncation_hz(&cfg.source),
        modal::DEFAULT_NODE_TOL,
    )?)
}

pub fn simulate(cfg: &RunConfig) -> Result<Simulation> {
    cfg.validate()?;
    match cfg.engine {
        Engine::Fdtd => {
            let movie = run_fdtd(cfg)?;
            let envelope = fdtd_envelope(cfg, &movie)?;
            Ok(Simulation { movie, envelope })
        }
        Engine::Modal => {
            let exp = modal_expansion(cfg)?;
            let syn = Synthesizer::new(&exp, &cfg.grid.map_grid());
            let times = frame_times(cfg);
            let movie = syn.movie(&times);
            let envelope = EnvelopeMovie::from_amplitude(times.clone(), syn.envelope_frames(&times));
            Ok(Simulation { movie, envelope })
        }
    }
}

/// Narrowband filter then Hilbert envelope, as applied to measured movies.
pub fn fdtd_envelope(cfg: &RunConfig, movie: &FieldMovie) -> Result<EnvelopeMovie> {
    let bw = cfg.analysis.effective_bandwidth_hz(&cfg.source);
    let filtered = analysis::bandpass(movie, cfg.source.carrier_hz, bw)?;
    Ok(analysis::envelope(&filtered, cfg.source.carrier_hz)?)
}

pub fn geometry(cfg: &RunConfig) -> Result<ImageGeometry> {
    let side = cfg.side_m();
    let map = cfg.grid.map_grid();
    Ok(ImageGeometry {
        side_m: side,
        dx_m: map.dx(side),
        divisor: symmetry_factor(&cfg.source, side, map.dx(side)),
        spot_radius_m: cfg.analysis.effective_spot_radius_m(&cfg.medium, &cfg.source)?,
    })
}

/// C(t), the detected events and their labels.
pub struct Detection {
    pub confinement: ConfinementSeries,
    pub events: Vec<RevivalEvent>,
    pub geometry: ImageGeometry,
}

impl Detection {
    /// Earliest event labelled as a full revival.
    pub fn full_revival(&self) -> Option<&RevivalEvent> {
        self.events.iter().find(|e| e.kind == RevivalKind::Full)
    }
}

pub fn detect(cfg: &RunConfig, env: &EnvelopeMovie) -> Result<Detection> {
    let geometry = geometry(cfg)?;
    let confinement = analysis::confinement(env);
    let mut events = analysis::detect_revivals(&confinement, cfg.analysis.t_min_s, &cfg.analysis.detection());
    analysis::classify_events(&mut events, env, &cfg.source, &geometry, cfg.analysis.min_excess);
    Ok(Detection {
        confinement,
        events,
        geometry,
    })
}

/// Lowest excited frequencies, their spacing report and (for the discrete
/// route) the eigen set they came from.
pub struct SpectrumSummary {
    pub frequencies_hz: Vec<f64>,
    pub report: SpacingReport,
    pub eigen: Option<EigenSet>,
}

/// Spectrum side of a run. The modal engine uses its closed-form mode
/// frequencies; otherwise the discrete operator is diagonalized on an
/// `analysis.eigen_points` grid.
pub fn spectrum(cfg: &RunConfig) -> Result<SpectrumSummary> {
    let count = cfg.analysis.mode_count;
    let tol = cfg.analysis.commensurability_tol;
    if cfg.engine == Engine::Modal {
        let mut truncation = 2.0 * modal::default_truncation_hz(&cfg.source).min(1e5);
        loop {
            let exp = modal::build_expansion(&cfg.source, &cfg.medium, truncation, modal::DEFAULT_NODE_TOL)?;
            if exp.len() >= count {
                let f: Vec<f64> = exp.modes.iter().take(count).map(|m| m.omega / (2.0 * std::f64::consts::PI)).collect();
                let report = analysis::spacing_report(&f, tol)?;
                return Ok(SpectrumSummary {
                    frequencies_hz: f,
                    report,
                    eigen: None,
                });
            }
            truncation *= 2.0;
        }
    }
    let grid = crate::model::GridSpec {
        points: cfg.analysis.eigen_points,
        dt_s: 1.0,
        t_end_s: 0.0,
    };
    let op = spectral::assemble(&cfg.medium, &grid)?;
    let wanted = (count * 12 + 24).min(op.dim());
    let es = spectral::eigen_solve(&op, wanted)?;
    let sub = spectral::excited_subset(&es, &cfg.source, cfg.analysis.node_tol)?.truncate(count);
    let f = sub.frequencies_hz.clone();
    let report = analysis::spacing_report(&f, tol)?;
    Ok(SpectrumSummary {
        frequencies_hz: f,
        report,
        eigen: Some(sub),
    })
}

/// Revival time expected from the cavity formula reduced by the source
/// symmetry; `None` for linear dispersion.
pub fn predicted_revival_s(cfg: &RunConfig, divisor: u32) -> Option<f64> {
    revival_time_theoretical(&cfg.medium).ok().map(|t| t / f64::from(divisor))
}

/// 8-bit binary graymap of |frame| scaled by its own maximum. Row 0 is the
/// top of the image, i.e. the largest y.
pub fn write_pgm(path: &Path, frame: &Array2<f64>) -> io::Result<f64> {
    let (nx, ny) = frame.dim();
    let max = frame.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P5\n{nx} {ny}\n255\n")?;
    for j in (0..ny).rev() {
        for i in 0..nx {
            let v = if max > 0.0 { frame[[i, j]].abs() / max } else { 0.0 };
            out.write_all(&[(v * 255.0).round() as u8])?;
        }
    }
    out.flush()?;
    Ok(max)
}

fn write_events_csv(path: &Path, events: &[RevivalEvent]) -> io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "time_s,C,prominence,kind,score")?;
    for e in events {
        writeln!(out, "{:.9e},{:.9e},{:.9e},{},{:.6}", e.time_s, e.confinement, e.prominence, e.kind.name(), e.score)?;
    }
    out.flush()
}

fn us(t: f64) -> String {
    format!("{:.1} us", t * 1e6)
}

pub fn summary_text(cfg: &RunConfig, det: &Detection, spec: Option<&SpectrumSummary>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "preset: {}", cfg.preset.as_deref().unwrap_or("custom"));
    let _ = writeln!(s, "engine: {}", match cfg.engine { Engine::Modal => "modal", Engine::Fdtd => "fdtd" });
    let medium = match cfg.medium {
        Medium::Plate(p) => format!("plate, {}", p.boundary.name()),
        Medium::Membrane(m) => format!("membrane, c = {:.1} m/s", m.wave_speed_m_s),
    };
    let _ = writeln!(s, "medium: {medium}");
    let _ = writeln!(
        s,
        "source: ({:.4}, {:.4}) m, carrier {:.0} Hz, duration {:.2e} s",
        cfg.source.x_m, cfg.source.y_m, cfg.source.carrier_hz, cfg.source.duration_s
    );
    let _ = writeln!(s, "map grid: {0} x {0} (pixel count {1})", cfg.grid.map_points, det.confinement.pixel_count);
    let _ = writeln!(s, "symmetry divisor: {}", det.geometry.divisor);
    match predicted_revival_s(cfg, det.geometry.divisor) {
        Some(t) => {
            let _ = writeln!(s, "predicted T_rev (2L^2/(pi a) / divisor): {}", us(t));
        }
        None => {
            let _ = writeln!(s, "predicted T_rev: none (linear dispersion)");
        }
    }
    match det.full_revival() {
        Some(e) => {
            let _ = writeln!(s, "detected T_rev: {} (C = {:.4e}, score {:.2})", us(e.time_s), e.confinement, e.score);
        }
        None => {
            let _ = writeln!(s, "detected T_rev: no revival detected");
        }
    }
    if let Some(sp) = spec {
        let r = &sp.report;
        let _ = writeln!(
            s,
            "level spacing: q = {:.1} Hz over {} modes, 1/q = {}, max deviation {:.3}, commensurable {}",
            r.quantum_hz,
            sp.frequencies_hz.len(),
            us(r.revival_time_s),
            r.max_deviation,
            if r.commensurable { "yes" } else { "no" }
        );
    }
    let _ = writeln!(s, "events after {}: {}", us(cfg.analysis.t_min_s), det.events.len());
    for e in &det.events {
        let _ = writeln!(s, "  {:>8}  C = {:.4e}  {} ({:.2})", us(e.time_s), e.confinement, e.kind.name(), e.score);
    }
    s
}

/// Everything a run produces.
pub struct RunOutputs {
    pub simulation: Simulation,
    pub detection: Detection,
    pub spectrum: Option<SpectrumSummary>,
    pub summary: String,
}

/// Runs the configured experiment and writes all artifacts into
/// `cfg.output_dir`. `with_spectrum` adds the level-spacing analysis.
pub fn run(cfg: &RunConfig, with_spectrum: bool) -> Result<RunOutputs> {
    let simulation = simulate(cfg)?;
    let detection = detect(cfg, &simulation.envelope)?;
    let spectrum = if with_spectrum { Some(spectrum(cfg)?) } else { None };
    let summary = summary_text(cfg, &detection, spectrum.as_ref());
    let out = RunOutputs {
        simulation,
        detection,
        spectrum,
        summary,
    };
    write_outputs(cfg, &out)?;
    Ok(out)
}

pub fn write_outputs(cfg: &RunConfig, out: &RunOutputs) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let dx = cfg.grid.map_grid().dx(cfg.side_m());
    let sim = &out.simulation;
    sim.movie.write_raw(dir, "movie", dx)?;
    write_raw_frames(dir, "envelope", &sim.envelope.amplitude, &sim.envelope.times, dx)?;
    let mut csv = BufWriter::new(fs::File::create(dir.join("confinement.csv"))?);
    out.detection.confinement.write_csv(&mut csv)?;
    csv.flush()?;
    write_events_csv(&dir.join("events.csv"), &out.detection.events)?;
    if let Some(sp) = &out.spectrum {
        let mut f = BufWriter::new(fs::File::create(dir.join("spacing.csv"))?);
        sp.report.write_csv(&mut f)?;
        f.flush()?;
        if let Some(es) = &sp.eigen {
            let mut f = BufWriter::new(fs::File::create(dir.join("eigen.csv"))?);
            es.write_table(&cfg.source, &mut f)?;
            f.flush()?;
        }
    }
    let snaps = dir.join("snapshots");
    fs::create_dir_all(&snaps)?;
    let mut wanted: Vec<(String, f64)> = vec![("initial".to_string(), 0.0)];
    for (k, e) in out.detection.events.iter().enumerate() {
        wanted.push((format!("event{:02}_{}", k, e.kind.name()), e.time_s));
    }
    for (stem, t) in wanted {
        let Some(idx) = sim.envelope.frame_index(t) else { continue };
        let frame = &sim.envelope.amplitude[idx];
        let scale = write_pgm(&snaps.join(format!("{stem}.pgm")), frame)?;
        fs::write(
            snaps.join(format!("{stem}.scale")),
            format!("time_s {:e}\nmax_amplitude {:e}\n", sim.envelope.times[idx], scale),
        )?;
    }
    fs::write(dir.join("summary.txt"), &out.summary)?;
    Ok(())
}

/// Loads a `movie.hdr`/`movie.f32` dump from `input` and runs the envelope
/// and revival analysis on it, writing C(t), events and a summary into
/// `cfg.output_dir`.
pub fn analyze_dump(cfg: &RunConfig, input: &Path) -> Result<(Detection, String)> {
    cfg.validate()?;
    let (h, frames) = read_raw_frames(input, "movie")?;
    let want = (cfg.grid.map_points, cfg.grid.map_points);
    if (h.nx, h.ny) != want {
        return Err(RunError::GridMismatch((h.nx, h.ny), want));
    }
    let times = (0..h.count).map(|k| h.t0_s + k as f64 * h.dt_snapshot_s).collect();
    let movie = FieldMovie::new(times, frames);
    let env = fdtd_envelope(cfg, &movie)?;
    let det = detect(cfg, &env)?;
    let summary = summary_text(cfg, &det, None);
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut csv = BufWriter::new(fs::File::create(dir.join("confinement.csv"))?);
    det.confinement.write_csv(&mut csv)?;
    csv.flush()?;
    write_events_csv(&dir.join("events.csv"), &det.events)?;
    fs::write(dir.join("summary.txt"), &summary)?;
    Ok((det, summary))
}

/// Modal oracle against finite differences on a simply supported plate.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub frames_compared: usize,
    /// RMS of (fdtd − modal) over RMS of modal, over frames after the drive.
    pub rms_relative: f64,
    /// The same for the envelope amplitudes, insensitive to carrier phase.
    pub envelope_rms_relative: f64,
    pub modal_revival_s: Option<f64>,
    pub fdtd_revival_s: Option<f64>,
}

impl CompareReport {
    pub fn revival_difference_s(&self) -> Option<f64> {
        Some((self.fdtd_revival_s? - self.modal_revival_s?).abs())
    }

    pub fn is_empty(&self) -> bool {
        self.frames_compared == 0
    }

    pub fn text(&self) -> String {
        let opt = |v: Option<f64>| v.map(us).unwrap_or_else(|| "none".to_string());
        format!(
            "frames compared: {}\nrelative rms difference: {:.4e}\nrelative envelope rms difference: {:.4e}\nmodal full revival: {}\nfdtd full revival: {}\nrevival difference: {}\n",
            self.frames_compared,
            self.rms_relative,
            self.envelope_rms_relative,
            opt(self.modal_revival_s),
            opt(self.fdtd_revival_s),
            opt(self.revival_difference_s())
        )
    }
}

/// Relative RMS difference of two movies over frames at or after `t_from`.
pub fn movie_rms_difference(reference: &FieldMovie, other: &FieldMovie, t_from: f64) -> Result<(usize, f64)> {
    if reference.shape() != other.shape() {
        return Err(RunError::GridMismatch(reference.shape(), other.shape()));
    }
    let (mut num, mut den, mut count) = (0.0, 0.0, 0usize);
    for (k, t) in other.times.iter().enumerate() {
        if *t < t_from {
            continue;
        }
        let Some(r) = reference.frame_index(*t) else { continue };
        if (reference.times[r] - t).abs() > 1e-12 {
            continue;
        }
        count += 1;
        num += (&other.frames[k] - &reference.frames[r]).mapv(|v| v * v).sum();
        den += reference.frames[r].mapv(|v| v * v).sum();
    }
    Ok((count, if den > 0.0 { (num / den).sqrt() } else { 0.0 }))
}

pub fn compare_engines(cfg: &RunConfig) -> Result<CompareReport> {
    match cfg.medium {
        Medium::Plate(p) if p.boundary == BoundaryCondition::SimplySupported => {}
        _ => return Err(RunError::NotSimplySupported),
    }
    let fdtd_cfg = RunConfig {
        engine: Engine::Fdtd,
        ..cfg.clone()
    };
    fdtd_cfg.validate()?;
    if cfg.grid.t_end_s <= 0.0 {
        return Ok(CompareReport {
            frames_compared: 0,
            rms_relative: 0.0,
            envelope_rms_relative: 0.0,
            modal_revival_s: None,
            fdtd_revival_s: None,
        });
    }
    let fd_movie = run_fdtd(&fdtd_cfg)?;
    let exp = modal_expansion(cfg)?.driven();
    let syn = Synthesizer::new(&exp, &cfg.grid.map_grid());
    let modal_movie = syn.movie(&fd_movie.times);
    let drive_end = cfg.source.peak_delay_s();
    let (count, rms) = movie_rms_difference(&modal_movie, &fd_movie, drive_end)?;
    let modal_env = EnvelopeMovie::from_amplitude(fd_movie.times.clone(), syn.envelope_frames(&fd_movie.times));
    let fd_env = if fd_movie.len() >= 16 {
        Some(fdtd_envelope(&fdtd_cfg, &fd_movie)?)
    } else {
        None
    };
    let modal_det = detect(cfg, &modal_env)?;
    let (fd_rev, env_rms) = match &fd_env {
        Some(env) => {
            let as_movie = |e: &EnvelopeMovie| FieldMovie::new(e.times.clone(), e.amplitude.clone());
            let (_, env_rms) = movie_rms_difference(&as_movie(&modal_env), &as_movie(env), drive_end)?;
            (detect(&fdtd_cfg, env)?.full_revival().map(|e| e.time_s), env_rms)
        }
        None => (None, 0.0),
    };
    Ok(CompareReport {
        frames_compared: count,
        rms_relative: rms,
        envelope_rms_relative: env_rms,
        modal_revival_s: modal_det.full_revival().map(|e| e.time_s),
        fdtd_revival_s: fd_rev,
    })
}
