//! From displacement movies to revival events.
//!
//! The chain is: narrowband Gaussian filter per pixel, Hilbert envelope per
//! pixel, the confinement metric C(t) = ΣA² / (ΣA)² per frame, peak picking
//! on C(t), and image-set fingerprints that tell full revivals from
//! fractional ones. The level-spacing report closes the loop from the
//! spectrum side: the smallest excited spacing q predicts T_rev = 1/q.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SourceSpec;
use crate::movie::FieldMovie;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("movie sampled at {rate_hz:.0} Hz cannot resolve {needed_hz:.0} Hz")]
    Undersampled { rate_hz: f64, needed_hz: f64 },
    #[error("movie has {0} frames; at least 16 are required")]
    TooShort(usize),
    #[error("need at least {needed} frequencies, got {got}")]
    TooFewFrequencies { needed: usize, got: usize },
    #[error("frequencies must be sorted ascending")]
    Unsorted,
    #[error("every level spacing is degenerate")]
    AllDegenerate,
    #[error("time {0:e} s lies outside the movie")]
    TimeOutOfRange(f64),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Runs `transform` on every pixel's time series, zero-padded to at least
/// twice its length, and returns the complex result trimmed back.
fn per_pixel_spectral(
    frames: &[Array2<f64>],
    mut transform: impl FnMut(&mut [Complex64], f64),
    frame_dt: f64,
) -> Vec<Array2<Complex64>> {
    let count = frames.len();
    let (nx, ny) = frames[0].dim();
    let len = (2 * count).next_power_of_two();
    let mut planner = FftPlanner::new();
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(len);
    let inverse: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(len);
    let df = 1.0 / (len as f64 * frame_dt);
    let mut out = vec![Array2::<Complex64>::zeros((nx, ny)); count];
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let norm = 1.0 / len as f64;
    for i in 0..nx {
        for j in 0..ny {
            buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            let mut any = false;
            for (k, f) in frames.iter().enumerate() {
                let v = f[[i, j]];
                any |= v != 0.0;
                buf[k] = Complex64::new(v, 0.0);
            }
            if !any {
                continue;
            }
            forward.process(&mut buf);
            transform(&mut buf, df);
            inverse.process(&mut buf);
            for (k, frame) in out.iter_mut().enumerate() {
                frame[[i, j]] = buf[k] * norm;
            }
        }
    }
    out
}

/// Signed frequency of FFT bin `k` for length `len`.
fn bin_frequency(k: usize, len: usize, df: f64) -> f64 {
    if k <= len / 2 {
        k as f64 * df
    } else {
        (k as f64 - len as f64) * df
    }
}

/// Gaussian window with full width at half maximum `fwhm_hz`.
pub fn gaussian_window(f_hz: f64, center_hz: f64, fwhm_hz: f64) -> f64 {
    let d = (f_hz - center_hz) / fwhm_hz;
    (-4.0 * std::f64::consts::LN_2 * d * d).exp()
}

fn check_rate(movie: &FieldMovie, needed_hz: f64) -> Result<f64> {
    if movie.len() < 16 {
        return Err(AnalysisError::TooShort(movie.len()));
    }
    let dt = movie.frame_dt().ok_or(AnalysisError::TooShort(movie.len()))?;
    let rate = 1.0 / dt;
    if rate < needed_hz {
        return Err(AnalysisError::Undersampled {
            rate_hz: rate,
            needed_hz,
        });
    }
    Ok(dt)
}

/// Zero-phase Gaussian bandpass of every pixel's time series.
///
/// The window is centred on ±`center_hz` with full width at half maximum
/// `bandwidth_hz`, so a tone three bandwidths away loses 54 dB.
pub fn bandpass(movie: &FieldMovie, center_hz: f64, bandwidth_hz: f64) -> Result<FieldMovie> {
    let dt = check_rate(movie, 2.0 * (center_hz + bandwidth_hz))?;
    let filtered = per_pixel_spectral(
        &movie.frames,
        |spec, df| {
            let len = spec.len();
            for (k, z) in spec.iter_mut().enumerate() {
                let f = bin_frequency(k, len, df).abs();
                *z *= gaussian_window(f, center_hz, bandwidth_hz);
            }
        },
        dt,
    );
    let frames = filtered.into_iter().map(|f| f.mapv(|z| z.re)).collect();
    Ok(FieldMovie::new(movie.times.clone(), frames))
}

/// Per-pixel amplitude A ≥ 0 and carrier-removed phase φ.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeMovie {
    pub times: Vec<f64>,
    pub amplitude: Vec<Array2<f64>>,
    pub phase: Vec<Array2<f64>>,
}

impl EnvelopeMovie {
    /// Envelope frames without phase, e.g. the exact modal envelope.
    pub fn from_amplitude(times: Vec<f64>, amplitude: Vec<Array2<f64>>) -> Self {
        let phase = amplitude.iter().map(|a| Array2::zeros(a.dim())).collect();
        EnvelopeMovie {
            times,
            amplitude,
            phase,
        }
    }

    pub fn len(&self) -> usize {
        self.amplitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitude.is_empty()
    }

    pub fn frame_index(&self, t: f64) -> Option<usize> {
        if self.times.is_empty() {
            return None;
        }
        let dt = if self.times.len() > 1 { self.times[1] - self.times[0] } else { 0.0 };
        let (first, last) = (self.times[0], self.times[self.times.len() - 1]);
        if t < first - dt || t > last + dt {
            return None;
        }
        let pos = self.times.partition_point(|&x| x < t);
        if pos == 0 {
            return Some(0);
        }
        if pos >= self.times.len() {
            return Some(self.times.len() - 1);
        }
        Some(if self.times[pos] - t < t - self.times[pos - 1] { pos } else { pos - 1 })
    }
}

/// Hilbert envelope of every pixel: analytic signal by zeroing negative
/// frequencies and doubling positive ones (DC and Nyquist kept once).
///
/// `carrier_hz` is removed from the phase as a linear ramp.
pub fn envelope(movie: &FieldMovie, carrier_hz: f64) -> Result<EnvelopeMovie> {
    if movie.len() < 16 {
        return Err(AnalysisError::TooShort(movie.len()));
    }
    let dt = movie.frame_dt().ok_or(AnalysisError::TooShort(movie.len()))?;
    let analytic = per_pixel_spectral(&movie.frames, hilbert_mask, dt);
    let mut amplitude = Vec::with_capacity(analytic.len());
    let mut phase = Vec::with_capacity(analytic.len());
    for (z, &t) in analytic.iter().zip(&movie.times) {
        amplitude.push(z.mapv(|v| v.norm()));
        let ramp = 2.0 * PI * carrier_hz * t;
        phase.push(z.mapv(|v| wrap_phase(v.arg() - ramp)));
    }
    Ok(EnvelopeMovie {
        times: movie.times.clone(),
        amplitude,
        phase,
    })
}

fn hilbert_mask(spec: &mut [Complex64], _df: f64) {
    let len = spec.len();
    let half = len / 2;
    for (k, z) in spec.iter_mut().enumerate() {
        let gain = if k == 0 || (len.is_multiple_of(2) && k == half) {
            1.0
        } else if k < len.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *z *= gain;
    }
}

fn wrap_phase(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Analytic signal of one real series (same construction as [`envelope`]).
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let len = (2 * x.len()).next_power_of_two().max(1);
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    planner.plan_fft_forward(len).process(&mut buf);
    hilbert_mask(&mut buf, 0.0);
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.truncate(x.len());
    buf.iter().map(|z| z / len as f64).collect()
}

/// C(t) per frame, with the pixel count N² for baseline comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfinementSeries {
    pub times: Vec<f64>,
    /// `None` where the frame is identically zero.
    pub values: Vec<Option<f64>>,
    pub pixel_count: usize,
}

impl ConfinementSeries {
    /// Value nearest to time `t`.
    pub fn at(&self, t: f64) -> Option<f64> {
        let k = self.times.partition_point(|&x| x < t);
        let k = if k > 0 && (k == self.times.len() || t - self.times[k - 1] < self.times[k] - t) {
            k - 1
        } else {
            k
        };
        self.values.get(k).copied().flatten()
    }

    /// Largest C over [t0, t1] and its time.
    pub fn max_in(&self, t0: f64, t1: f64) -> Option<(f64, f64)> {
        self.times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| **t >= t0 && **t <= t1)
            .filter_map(|(t, v)| v.map(|v| (*t, v)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "time_s,C")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            match v {
                Some(c) => writeln!(out, "{t:.9e},{c:.9e}")?,
                None => writeln!(out, "{t:.9e},")?,
            }
        }
        Ok(())
    }
}

/// Confinement of a single amplitude frame, ΣA² / (ΣA)².
pub fn frame_confinement(frame: &Array2<f64>) -> Option<f64> {
    let (mut s1, mut s2) = (0.0, 0.0);
    for &a in frame {
        let a = a.abs();
        s1 += a;
        s2 += a * a;
    }
    if s1 > 0.0 {
        Some(s2 / (s1 * s1))
    } else {
        None
    }
}

pub fn confinement(env: &EnvelopeMovie) -> ConfinementSeries {
    ConfinementSeries {
        times: env.times.clone(),
        values: env.amplitude.iter().map(frame_confinement).collect(),
        pixel_count: env.amplitude.first().map(|f| f.len()).unwrap_or(0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RevivalKind {
    Full,
    Half,
    Third,
    Quarter,
    Unclassified,
}

impl RevivalKind {
    pub const FRACTIONS: [RevivalKind; 4] = [RevivalKind::Full, RevivalKind::Half, RevivalKind::Third, RevivalKind::Quarter];

    /// Fraction of the source's own revival period.
    pub fn fraction(self) -> Option<(u32, u32)> {
        match self {
            RevivalKind::Full => Some((1, 1)),
            RevivalKind::Half => Some((1, 2)),
            RevivalKind::Third => Some((1, 3)),
            RevivalKind::Quarter => Some((1, 4)),
            RevivalKind::Unclassified => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RevivalKind::Full => "full",
            RevivalKind::Half => "half",
            RevivalKind::Third => "third",
            RevivalKind::Quarter => "quarter",
            RevivalKind::Unclassified => "unclassified",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevivalEvent {
    pub time_s: f64,
    pub confinement: f64,
    pub prominence: f64,
    pub kind: RevivalKind,
    /// Fingerprint score of `kind`; 0 when unclassified.
    pub score: f64,
}

/// Peak-picking parameters of [`detect_revivals`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionParams {
    /// Prominence threshold in units of the baseline's robust standard
    /// deviation (normal-consistent median absolute deviation).
    pub k_prominence: f64,
    /// Peaks closer than this are merged, keeping the higher one.
    pub min_separation_s: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            k_prominence: 5.0,
            min_separation_s: 6.0e-6,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Scales the median absolute deviation to the standard deviation of a
/// normal sample.
pub const MAD_TO_SIGMA: f64 = 1.4826;

fn mad(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    median(&mut dev)
}

fn robust_sigma(values: &[f64]) -> f64 {
    MAD_TO_SIGMA * mad(values)
}

/// A local maximum with its topographic prominence and base interval.
#[derive(Debug, Clone, Copy)]
struct Peak {
    index: usize,
    prominence: f64,
    left_base: usize,
    right_base: usize,
}

fn find_peaks(y: &[f64]) -> Vec<Peak> {
    let n = y.len();
    let mut peaks = Vec::new();
    let mut k = 1;
    while k + 1 < n {
        if y[k] > y[k - 1] {
            // plateau-aware: find the end of equal values
            let mut e = k;
            while e + 1 < n && y[e + 1] == y[k] {
                e += 1;
            }
            if e + 1 < n && y[e + 1] < y[k] {
                let index = (k + e) / 2;
                let mut left_min = y[k];
                let mut left_base = k;
                let mut i = k;
                while i > 0 {
                    i -= 1;
                    if y[i] > y[k] {
                        break;
                    }
                    if y[i] < left_min {
                        left_min = y[i];
                        left_base = i;
                    }
                }
                let mut right_min = y[k];
                let mut right_base = e;
                let mut i = e;
                while i + 1 < n {
                    i += 1;
                    if y[i] > y[k] {
                        break;
                    }
                    if y[i] < right_min {
                        right_min = y[i];
                        right_base = i;
                    }
                }
                peaks.push(Peak {
                    index,
                    prominence: y[k] - left_min.max(right_min),
                    left_base,
                    right_base,
                });
            }
            k = e + 1;
        } else {
            k += 1;
        }
    }
    peaks
}

/// Local maxima of C(t) after `t_min` that stand out of the baseline.
///
/// A peak qualifies when its prominence is at least `k_prominence` times
/// the robust standard deviation (1.4826 × median absolute deviation) of
/// the baseline. The baseline is the
/// series on [t_min, t_end] with the qualifying peaks' half-prominence
/// extents removed; selection and baseline are iterated to a fixed point.
pub fn detect_revivals(cs: &ConfinementSeries, t_min: f64, params: &DetectionParams) -> Vec<RevivalEvent> {
    let (times, values): (Vec<f64>, Vec<f64>) = cs
        .times
        .iter()
        .zip(&cs.values)
        .filter(|(t, _)| **t >= t_min)
        .filter_map(|(t, v)| v.map(|v| (*t, v)))
        .unzip();
    if values.len() < 3 {
        return Vec::new();
    }
    let peaks = find_peaks(&values);
    let extent = |p: &Peak| {
        let half = values[p.index] - 0.5 * p.prominence;
        let mut lo = p.index;
        while lo > p.left_base && values[lo - 1] >= half {
            lo -= 1;
        }
        let mut hi = p.index;
        while hi < p.right_base && values[hi + 1] >= half {
            hi += 1;
        }
        (lo, hi)
    };
    let mut selected: Vec<Peak> = Vec::new();
    let mut threshold = params.k_prominence * robust_sigma(&values);
    for _ in 0..20 {
        let next: Vec<Peak> = peaks.iter().copied().filter(|p| p.prominence >= threshold && p.prominence > 0.0).collect();
        let mut mask = vec![true; values.len()];
        for p in &next {
            let (lo, hi) = extent(p);
            mask[lo..=hi].iter_mut().for_each(|m| *m = false);
        }
        let baseline: Vec<f64> = values.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
        let new_threshold = params.k_prominence * robust_sigma(&baseline);
        let converged = next.len() == selected.len();
        selected = next;
        if converged && (new_threshold - threshold).abs() <= 1e-12 * threshold.abs().max(1e-300) {
            break;
        }
        threshold = new_threshold;
    }
    // merge peaks closer than the separation, keeping the highest
    selected.sort_by(|a, b| values[b.index].total_cmp(&values[a.index]));
    let mut kept: Vec<Peak> = Vec::new();
    for p in selected {
        if kept.iter().all(|q| (times[q.index] - times[p.index]).abs() >= params.min_separation_s) {
            kept.push(p);
        }
    }
    kept.sort_by_key(|p| p.index);
    kept.into_iter()
        .map(|p| RevivalEvent {
            time_s: times[p.index],
            confinement: values[p.index],
            prominence: p.prominence,
            kind: RevivalKind::Unclassified,
            score: 0.0,
        })
        .collect()
}

/// Geometry needed to place revival images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageGeometry {
    pub side_m: f64,
    /// Grid spacing of the envelope frames.
    pub dx_m: f64,
    /// Symmetry divisor of the source (8 centre, 3 diagonal third, 1 otherwise).
    pub divisor: u32,
    /// Radius of the disk counted around each image.
    pub spot_radius_m: f64,
}

/// Positions (in [0, L]) and complex weights of the 1D images of a source
/// at `x0` after fraction p/q of the box revival period.
///
/// The box of side L with fixed ends is the odd part of a ring of length
/// 2L. On the ring, a quadratic spectrum rebuilds the packet at p/q of the
/// period as copies shifted by multiples of 2L/q with Gauss-sum weights
/// a_j = (1/q) Σ_n exp(−2πi p n²/q + 2πi j n/q); the mirror source at −x0
/// contributes with opposite sign. Coincident images are summed.
pub fn talbot_images_1d(x0: f64, side_m: f64, p: u32, q: u32) -> Vec<(f64, Complex64)> {
    let period = 2.0 * side_m;
    let (pf, qf) = (f64::from(p), f64::from(q));
    let weights: Vec<Complex64> = (0..q)
        .map(|j| {
            let mut sum = Complex64::new(0.0, 0.0);
            for n in 0..q {
                let nf = f64::from(n);
                let phase = -2.0 * PI * pf * nf * nf / qf + 2.0 * PI * f64::from(j) * nf / qf;
                sum += Complex64::from_polar(1.0, phase);
            }
            sum / qf
        })
        .collect();
    let tol = 1e-9 * side_m;
    let mut images: Vec<(f64, Complex64)> = Vec::new();
    for (origin, sign) in [(x0, 1.0), (-x0, -1.0)] {
        for (j, w) in weights.iter().enumerate() {
            let mut u = (origin + j as f64 * period / qf).rem_euclid(period);
            if u >= side_m + tol {
                u -= period;
            }
            if u < -tol {
                continue;
            }
            let u = u.clamp(0.0, side_m);
            match images.iter_mut().find(|(x, _)| (x - u).abs() < tol) {
                Some((_, acc)) => *acc += w * sign,
                None => images.push((u, w * sign)),
            }
        }
    }
    let max = images.iter().map(|(_, w)| w.norm()).fold(0.0, f64::max);
    images.retain(|(_, w)| w.norm() > 1e-6 * max);
    images
}

/// Expected image positions of `kind` for the source.
///
/// The fraction is taken of the source's own revival period T_theo/divisor,
/// so the box evolves through p/(q·divisor) of its period. For a generic
/// source this gives {(x0,y0)} at the full revival, the mirror point at the
/// half, {x0, L−x0}² at the quarter, and the 3 × 3 Talbot lattice at the
/// third.
pub fn image_set(src: &SourceSpec, kind: RevivalKind, side_m: f64, divisor: u32) -> Vec<(f64, f64)> {
    let Some((p, q)) = kind.fraction() else {
        return Vec::new();
    };
    let q = q * divisor.max(1);
    let xs = talbot_images_1d(src.x_m, side_m, p, q);
    let ys = talbot_images_1d(src.y_m, side_m, p, q);
    let mut weighted: Vec<((f64, f64), f64)> = Vec::new();
    for (x, wx) in &xs {
        for (y, wy) in &ys {
            weighted.push(((*x, *y), (wx * wy).norm()));
        }
    }
    let max = weighted.iter().map(|(_, w)| *w).fold(0.0, f64::max);
    weighted
        .into_iter()
        .filter(|(_, w)| *w >= 0.25 * max)
        .map(|(pos, _)| pos)
        .collect()
}

/// Fraction of the frame energy ΣA² inside disks of radius `spot_radius_m`
/// around `images`. Scale invariant; in [0, 1].
pub fn image_energy_fraction(frame: &Array2<f64>, images: &[(f64, f64)], dx_m: f64, spot_radius_m: f64) -> f64 {
    let r2 = spot_radius_m * spot_radius_m;
    let (mut inside, mut total) = (0.0, 0.0);
    for ((i, j), &a) in frame.indexed_iter() {
        let e = a * a;
        total += e;
        let (x, y) = (i as f64 * dx_m, j as f64 * dx_m);
        if images.iter().any(|(u, v)| (x - u).powi(2) + (y - v).powi(2) <= r2) {
            inside += e;
        }
    }
    if total > 0.0 {
        (inside / total).min(1.0)
    } else {
        0.0
    }
}

/// Score of the `kind` image pattern in the envelope frame nearest to `t`.
pub fn fingerprint(env: &EnvelopeMovie, t: f64, src: &SourceSpec, kind: RevivalKind, geom: &ImageGeometry) -> Result<f64> {
    let k = env.frame_index(t).ok_or(AnalysisError::TimeOutOfRange(t))?;
    let images = image_set(src, kind, geom.side_m, geom.divisor);
    Ok(image_energy_fraction(&env.amplitude[k], &images, geom.dx_m, geom.spot_radius_m))
}

/// Fraction of the frame's pixels inside the image disks: the score a
/// featureless field would get.
pub fn image_coverage(shape: (usize, usize), images: &[(f64, f64)], dx_m: f64, spot_radius_m: f64) -> f64 {
    let r2 = spot_radius_m * spot_radius_m;
    let (nx, ny) = shape;
    let mut inside = 0usize;
    for i in 0..nx {
        for j in 0..ny {
            let (x, y) = (i as f64 * dx_m, j as f64 * dx_m);
            if images.iter().any(|(u, v)| (x - u).powi(2) + (y - v).powi(2) <= r2) {
                inside += 1;
            }
        }
    }
    inside as f64 / (nx * ny).max(1) as f64
}

/// Score lifted above the featureless level: (score − coverage) / (1 − coverage).
pub fn excess_score(score: f64, coverage: f64) -> f64 {
    if coverage >= 1.0 {
        0.0
    } else {
        (score - coverage) / (1.0 - coverage)
    }
}

/// Minimum excess for an event to receive a label.
pub const DEFAULT_MIN_EXCESS: f64 = 0.25;

// kind, image positions, disk coverage
type KindSet = (RevivalKind, Vec<(f64, f64)>, f64);

/// Labels each event with the image pattern that stands out most above
/// its own featureless level. Patterns whose excess is below `min_excess`
/// are ignored; the stored score is the plain energy fraction.
pub fn classify_events(
    events: &mut [RevivalEvent],
    env: &EnvelopeMovie,
    src: &SourceSpec,
    geom: &ImageGeometry,
    min_excess: f64,
) {
    let Some(shape) = env.amplitude.first().map(|f| f.dim()) else {
        return;
    };
    let sets: Vec<KindSet> = RevivalKind::FRACTIONS
        .iter()
        .map(|&k| {
            let imgs = image_set(src, k, geom.side_m, geom.divisor);
            let cov = image_coverage(shape, &imgs, geom.dx_m, geom.spot_radius_m);
            (k, imgs, cov)
        })
        .collect();
    for ev in events.iter_mut() {
        let Some(idx) = env.frame_index(ev.time_s) else {
            continue;
        };
        let frame = &env.amplitude[idx];
        let best = sets
            .iter()
            .map(|(k, imgs, cov)| {
                let score = image_energy_fraction(frame, imgs, geom.dx_m, geom.spot_radius_m);
                (*k, score, excess_score(score, *cov))
            })
            .filter(|(_, _, e)| *e >= min_excess)
            .max_by(|a, b| a.2.total_cmp(&b.2));
        if let Some((kind, score, _)) = best {
            ev.kind = kind;
            ev.score = score;
        }
    }
}

/// Nearest-neighbour level spacings and their commensurability.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacingReport {
    pub frequencies_hz: Vec<f64>,
    /// s_i = f_{i+1} − f_i
    pub spacings_hz: Vec<f64>,
    /// Smallest spacing above the degeneracy floor.
    pub quantum_hz: f64,
    pub multiples: Vec<u64>,
    pub deviations: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub max_deviation: f64,
    pub commensurable: bool,
    pub revival_time_s: f64,
}

/// Relative degeneracy floor: spacings below this fraction of the median
/// spacing count as degenerate pairs.
pub const DEGENERACY_FLOOR: f64 = 0.01;
pub const DEFAULT_COMMENSURABILITY_TOL: f64 = 0.1;

pub fn spacing_report(freqs_hz: &[f64], tol_rel: f64) -> Result<SpacingReport> {
    if freqs_hz.len() < 3 {
        return Err(AnalysisError::TooFewFrequencies {
            needed: 3,
            got: freqs_hz.len(),
        });
    }
    if freqs_hz.windows(2).any(|w| w[1] < w[0]) {
        return Err(AnalysisError::Unsorted);
    }
    let spacings: Vec<f64> = freqs_hz.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = spacings.clone();
    let floor = DEGENERACY_FLOOR * median(&mut sorted);
    let degenerate: Vec<bool> = spacings.iter().map(|&s| s <= floor).collect();
    let quantum = spacings
        .iter()
        .zip(&degenerate)
        .filter(|(_, d)| !**d)
        .map(|(s, _)| *s)
        .fold(f64::INFINITY, f64::min);
    if !quantum.is_finite() || quantum <= 0.0 {
        return Err(AnalysisError::AllDegenerate);
    }
    let ratios: Vec<f64> = spacings.iter().map(|s| s / quantum).collect();
    let multiples: Vec<u64> = ratios.iter().map(|r| r.round() as u64).collect();
    let deviations: Vec<f64> = ratios.iter().map(|r| (r - r.round()).abs()).collect();
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    Ok(SpacingReport {
        frequencies_hz: freqs_hz.to_vec(),
        spacings_hz: spacings,
        quantum_hz: quantum,
        multiples,
        deviations,
        degenerate,
        max_deviation,
        commensurable: max_deviation <= tol_rel,
        revival_time_s: 1.0 / quantum,
    })
}

impl SpacingReport {
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "index,f_Hz,spacing_Hz,multiple,deviation")?;
        for (i, f) in self.frequencies_hz.iter().enumerate() {
            match self.spacings_hz.get(i) {
                Some(s) => writeln!(out, "{i},{f:.6},{s:.6},{},{:.6}", self.multiples[i], self.deviations[i])?,
                None => writeln!(out, "{i},{f:.6},,,")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone_movie(f: f64, amp: f64, rate: f64, count: usize) -> FieldMovie {
        let times: Vec<f64> = (0..count).map(|k| k as f64 / rate).collect();
        let frames = times
            .iter()
            .map(|&t| Array2::from_elem((2, 2), amp * (2.0 * PI * f * t).cos()))
            .collect();
        FieldMovie::new(times, frames)
    }

    #[test]
    fn constant_envelope_of_tone() {
        let movie = tone_movie(50e3, 3.0, 1e6, 2000);
        let env = envelope(&movie, 50e3).unwrap();
        for k in 200..1800 {
            let a = env.amplitude[k][[1, 0]];
            assert!((a / 3.0 - 1.0).abs() < 0.01, "{k}: {a}");
            assert!(env.phase[k][[1, 0]].abs() < 0.02);
        }
    }

    #[test]
    fn gaussian_pulse_envelope_peak() {
        let rate = 4e6;
        let (t0, sigma, f) = (200e-6, 10e-6, 300e3);
        let x: Vec<f64> = (0..2000)
            .map(|k| {
                let t = k as f64 / rate;
                (-0.5 * ((t - t0) / sigma).powi(2)).exp() * (2.0 * PI * f * (t - t0)).cos()
            })
            .collect();
        let a = analytic_signal(&x);
        let peak = a.iter().enumerate().max_by(|p, q| p.1.norm().total_cmp(&q.1.norm())).unwrap().0;
        assert!((peak as f64 / rate - t0).abs() <= 1.0 / rate);
        for (k, z) in a.iter().enumerate() {
            let expected = (-0.5 * ((k as f64 / rate - t0) / sigma).powi(2)).exp();
            assert!((z.norm() - expected).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_signal_zero_envelope() {
        let movie = tone_movie(1e3, 0.0, 1e5, 64);
        let env = envelope(&movie, 1e3).unwrap();
        assert!(env.amplitude.iter().all(|f| f.iter().all(|&v| v == 0.0)));
        assert!(envelope(&tone_movie(1e3, 1.0, 1e5, 8), 1e3).is_err());
    }

    #[test]
    fn bandpass_passes_and_rejects() {
        let (rate, count) = (2e6, 4000);
        let inside = bandpass(&tone_movie(400e3, 1.0, rate, count), 400e3, 50e3).unwrap();
        let peak_in = inside.frames[500..3500].iter().map(|f| f[[0, 0]].abs()).fold(0.0, f64::max);
        assert!((peak_in - 1.0).abs() < 0.01, "{peak_in}");
        let away = bandpass(&tone_movie(250e3, 1.0, rate, count), 400e3, 50e3).unwrap();
        let peak_out = away.frames[500..3500].iter().map(|f| f[[0, 0]].abs()).fold(0.0, f64::max);
        assert!(20.0 * peak_out.log10() < -40.0, "{peak_out}");
        assert!(matches!(
            bandpass(&tone_movie(400e3, 1.0, 5e5, count), 400e3, 50e3),
            Err(AnalysisError::Undersampled { .. })
        ));
    }

    #[test]
    fn confinement_examples() {
        let mut single = Array2::zeros((80, 80));
        single[[3, 4]] = 2.5;
        assert_eq!(frame_confinement(&single), Some(1.0));
        let uniform = Array2::from_elem((80, 80), 0.7);
        assert!((frame_confinement(&uniform).unwrap() - 1.0 / 6400.0).abs() < 1e-15);
        let mut two = Array2::zeros((80, 80));
        two[[1, 1]] = 1.0;
        two[[70, 2]] = 1.0;
        assert_eq!(frame_confinement(&two), Some(0.5));
        assert_eq!(frame_confinement(&Array2::zeros((4, 4))), None);
    }

    #[test]
    fn detects_isolated_bumps_only() {
        let times: Vec<f64> = (0..1000).map(|k| k as f64 * 1e-6).collect();
        let values = times
            .iter()
            .map(|&t| {
                let base = 2e-4 + 1e-5 * (t * 3.1e5).sin();
                let bump = |c: f64, h: f64| h * (-0.5 * ((t - c) / 3e-6).powi(2)).exp();
                Some(base + bump(300e-6, 0.01) + bump(700e-6, 0.004))
            })
            .collect();
        let cs = ConfinementSeries { times, values, pixel_count: 6400 };
        let events = detect_revivals(&cs, 100e-6, &DetectionParams::default());
        let at: Vec<f64> = events.iter().map(|e| e.time_s).collect();
        assert_eq!(at.len(), 2, "{at:?}");
        assert!((at[0] - 300e-6).abs() < 1.5e-6 && (at[1] - 700e-6).abs() < 1.5e-6);
        assert!(detect_revivals(&cs, 800e-6, &DetectionParams::default()).is_empty());
    }

    #[test]
    fn generic_image_sets() {
        let l = 1.0;
        let src = SourceSpec { x_m: 0.2, y_m: 0.35, ..SourceSpec::at_fraction(l, 0.5, 0.5) };
        let close = |set: &[(f64, f64)], pts: &[(f64, f64)]| {
            set.len() == pts.len()
                && pts.iter().all(|p| set.iter().any(|q| (p.0 - q.0).abs() < 1e-9 && (p.1 - q.1).abs() < 1e-9))
        };
        assert!(close(&image_set(&src, RevivalKind::Full, l, 1), &[(0.2, 0.35)]));
        assert!(close(&image_set(&src, RevivalKind::Half, l, 1), &[(0.8, 0.65)]));
        assert!(close(
            &image_set(&src, RevivalKind::Quarter, l, 1),
            &[(0.2, 0.35), (0.8, 0.35), (0.2, 0.65), (0.8, 0.65)]
        ));
        // third: ±x0 + 2jL/3 folded, 3 per axis
        let third = image_set(&src, RevivalKind::Third, l, 1);
        assert_eq!(third.len(), 9);
        let xs = talbot_images_1d(0.2, l, 1, 3);
        let mut pos: Vec<f64> = xs.iter().map(|p| p.0).collect();
        pos.sort_by(f64::total_cmp);
        let mut expect = vec![0.2, 0.2 + 2.0 / 3.0, 2.0 / 3.0 - 0.2];
        expect.sort_by(f64::total_cmp);
        for (a, b) in pos.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9, "{pos:?} vs {expect:?}");
        }
    }

    #[test]
    fn symmetric_source_image_sets() {
        let l = 1.0;
        let centre = SourceSpec::at_fraction(l, 0.5, 0.5);
        assert_eq!(image_set(&centre, RevivalKind::Full, l, 8), vec![(0.5, 0.5)]);
        // half of the reduced period: four spots at L/4 and 3L/4
        let mut half = image_set(&centre, RevivalKind::Half, l, 8);
        half.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(half.len(), 4);
        for (x, y) in &half {
            assert!(((x - 0.25).abs() < 1e-9 || (x - 0.75).abs() < 1e-9) && ((y - 0.25).abs() < 1e-9 || (y - 0.75).abs() < 1e-9));
        }
        // third: nine spots on {L/6, L/2, 5L/6}²
        let third = image_set(&centre, RevivalKind::Third, l, 8);
        assert_eq!(third.len(), 9);
        for (x, _) in &third {
            assert!([1.0 / 6.0, 0.5, 5.0 / 6.0].iter().any(|v| (x - v).abs() < 1e-9));
        }
        let diag = SourceSpec::at_fraction(l, 2.0 / 3.0, 2.0 / 3.0);
        let full = image_set(&diag, RevivalKind::Full, l, 3);
        assert_eq!(full.len(), 1);
        assert!((full[0].0 - 2.0 / 3.0).abs() < 1e-9);
        let half = image_set(&diag, RevivalKind::Half, l, 3);
        assert_eq!(half.len(), 1);
        assert!((half[0].0 - 1.0 / 3.0).abs() < 1e-9 && (half[0].1 - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn spacing_report_examples() {
        let q = 773.0;
        let ints = [2.0, 5.0, 5.0, 8.0, 10.0, 13.0, 17.0];
        let f: Vec<f64> = ints.iter().map(|k| k * q).collect();
        let r = spacing_report(&f, 0.1).unwrap();
        assert!((r.quantum_hz - 2.0 * q).abs() < 1e-9);
        // 5→5 degenerate, 5→8 = 3q against quantum 2q → 1.5 → deviation 0.5
        assert!(!r.commensurable);
        assert!(r.degenerate[1]);
        let seq: Vec<f64> = [1.0, 2.0, 2.0, 4.0, 7.0].iter().map(|k| k * q).collect();
        let r = spacing_report(&seq, 0.1).unwrap();
        assert_eq!(r.quantum_hz, q);
        assert_eq!(r.max_deviation, 0.0);
        assert!(r.commensurable);
        assert!((r.revival_time_s - 1.0 / q).abs() < 1e-15);
        assert!(matches!(spacing_report(&[1.0, 2.0], 0.1), Err(AnalysisError::TooFewFrequencies { .. })));
        assert_eq!(spacing_report(&[3.0, 2.0, 4.0], 0.1), Err(AnalysisError::Unsorted));
        assert_eq!(spacing_report(&[5.0, 5.0, 5.0], 0.1), Err(AnalysisError::AllDegenerate));
    }

    proptest! {
        #[test]
        fn confinement_bounds_and_scale(values in proptest::collection::vec(0.0..10.0f64, 64), alpha in 1e-6..1e6f64) {
            let frame = Array2::from_shape_vec((8, 8), values).unwrap();
            if let Some(c) = frame_confinement(&frame) {
                prop_assert!(c >= 1.0 / 64.0 - 1e-12 && c <= 1.0 + 1e-12);
                let scaled = frame_confinement(&frame.mapv(|v| v * alpha)).unwrap();
                prop_assert!((scaled / c - 1.0).abs() < 1e-12);
                let flipped = Array2::from_shape_fn((8, 8), |(i, j)| frame[[j, 7 - i]]);
                prop_assert!((frame_confinement(&flipped).unwrap() / c - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn commensurable_integer_ladder(q in 10.0..1e4f64, steps in proptest::collection::vec(1u32..6, 3..20)) {
            let mut f = vec![q];
            // the ladder always contains a unit step so q is the quantum
            for s in std::iter::once(1).chain(steps) {
                f.push(f[f.len() - 1] + f64::from(s) * q);
            }
            let r = spacing_report(&f, 0.1).unwrap();
            prop_assert!((r.quantum_hz / q - 1.0).abs() < 1e-12);
            prop_assert!(r.max_deviation < 1e-9);
            prop_assert!(r.commensurable);
        }

        #[test]
        fn envelope_scales_linearly(alpha in 0.01..100.0f64) {
            let x: Vec<f64> = (0..256).map(|k| (0.3 * k as f64).cos() * (1.0 + 0.01 * k as f64)).collect();
            let base = analytic_signal(&x);
            let scaled = analytic_signal(&x.iter().map(|v| alpha * v).collect::<Vec<_>>());
            for (a, b) in base.iter().zip(&scaled) {
                prop_assert!((b.norm() - alpha * a.norm()).abs() <= 1e-9 * alpha.max(1.0));
            }
        }

        #[test]
        fn fingerprint_bounded_and_scale_free(values in proptest::collection::vec(0.0..5.0f64, 100), alpha in 1e-3..1e3f64) {
            let frame = Array2::from_shape_vec((10, 10), values).unwrap();
            let imgs = [(0.3, 0.4), (0.7, 0.1)];
            let s = image_energy_fraction(&frame, &imgs, 0.1, 0.15);
            prop_assert!((0.0..=1.0).contains(&s));
            let t = image_energy_fraction(&frame.mapv(|v| v * alpha), &imgs, 0.1, 0.15);
            prop_assert!((s - t).abs() < 1e-12);
        }
    }
}
