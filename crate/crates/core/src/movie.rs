//! Time-indexed stacks of 2D grids and their raw on-disk form.
//!
//! Frames are indexed `[i, j]` with `i` along x and `j` along y. The raw
//! dump writes every frame as `ny` rows of `nx` little-endian `f32` values
//! (x fastest), frames back to back, next to a plain-text header.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

/// Full-rate time series recorded at one grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSeries {
    pub i: usize,
    pub j: usize,
    pub dt_s: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldMovie {
    pub times: Vec<f64>,
    pub frames: Vec<Array2<f64>>,
    pub probes: Vec<ProbeSeries>,
}

impl FieldMovie {
    pub fn new(times: Vec<f64>, frames: Vec<Array2<f64>>) -> Self {
        assert_eq!(times.len(), frames.len(), "one time per frame");
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]), "times must increase");
        FieldMovie {
            times,
            frames,
            probes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// (nx, ny) of every frame.
    pub fn shape(&self) -> (usize, usize) {
        self.frames.first().map(|f| f.dim()).unwrap_or((0, 0))
    }

    /// Snapshot interval; assumes uniform sampling.
    pub fn frame_dt(&self) -> Option<f64> {
        if self.times.len() < 2 {
            None
        } else {
            Some((self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64)
        }
    }

    /// Index of the frame closest to `t`.
    pub fn frame_index(&self, t: f64) -> Option<usize> {
        let pos = self.times.partition_point(|&x| x < t);
        match (pos.checked_sub(1), self.times.get(pos)) {
            (None, None) => None,
            (None, Some(_)) => Some(pos),
            (Some(p), None) => Some(p),
            (Some(p), Some(&next)) => Some(if (next - t) < (t - self.times[p]) { pos } else { p }),
        }
    }

    /// Shifts every timestamp by `-origin`.
    pub fn rebase_time(&mut self, origin: f64) {
        for t in &mut self.times {
            *t -= origin;
        }
    }

    /// Writes `<stem>.f32` and `<stem>.hdr` into `dir`.
    pub fn write_raw(&self, dir: &Path, stem: &str, dx_m: f64) -> io::Result<()> {
        write_raw_frames(dir, stem, &self.frames, &self.times, dx_m)
    }
}

/// Raw float dump of any frame stack (displacement or envelope).
pub fn write_raw_frames(
    dir: &Path,
    stem: &str,
    frames: &[Array2<f64>],
    times: &[f64],
    dx_m: f64,
) -> io::Result<()> {
    let (nx, ny) = frames.first().map(|f| f.dim()).unwrap_or((0, 0));
    let dt = if times.len() > 1 {
        (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
    } else {
        0.0
    };
    let mut header = String::new();
    header.push_str(&format!("nx {nx}\n"));
    header.push_str(&format!("ny {ny}\n"));
    header.push_str(&format!("dx_m {dx_m:e}\n"));
    header.push_str(&format!("dt_snapshot_s {dt:e}\n"));
    header.push_str(&format!("count {}\n", frames.len()));
    header.push_str(&format!("t0_s {:e}\n", times.first().copied().unwrap_or(0.0)));
    header.push_str("dtype f32le\nlayout row-major y-rows x-fastest\n");
    fs::write(dir.join(format!("{stem}.hdr")), header)?;

    let mut out = BufWriter::new(fs::File::create(dir.join(format!("{stem}.f32")))?);
    for frame in frames {
        for j in 0..ny {
            for i in 0..nx {
                out.write_all(&(frame[[i, j]] as f32).to_le_bytes())?;
            }
        }
    }
    out.flush()
}

/// Header of a raw dump, as written by [`write_raw_frames`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawHeader {
    pub nx: usize,
    pub ny: usize,
    pub dx_m: f64,
    pub dt_snapshot_s: f64,
    pub count: usize,
    pub t0_s: f64,
}

pub fn read_raw_frames(dir: &Path, stem: &str) -> io::Result<(RawHeader, Vec<Array2<f64>>)> {
    let text = fs::read_to_string(dir.join(format!("{stem}.hdr")))?;
    let bad = |what: &str| io::Error::new(io::ErrorKind::InvalidData, format!("header: bad {what}"));
    let field = |key: &str| -> io::Result<&str> {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
            .ok_or_else(|| bad(key))
    };
    let header = RawHeader {
        nx: field("nx")?.trim().parse().map_err(|_| bad("nx"))?,
        ny: field("ny")?.trim().parse().map_err(|_| bad("ny"))?,
        dx_m: field("dx_m")?.trim().parse().map_err(|_| bad("dx_m"))?,
        dt_snapshot_s: field("dt_snapshot_s")?.trim().parse().map_err(|_| bad("dt_snapshot_s"))?,
        count: field("count")?.trim().parse().map_err(|_| bad("count"))?,
        t0_s: field("t0_s")?.trim().parse().map_err(|_| bad("t0_s"))?,
    };
    let bytes = fs::read(dir.join(format!("{stem}.f32")))?;
    let per_frame = header.nx * header.ny * 4;
    if bytes.len() != per_frame * header.count {
        return Err(bad("payload length"));
    }
    let frames = bytes
        .chunks_exact(per_frame.max(1))
        .take(header.count)
        .map(|chunk| {
            let mut frame = Array2::zeros((header.nx, header.ny));
            for (k, v) in chunk.chunks_exact(4).enumerate() {
                let value = f32::from_le_bytes([v[0], v[1], v[2], v[3]]);
                frame[[k % header.nx, k / header.nx]] = f64::from(value);
            }
            frame
        })
        .collect();
    Ok((header, frames))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_lookup() {
        let movie = FieldMovie::new(
            vec![0.0, 1.0, 2.0],
            vec![Array2::zeros((2, 2)), Array2::zeros((2, 2)), Array2::zeros((2, 2))],
        );
        assert_eq!(movie.frame_index(-5.0), Some(0));
        assert_eq!(movie.frame_index(0.4), Some(0));
        assert_eq!(movie.frame_index(0.6), Some(1));
        assert_eq!(movie.frame_index(9.0), Some(2));
        assert_eq!(movie.frame_dt(), Some(1.0));
    }

    #[test]
    fn raw_dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<_> = (0..3)
            .map(|k| Array2::from_shape_fn((4, 3), |(i, j)| (k * 100 + i * 10 + j) as f64))
            .collect();
        let times = vec![1e-6, 2e-6, 3e-6];
        write_raw_frames(dir.path(), "movie", &frames, &times, 5e-4).unwrap();
        let (h, back) = read_raw_frames(dir.path(), "movie").unwrap();
        assert_eq!((h.nx, h.ny, h.count), (4, 3, 3));
        assert!((h.dt_snapshot_s - 1e-6).abs() < 1e-18);
        assert_eq!(back, frames);
        let raw = std::fs::read(dir.path().join("movie.f32")).unwrap();
        // second value of the first frame is x = 1, y = 0
        assert_eq!(f32::from_le_bytes([raw[4], raw[5], raw[6], raw[7]]), 10.0);
    }
}
