use std::f64::consts::PI;

use ndarray::Array2;

use flexural_revival::analysis::{self, RevivalKind};
use flexural_revival::config::{preset, Engine, RunConfig};
use flexural_revival::model::{revival_time_theoretical, BoundaryCondition, Medium, PlateSpec};
use flexural_revival::movie::FieldMovie;
use flexural_revival::pipeline;

fn modal(name: &str) -> RunConfig {
    let mut cfg = preset(name).unwrap();
    cfg.engine = Engine::Modal;
    cfg.medium = PlateSpec::default().with_boundary(BoundaryCondition::SimplySupported).into();
    cfg
}

fn bessel_j0(x: f64) -> f64 {
    let n = 400;
    (0..n)
        .map(|k| (x * (PI * (k as f64 + 0.5) / n as f64).sin()).cos())
        .sum::<f64>()
        / n as f64
}

// Free-plane envelope of the band-limited point source, pixel-summed on
// the same map as the modal frame.
fn free_plane_score(cfg: &RunConfig, radius: f64) -> f64 {
    let Medium::Plate(p) = cfg.medium else { unreachable!() };
    let a = p.flexural_coefficient().unwrap();
    let src = cfg.source;
    let sf = src.sigma_f();
    let freqs: Vec<f64> = (0..401).map(|k| src.carrier_hz + sf * (-6.0 + 12.0 * k as f64 / 400.0)).collect();
    let amp = |r: f64| {
        freqs
            .iter()
            .map(|&f| src.spectral_weight(f) * bessel_j0((2.0 * PI * f / a).sqrt() * r))
            .sum::<f64>()
    };
    let n = cfg.grid.map_points;
    let dx = p.side_m / (n - 1) as f64;
    let dr = dx / 16.0;
    let table: Vec<f64> = (0..=(p.side_m * 1.5 / dr) as usize).map(|k| amp(k as f64 * dr)).collect();
    let lookup = |r: f64| {
        let u = r / dr;
        let k = u.floor() as usize;
        table[k] + (u - k as f64) * (table[k + 1] - table[k])
    };
    let (mut inside, mut total) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let r = ((i as f64 * dx - src.x_m).powi(2) + (j as f64 * dx - src.y_m).powi(2)).sqrt();
            let e = lookup(r).powi(2);
            total += e;
            if r <= radius {
                inside += e;
            }
        }
    }
    inside / total
}

#[test]
fn initial_fingerprint_matches_free_plane_oracle() {
    let mut cfg = modal("center");
    cfg.grid.t_end_s = 5e-6;
    let sim = pipeline::simulate(&cfg).unwrap();
    let geom = pipeline::geometry(&cfg).unwrap();
    let score = analysis::fingerprint(&sim.envelope, 0.0, &cfg.source, RevivalKind::Full, &geom).unwrap();
    let oracle = free_plane_score(&cfg, geom.spot_radius_m);
    assert!((score - oracle).abs() < 0.03, "modal {score} vs free plane {oracle}");
    assert!((score - 0.567).abs() < 0.01, "frozen value drifted: {score}");
}

#[test]
fn symmetry_reduced_revival_times() {
    for (name, divisor) in [("center", 8.0), ("diagonal-third", 3.0)] {
        let cfg = modal(name);
        let sim = pipeline::simulate(&cfg).unwrap();
        let det = pipeline::detect(&cfg, &sim.envelope).unwrap();
        let t = det.full_revival().expect("full revival").time_s;
        let expect = revival_time_theoretical(&cfg.medium).unwrap() / divisor;
        assert!((t - expect).abs() < cfg.source.duration_s, "{name}: {t} vs {expect}");
    }
}

#[test]
fn carrier_does_not_move_revival() {
    let times: Vec<f64> = [300e3, 500e3, 700e3]
        .iter()
        .map(|&f| {
            let mut cfg = modal("center");
            cfg.source.carrier_hz = f;
            let sim = pipeline::simulate(&cfg).unwrap();
            pipeline::detect(&cfg, &sim.envelope).unwrap().full_revival().unwrap().time_s
        })
        .collect();
    let spread = times.iter().cloned().fold(f64::MIN, f64::max) - times.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 6e-6, "{times:?}");
}

#[test]
fn bandpass_is_linear() {
    let times: Vec<f64> = (0..256).map(|k| k as f64 * 0.25e-6).collect();
    let field = |f: f64, phase: f64| -> Vec<Array2<f64>> {
        times
            .iter()
            .map(|&t| Array2::from_shape_fn((4, 3), |(i, j)| (2.0 * PI * f * t + phase + (i * 3 + j) as f64).sin()))
            .collect()
    };
    let a = FieldMovie::new(times.clone(), field(480e3, 0.3));
    let b = FieldMovie::new(times.clone(), field(610e3, 1.1));
    let sum = FieldMovie::new(
        times.clone(),
        a.frames.iter().zip(&b.frames).map(|(x, y)| x * 2.0 - y * 0.5).collect(),
    );
    let fa = analysis::bandpass(&a, 500e3, 150e3).unwrap();
    let fb = analysis::bandpass(&b, 500e3, 150e3).unwrap();
    let fs = analysis::bandpass(&sum, 500e3, 150e3).unwrap();
    for k in 0..times.len() {
        let expect = &fa.frames[k] * 2.0 - &fb.frames[k] * 0.5;
        let diff = (&fs.frames[k] - &expect).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-9, "frame {k}: {diff}");
    }
}
