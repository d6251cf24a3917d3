use std::f64::consts::PI;

use ndarray::Array2;

use flexural_revival::config::{Engine, RunConfig};
use flexural_revival::fdtd::{FieldState, Stepper};
use flexural_revival::model::{BoundaryCondition, GridSpec, Medium, PlateSpec};
use flexural_revival::movie::FieldMovie;
use flexural_revival::pipeline::{self, RunError};
use flexural_revival::spectral::{assemble, eigen_solve, frequencies_from_timeseries};

fn plate(bc: BoundaryCondition) -> Medium {
    PlateSpec::default().with_boundary(bc).into()
}

#[test]
fn fdtd_rings_at_discrete_eigenfrequencies() {
    for bc in [BoundaryCondition::Clamped, BoundaryCondition::SimplySupported] {
        let m = plate(bc);
        let n = 24;
        let g = GridSpec::stable(n, &m, 0.0, 0.5).unwrap();
        let es = eigen_solve(&assemble(&m, &g).unwrap(), 8).unwrap();
        let picks = [(0usize, 1.0), (3, 0.7), (7, 0.4)];
        let mut w = Array2::zeros((n, n));
        for (k, amp) in picks {
            w = w + es.mode_shape(k) * amp;
        }
        let mut state = FieldState::at_rest(w);
        let mut st = Stepper::new(&m, &g).unwrap();
        let steps = (0.05 / g.dt_s) as usize;
        let mut samples = Vec::with_capacity(steps);
        for _ in 0..steps {
            st.step(&mut state, None).unwrap();
            samples.push(state.curr[[7, 11]]);
        }
        let peaks = frequencies_from_timeseries(&samples, g.dt_s, 3, 1e-3).unwrap();
        let mut found = peaks.frequencies_hz.clone();
        found.sort_by(f64::total_cmp);
        for ((k, _), f) in picks.iter().zip(&found) {
            let omega = 2.0 * PI * es.frequencies_hz[*k];
            let leapfrog = (1.0 - 0.5 * (omega * g.dt_s).powi(2)).acos() / g.dt_s / (2.0 * PI);
            assert!((f / leapfrog - 1.0).abs() < 1e-3, "{bc:?} mode {k}: {f} vs {leapfrog}");
        }
    }
}

#[test]
fn energy_drift_without_forcing() {
    for bc in [BoundaryCondition::Clamped, BoundaryCondition::SimplySupported] {
        let m = plate(bc);
        let n = 30;
        let g = GridSpec::stable(n, &m, 0.0, 0.9).unwrap();
        let w = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                return 0.0;
            }
            let (x, y) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
            (x * y * (1.0 - x) * (1.0 - y)).powi(2) * (1.0 + (7.0 * x + 3.0 * y).sin())
        });
        let mut state = FieldState::at_rest(w);
        let mut st = Stepper::new(&m, &g).unwrap();
        st.step(&mut state, None).unwrap();
        let e0 = st.energy(&state);
        for _ in 0..10_000 {
            st.step(&mut state, None).unwrap();
        }
        let drift = (st.energy(&state) - e0).abs() / e0;
        assert!(drift < 1e-6, "{bc:?}: drift {drift:e}");
    }
}

fn coarse_oracle_config(oversample: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.engine = Engine::Modal;
    cfg.medium = plate(BoundaryCondition::SimplySupported);
    cfg.source.carrier_hz = 50e3;
    cfg.source.duration_s = 30e-6;
    cfg.grid.map_points = 40;
    cfg.grid.oversample = oversample;
    cfg.grid.t_end_s = 100e-6;
    cfg
}

#[test]
fn compare_error_shrinks_at_second_order() {
    let errors: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&os| {
            let r = pipeline::compare_engines(&coarse_oracle_config(os)).unwrap();
            assert!(r.frames_compared > 10);
            r.rms_relative
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    let order = (errors[1] / errors[2]).log2();
    assert!((1.6..2.6).contains(&order), "order {order} from {errors:?}");
}

#[test]
fn zero_duration_compare_is_empty() {
    let mut cfg = coarse_oracle_config(1);
    cfg.grid.t_end_s = 0.0;
    let r = pipeline::compare_engines(&cfg).unwrap();
    assert!(r.is_empty());
    assert_eq!(r.revival_difference_s(), None);
}

#[test]
fn compare_needs_simple_support() {
    let mut cfg = coarse_oracle_config(1);
    cfg.medium = plate(BoundaryCondition::Clamped);
    assert!(matches!(pipeline::compare_engines(&cfg), Err(RunError::NotSimplySupported)));
}

#[test]
fn mismatched_movies_rejected() {
    let a = FieldMovie::new(vec![0.0], vec![Array2::zeros((10, 10))]);
    let b = FieldMovie::new(vec![0.0], vec![Array2::zeros((12, 12))]);
    let err = pipeline::movie_rms_difference(&a, &b, 0.0).unwrap_err();
    assert!(matches!(err, RunError::GridMismatch(..)));
    assert_eq!(err.exit_code(), 2);
}
