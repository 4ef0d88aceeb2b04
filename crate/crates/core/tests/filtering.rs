use proptest::prelude::*;

use gaze_core::filtering::{avg3_step, kf_init, kf_step, Avg3, FilterKind, Kalman2D, KalmanConfig, PointFilter};

fn config() -> impl Strategy<Value = KalmanConfig> {
    (-4.0..2.0f64, -4.0..2.0f64, 0.001..1.0f64).prop_map(|(q, r, dt)| KalmanConfig { q: 10f64.powf(q), r: 10f64.powf(r), dt })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_stays_symmetric_psd(cfg in config(), zs in proptest::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..300)) {
        let mut f = Kalman2D::new([0.0, 0.0], cfg).unwrap();
        for (x, y) in zs {
            let out = f.step([x, y]);
            prop_assert!(out.iter().all(|v| v.is_finite()));
            let p = f.covariance();
            prop_assert_eq!(p, p.transpose());
            let eig = p.symmetric_eigen().eigenvalues;
            prop_assert!(eig.min() >= -1e-9);
        }
    }

    #[test]
    fn axes_are_independent(cfg in config(), xs in proptest::collection::vec((-1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64), 1..100)) {
        let mut a = Kalman2D::new([1.0, 2.0], cfg).unwrap();
        let mut b = Kalman2D::new([1.0, -7.0], cfg).unwrap();
        for (x, y1, y2) in xs {
            let (oa, ob) = (a.step([x, y1]), b.step([x, y2]));
            prop_assert_eq!(oa[0].to_bits(), ob[0].to_bits());
        }
    }

    #[test]
    fn avg3_is_the_mean_of_the_last_three(zs in proptest::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..20)) {
        let mut f = Avg3::new();
        for (i, &(x, y)) in zs.iter().enumerate() {
            let out = avg3_step(&mut f, [x, y]);
            prop_assert!(f.len() <= 3);
            let window = &zs[i.saturating_sub(2)..=i];
            let mx = window.iter().map(|p| p.0).sum::<f64>() / window.len() as f64;
            let my = window.iter().map(|p| p.1).sum::<f64>() / window.len() as f64;
            prop_assert!((out[0] - mx).abs() < 1e-9 && (out[1] - my).abs() < 1e-9);
        }
    }
}

#[test]
fn constant_velocity_is_tracked_exactly() {
    let (v, dt) = ([3.0, -1.5], 1.0 / 30.0);
    let mut f = kf_init([10.0, 20.0], 1e-3, 1e-2, dt).unwrap();
    let mut last = [0.0; 2];
    for k in 1..=1000 {
        let t = k as f64 * dt;
        let z = [10.0 + v[0] * t, 20.0 + v[1] * t];
        last = kf_step(&mut f, z);
        if k == 1000 {
            assert!((last[0] - z[0]).abs() < 1e-4 && (last[1] - z[1]).abs() < 1e-4, "{last:?} vs {z:?}");
        }
    }
    let vel = f.velocity();
    assert!((vel[0] - v[0]).abs() < 1e-4 && (vel[1] - v[1]).abs() < 1e-4, "{vel:?}");
    let _ = last;
}

#[test]
fn long_gaps_restart_the_filter() {
    let cfg = KalmanConfig { q: 1e-3, r: 1.0, dt: 0.1 };
    let mut f = PointFilter::new(FilterKind::Kalman, cfg).unwrap();
    f.step_at(0.0, [0.0, 0.0]);
    f.step_at(0.1, [0.0, 0.0]);
    // a jump after a short gap is smoothed
    let smoothed = f.step_at(0.2, [100.0, 100.0]);
    assert!(smoothed[0] < 100.0);
    // the same jump after a long gap is taken as is
    assert_eq!(f.step_at(5.0, [50.0, -50.0]), [50.0, -50.0]);
}

#[test]
fn invalid_configs_are_rejected() {
    for (q, r, dt) in [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, f64::NAN)] {
        assert!(kf_init([0.0, 0.0], q, r, dt).is_err());
    }
}
