use proptest::prelude::*;

use snls_core::dynamics::{Nonlinearity, StepPlan};
use snls_core::experiments::{
    mass_martingale, regularization_sweep, scatter_study, DetectorOptions, PullbackGauge, Setup, SweepOptions,
};
use snls_core::field::{Field, Grid};
use snls_core::noise::{SpatialProfile, TemporalProfile};
use snls_core::Complex64;

fn line(seed: u64, amp: Complex64, temporal: TemporalProfile, t_end: f64, dt: f64) -> Setup {
    let grid = Grid::new(1, 128, 60.0).unwrap();
    Setup {
        x0: Field::from_fn(&grid, |x| Complex64::new((-x[0] * x[0] / 2.0).exp(), 0.0)),
        grid,
        nl: Nonlinearity::new(5.5, -1.0),
        plan: StepPlan::strang(dt).with_stride(usize::MAX),
        t_end,
        horizon: t_end,
        mesh_cells: (t_end / dt).round() as usize,
        channels: vec![(SpatialProfile::gaussian_decay(amp, 3.0), temporal)],
        master_seed: seed,
    }
}

#[test]
fn detector_is_phase_blind() {
    let s = line(21, Complex64::new(0.0, 1.0), TemporalProfile::ExpDecay { c: 0.5, rate: 2.0 }, 2.0, 0.01);
    let mut rotated = s.clone();
    rotated.x0 = s.x0.scale(Complex64::from_polar(1.0, 1.3));
    let opts = DetectorOptions::default();
    let a = scatter_study(&s, &opts, 3).unwrap();
    let b = scatter_study(&rotated, &opts, 3).unwrap();
    for (va, vb) in a.verdicts.iter().zip(&b.verdicts) {
        assert_eq!(va.flag, vb.flag);
        for (x, y) in va.deltas.iter().zip(&vb.deltas) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
        }
    }
}

#[test]
fn martingale_interval_shrinks_like_clt() {
    // quadrupling M halves the standard error, within 30%
    let s = line(22, Complex64::new(0.5, 0.5), TemporalProfile::Constant { c0: 1.0 }, 0.5, 0.05);
    let small = mass_martingale(&s, 100).unwrap();
    let large = mass_martingale(&s, 400).unwrap();
    let ratio = large.std_error / small.std_error;
    assert!((ratio - 0.5).abs() <= 0.15, "ratio {ratio}");
    assert!(large.within(3.0));
}

#[test]
fn repeated_baseline_gives_identical_rows() {
    let grid = Grid::new(3, 16, 20.0).unwrap();
    let s = Setup {
        x0: Field::from_fn(&grid, |x| {
            Complex64::new((-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 4.5).exp(), 0.0)
        }),
        grid,
        nl: Nonlinearity::new(1.5, 1.0),
        plan: StepPlan::strang(0.05).with_stride(usize::MAX),
        t_end: 1.0,
        horizon: 1.0,
        mesh_cells: 20,
        channels: vec![(SpatialProfile::constant(Complex64::new(0.0, 0.5)), TemporalProfile::Constant { c0: 0.5 })],
        master_seed: 23,
    };
    let det = DetectorOptions {
        gauge: PullbackGauge::Plain,
        ..DetectorOptions::default()
    };
    let sweep = SweepOptions {
        v1_re: vec![0.0, 1.0, 0.0],
        v1_im: 0.5,
        channel: 0,
        paths: 2,
        theta: None,
    };
    let r = regularization_sweep(&s, &sweep, &det, "t").unwrap();
    assert_eq!(r.rows[0].fraction, r.rows[2].fraction);
    assert_eq!(r.rows[0].mean_epsilon, r.rows[2].mean_epsilon);
    assert_eq!(r.verdicts[0], r.verdicts[2]);
    assert!(r.rows[1].mean_epsilon < r.rows[0].mean_epsilon);
    let again = regularization_sweep(&s, &sweep, &det, "t").unwrap();
    assert_eq!(r, again);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lp_norms_are_homogeneous(c in -3.0f64..3.0, p in 1.0f64..8.0, w in 0.5f64..3.0) {
        let g = Grid::new(1, 64, 20.0).unwrap();
        let f = Field::from_fn(&g, |x| Complex64::new((-x[0] * x[0] / (2.0 * w * w)).exp(), 0.2 * x[0].sin()));
        let lhs = f.scale(Complex64::new(c, 0.0)).norm_lp(p).unwrap();
        let rhs = c.abs() * f.norm_lp(p).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn parseval_for_gradient(k in -10i32..10, amp in 0.1f64..2.0) {
        // |∇ e^{ikx}|₂² = |k|² |e^{ikx}|₂² on the discrete grid
        let g = Grid::new(1, 64, 20.0).unwrap();
        let kk = 2.0 * std::f64::consts::PI * k as f64 / 20.0;
        let f = Field::from_fn(&g, |x| Complex64::from_polar(amp, kk * x[0]));
        let expect = kk * kk * f.norm_l2().powi(2);
        prop_assert!((f.gradient_sq_norm() - expect).abs() <= 1e-10 * expect.max(1.0));
    }
}
