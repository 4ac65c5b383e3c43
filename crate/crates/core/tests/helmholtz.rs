use num_complex::Complex64;
use proptest::prelude::*;

use k2map::helmholtz::{
    gaussian_kernel, gaussian_smooth, helmholtz_radial_residual, k2_from_amp_phase, k_eff_map, k_log_map,
    laplacian_5pt, outline_mask, persistence_mask, Boundary, Epsilon, HelmholtzParams,
};
use k2map::synth::{evanescent_field, plane_wave, PropagationParams};
use k2map::{ComplexField, Grid, OutlineMask, ScalarField, UnitTag};

fn field(w: usize, h: usize, unit: UnitTag, f: impl FnMut(usize, usize) -> f64) -> ScalarField {
    ScalarField::from_fn(Grid::square(w, h).unwrap(), unit, f)
}

fn raw(eps: f64, sigma: f64) -> HelmholtzParams {
    HelmholtzParams {
        eps: Epsilon::Absolute(eps),
        sigma,
        ..HelmholtzParams::default()
    }
}

#[test]
fn smoothing_constant_and_zero_sigma() {
    let c = field(9, 7, UnitTag::Amplitude, |_, _| 2.5);
    for b in [Boundary::Replicate, Boundary::Mirror] {
        let s = gaussian_smooth(&c, 1.3, b).unwrap();
        assert!(s.data().iter().all(|v| (v - 2.5).abs() < 1e-14));
    }
    let r = field(9, 7, UnitTag::Amplitude, |x, y| (x * 3 + y) as f64);
    assert_eq!(gaussian_smooth(&r, 0.0, Boundary::Zero).unwrap(), r);
}

#[test]
#[allow(clippy::needless_range_loop)]
fn smoothing_impulse_matches_dense_convolution() {
    let n = 15;
    let impulse = field(n, n, UnitTag::Amplitude, |x, y| (x == 7 && y == 7) as u8 as f64);
    let out = gaussian_smooth(&impulse, 1.0, Boundary::Zero).unwrap();
    // dense 2-D kernel built independently
    let radius = 3i64;
    let mut dense = vec![vec![0.0; 7]; 7];
    let mut total = 0.0;
    for (j, row) in dense.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let (dx, dy) = (i as i64 - radius, j as i64 - radius);
            *v = (-((dx * dx + dy * dy) as f64) / 2.0).exp();
            total += *v;
        }
    }
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for j in 0..7 {
                for i in 0..7 {
                    let (sx, sy) = (x as i64 + i as i64 - radius, y as i64 + j as i64 - radius);
                    if sx >= 0 && sy >= 0 && sx < n as i64 && sy < n as i64 {
                        acc += dense[j][i] / total * impulse.get(sx as usize, sy as usize);
                    }
                }
            }
            assert!((out.get(x, y) - acc).abs() < 1e-15, "{x},{y}");
        }
    }
    assert_eq!(gaussian_kernel(1.0).len(), 7);
}

#[test]
fn laplacian_constant_and_impulse() {
    let c = field(6, 5, UnitTag::Amplitude, |_, _| 3.0);
    for b in [Boundary::Replicate, Boundary::Mirror] {
        assert!(laplacian_5pt(&c, b).unwrap().data().iter().all(|v| *v == 0.0));
    }
    let imp = field(7, 7, UnitTag::Amplitude, |x, y| (x == 3 && y == 3) as u8 as f64);
    let l = laplacian_5pt(&imp, Boundary::Replicate).unwrap();
    for y in 1usize..6 {
        for x in 1usize..6 {
            let want = match (x.abs_diff(3), y.abs_diff(3)) {
                (0, 0) => -4.0,
                (1, 0) | (0, 1) => 1.0,
                _ => 0.0,
            };
            assert_eq!(l.get(x, y), want);
        }
    }
    let tiny = field(2, 5, UnitTag::Amplitude, |_, _| 1.0);
    assert!(laplacian_5pt(&tiny, Boundary::Replicate).is_err());
}

#[test]
fn laplacian_sine_second_order() {
    let a = std::f64::consts::PI / 16.0;
    let rel_err = |n: usize, h: f64| {
        let grid = Grid::new(n, n, h, h).unwrap();
        let u = ScalarField::from_fn(grid, UnitTag::Amplitude, |x, y| {
            let (px, py) = (x as f64 * h, y as f64 * h);
            (a * px).sin() * (a * py).sin()
        });
        let l = laplacian_5pt(&u, Boundary::Replicate).unwrap();
        let mut worst: f64 = 0.0;
        for y in 1..n - 1 {
            for x in 1..n - 1 {
                let exact = -2.0 * a * a * u.get(x, y);
                if exact.abs() > 1e-3 {
                    worst = worst.max(((l.get(x, y) - exact) / exact).abs());
                }
            }
        }
        worst
    };
    let (e1, e2) = (rel_err(64, 1.0), rel_err(128, 0.5));
    let ratio = e1 / e2;
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    assert!(e1 < 1e-2);
}

#[test]
fn k_eff_closed_forms() {
    let gamma = 0.1;
    let a = field(40, 8, UnitTag::Amplitude, |x, _| (-gamma * x as f64).exp());
    let k = k_eff_map(&a, &raw(0.0, 0.0)).unwrap();
    let want = -(2.0 * gamma.cosh() - 2.0);
    assert!((want + 0.0100083).abs() < 1e-7);
    for x in 1..39 {
        for y in 0..8 {
            assert!((k.get(x, y) - want).abs() < 1e-12);
        }
    }

    let kk = 0.2;
    let s = field(12, 6, UnitTag::Amplitude, |x, _| (kk * (x + 2) as f64).sin());
    let k = k_eff_map(&s, &raw(0.0, 0.0)).unwrap();
    let want = 2.0 - 2.0 * kk.cos();
    assert!((want - 0.0399).abs() < 1e-4);
    for x in 1..11 {
        assert!((k.get(x, 3) - want).abs() < 1e-12);
    }

    let c = field(8, 8, UnitTag::Amplitude, |_, _| 0.7);
    assert!(k_eff_map(&c, &HelmholtzParams::default()).unwrap().data().iter().all(|v| *v == 0.0));
}

#[test]
fn k_log_examples() {
    let c = field(8, 8, UnitTag::Amplitude, |_, _| 0.7);
    assert!(k_log_map(&c, &raw(0.0, 1.0)).unwrap().data().iter().all(|v| v.abs() < 1e-15));

    let e = field(30, 6, UnitTag::Amplitude, |x, _| (-0.1 * x as f64).exp());
    let kl = k_log_map(&e, &raw(0.0, 0.0)).unwrap();
    let ke = k_eff_map(&e, &raw(0.0, 0.0)).unwrap();
    for x in 1..29 {
        assert!(kl.get(x, 3).abs() < 1e-12);
        assert!(ke.get(x, 3) < 0.0);
    }
}

#[test]
fn k_eff_rejects_wrong_unit_and_negatives() {
    let p = field(5, 5, UnitTag::LinearPower, |_, _| 1.0);
    assert!(k_eff_map(&p, &HelmholtzParams::default()).is_err());
    let n = field(5, 5, UnitTag::Amplitude, |x, _| x as f64 - 1.0);
    assert!(k_log_map(&n, &HelmholtzParams::default()).is_err());
}

#[test]
fn outline_examples() {
    let k = ScalarField::new(Grid::new(3, 1, 1.0, 1.0).unwrap(), vec![-1.0, 0.0, 1.0], UnitTag::KSquared).unwrap();
    assert_eq!(outline_mask(&k, 0.0).unwrap().bits(), &[true, false, false]);
    let pos = field(4, 4, UnitTag::KSquared, |_, _| 0.5);
    assert_eq!(outline_mask(&pos, 0.0).unwrap().count(), 0);
    assert!(outline_mask(&field(4, 4, UnitTag::Amplitude, |_, _| -1.0), 0.0).is_err());

    let grid = Grid::square(48, 48).unwrap();
    let u = evanescent_field(grid, (24.0, 24.0), &PropagationParams { gamma: 0.1, ..Default::default() }).unwrap();
    let m = outline_mask(&k_eff_map(&u, &HelmholtzParams::default()).unwrap(), 0.0).unwrap();
    let interior = (2..46).flat_map(|y| (2..46).map(move |x| (x, y)));
    let (hit, n) = interior.fold((0, 0), |(h, n), (x, y)| (h + m.get(x, y) as usize, n + 1));
    assert!(hit as f64 >= 0.99 * n as f64);
}

fn composite() -> ScalarField {
    field(64, 24, UnitTag::Amplitude, |x, y| {
        let lobe = |x: f64| (std::f64::consts::PI / 40.0 * (x - 16.0)).cos();
        let v = if x < 32 { lobe(x as f64) } else { lobe(32.0) * (-0.1 * (x - 32) as f64).exp() };
        v * (1.0 + 0.05 * (0.4 * y as f64).sin())
    })
}

#[test]
fn persistence_matches_per_scale_intersection() {
    let a = composite();
    let params = HelmholtzParams::default();
    let got = persistence_mask(&a, &params).unwrap();
    let mut want = OutlineMask::from_fn(64, 24, |_, _| true);
    for &s in &params.scales {
        let p = HelmholtzParams { sigma: s, ..params.clone() };
        let m = outline_mask(&k_log_map(&a, &p).unwrap(), 0.0).unwrap();
        want = OutlineMask::from_fn(64, 24, |x, y| want.get(x, y) && m.get(x, y));
    }
    assert_eq!(got, want);

    let single = HelmholtzParams {
        scales: vec![1.0],
        ..params.clone()
    };
    let one = outline_mask(&k_log_map(&a, &HelmholtzParams { sigma: 1.0, ..params.clone() }).unwrap(), 0.0).unwrap();
    assert_eq!(persistence_mask(&a, &single).unwrap(), one);
    let none = HelmholtzParams { scales: vec![], ..params };
    assert!(persistence_mask(&a, &none).is_err());
}

#[test]
fn amp_phase_examples() {
    let grid = Grid::square(24, 24).unwrap();
    let out = k2_from_amp_phase(&plane_wave(grid, (0.3, 0.4)), &HelmholtzParams::default()).unwrap();
    let disc = (2.0 - 2.0 * 0.3f64.cos()) + (2.0 - 2.0 * 0.4f64.cos());
    for y in 1..23 {
        for x in 1..23 {
            assert!((out.k2.get(x, y) - disc).abs() < 1e-12);
            assert!((out.k2.get(x, y) - 0.25).abs() < 0.01);
        }
    }
    let one = ComplexField::from_fn(grid, |_, _| Complex64::new(1.0, 0.0));
    let z = k2_from_amp_phase(&one, &HelmholtzParams::default()).unwrap();
    assert!(z.k2.data().iter().all(|v| *v == 0.0));
}

#[test]
fn amp_phase_flags_near_zero_modulus() {
    let grid = Grid::square(12, 12).unwrap();
    let u = ComplexField::from_fn(grid, |x, y| {
        if x == 6 && y == 6 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(1.0, 0.2 * x as f64)
        }
    });
    let out = k2_from_amp_phase(&u, &HelmholtzParams::default()).unwrap();
    assert!(!out.valid.get(6, 6) && !out.valid.get(5, 6) && !out.valid.get(6, 7));
    assert!(out.k2.get(6, 6).is_nan());
    assert!(out.valid.get(1, 1));
    assert!(out.valid_values().all(|v| v.is_finite()));
}

#[test]
fn radial_residual_examples() {
    let sample = |h: f64| {
        let n = (5.0 / h).round() as usize;
        let r: Vec<f64> = (0..=n).map(|i| 5.0 + i as f64 * h).collect();
        let u: Vec<Complex64> = r.iter().map(|&r| Complex64::new(0.0, r).exp() / r).collect();
        helmholtz_radial_residual(&r, &u, 1.0).unwrap()
    };
    let (a, b) = (sample(0.01), sample(0.005));
    assert!(a <= 1e-3);
    assert!((3.5..=4.5).contains(&(a / b)));
    let r = [1.0, 1.5, 2.0, 3.0];
    assert_eq!(helmholtz_radial_residual(&r, &[Complex64::new(0.0, 0.0); 4], 2.0).unwrap(), 0.0);
    assert!(helmholtz_radial_residual(&r[..2], &[Complex64::new(0.0, 0.0); 2], 1.0).is_err());
}

#[test]
fn radial_residual_nonuniform_grid() {
    // geometric spacing, still annihilates the exact solution to second order
    let r: Vec<f64> = (0..400).map(|i| 5.0 * 1.0015f64.powi(i)).collect();
    let u: Vec<Complex64> = r.iter().map(|&r| Complex64::new(0.0, 2.0 * r).exp() / r).collect();
    assert!(helmholtz_radial_residual(&r, &u, 2.0).unwrap() < 1e-3);
}

fn small_field() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (3usize..10, 3usize..10).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0.01f64..5.0, w * h)))
}

fn boundary() -> impl Strategy<Value = Boundary> {
    prop_oneof![Just(Boundary::Replicate), Just(Boundary::Mirror), Just(Boundary::Zero)]
}

proptest! {
    #[test]
    fn laplacian_is_linear((w, h, f) in small_field(), seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0, bd in boundary()) {
        let grid = Grid::new(w, h, 0.7, 1.3).unwrap();
        let g: Vec<f64> = f.iter().enumerate().map(|(i, v)| ((i as u64 * 31 + seed) % 17) as f64 * 0.1 - v).collect();
        let fs = ScalarField::new(grid, f.clone(), UnitTag::Amplitude).unwrap();
        let gs = ScalarField::new(grid, g.clone(), UnitTag::Amplitude).unwrap();
        let combo = ScalarField::new(grid, f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect(), UnitTag::Amplitude).unwrap();
        let (lf, lg, lc) = (laplacian_5pt(&fs, bd).unwrap(), laplacian_5pt(&gs, bd).unwrap(), laplacian_5pt(&combo, bd).unwrap());
        for i in 0..w * h {
            prop_assert!((lc.data()[i] - (a * lf.data()[i] + b * lg.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_commutes_with_shift((w, h, f) in small_field(), c in -10.0f64..10.0, sigma in 0.0f64..2.5, bd in prop_oneof![Just(Boundary::Replicate), Just(Boundary::Mirror)]) {
        let grid = Grid::square(w, h).unwrap();
        let fs = ScalarField::new(grid, f.clone(), UnitTag::Amplitude).unwrap();
        let shifted = fs.map(UnitTag::Amplitude, |v| v + c);
        let (a, b) = (gaussian_smooth(&shifted, sigma, bd).unwrap(), gaussian_smooth(&fs, sigma, bd).unwrap());
        for i in 0..w * h {
            prop_assert!((a.data()[i] - b.data()[i] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn k_log_gain_invariant((w, h, f) in small_field(), c in 1e-3f64..1e3, sigma in 0.0f64..2.0) {
        let grid = Grid::square(w, h).unwrap();
        let a = ScalarField::new(grid, f, UnitTag::Amplitude).unwrap();
        let p = HelmholtzParams { eps: Epsilon::Absolute(0.0), sigma, ..HelmholtzParams::default() };
        let base = k_log_map(&a, &p).unwrap();
        let scaled = k_log_map(&a.map(UnitTag::Amplitude, |v| c * v), &p).unwrap();
        for (x, y) in base.data().iter().zip(scaled.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn phase_term_nonnegative((w, h, amp) in small_field(), phases in prop::collection::vec(-10.0f64..10.0, 81)) {
        let grid = Grid::square(w, h).unwrap();
        let u = ComplexField::from_fn(grid, |x, y| Complex64::from_polar(amp[y * w + x], phases[(y * w + x) % 81]));
        let out = k2_from_amp_phase(&u, &HelmholtzParams::default()).unwrap();
        for i in 0..w * h {
            prop_assert!(out.phase_term.data()[i] >= 0.0);
            if out.valid.bits()[i] {
                prop_assert_eq!(out.k2.data()[i], out.phase_term.data()[i] + out.curvature_term.data()[i]);
            }
        }
    }
}
