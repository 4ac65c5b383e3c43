//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use k2map::ddm::{
    self, forward_sample, loss_drift, loss_noise, loss_recon, one_step_reconstruct, Conditioning, GaussianOracle,
    PredictorOutput, StepSchedule,
};
use k2map::helmholtz::{
    helmholtz_radial_residual, k2_from_amp_phase, k_eff_map, k_log_map, laplacian_5pt, outline_mask, Boundary,
    Epsilon, HelmholtzParams,
};
use k2map::localization::{evaluate_localization, knn_locate, FingerprintDb, LocalizationConfig};
use k2map::metrics::{nmse, psnr, rmse, ssim_global};
use k2map::synth::plane_wave;
use k2map::{Grid, ScalarField, UnitTag};

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn time_min<T>(reps: usize, mut f: impl FnMut() -> T) -> (Duration, T) {
    let mut best = Duration::MAX;
    let mut last = None;
    for _ in 0..reps {
        let start = Instant::now();
        let v = f();
        best = best.min(start.elapsed());
        last = Some(v);
    }
    (best, last.unwrap())
}

fn sin_field(n: usize, a: f64, b: f64) -> (ScalarField, ScalarField) {
    let h = 1.0 / n as f64;
    let grid = Grid::new(n, n, h, h).unwrap();
    let f = ScalarField::from_fn(grid, UnitTag::Amplitude, |x, y| {
        let (px, py) = grid.center(x, y);
        (a * px).sin() * (b * py).sin()
    });
    let exact = f.map(UnitTag::Amplitude, |v| -(a * a + b * b) * v);
    (f, exact)
}

fn interior_max_err(approx: &ScalarField, exact: &ScalarField, margin: usize) -> f64 {
    let (w, h) = (approx.width(), approx.height());
    let mut worst: f64 = 0.0;
    for y in margin..h - margin {
        for x in margin..w - margin {
            worst = worst.max((approx.get(x, y) - exact.get(x, y)).abs());
        }
    }
    worst
}

fn c1_stencil_convergence() -> Outcome {
    let (a, b) = (2.0 * std::f64::consts::PI, 3.0 * std::f64::consts::PI);
    let errs: Vec<f64> = [64, 128]
        .iter()
        .map(|&n| {
            let (f, exact) = sin_field(n, a, b);
            interior_max_err(&laplacian_5pt(&f, Boundary::Replicate).unwrap(), &exact, 1)
        })
        .collect();
    let ratio = errs[0] / errs[1];
    let (f, _) = sin_field(512, a, b);
    let (elapsed, _) = time_min(3, || laplacian_5pt(&f, Boundary::Replicate).unwrap());
    let ok = (3.5..=4.5).contains(&ratio) && elapsed < Duration::from_secs(1);
    (ok, format!("error ratio {ratio:.4}, 512^2 in {:.2} ms", elapsed.as_secs_f64() * 1e3))
}

fn c2_sign_theory() -> Outcome {
    let (w, h) = (96, 32);
    let junction = 40usize;
    let gamma = 0.1;
    let k = std::f64::consts::PI / 50.0;
    let lobe = |x: f64| (k * (x - 20.0)).cos();
    let grid = Grid::square(w, h).unwrap();
    let amp = ScalarField::from_fn(grid, UnitTag::Amplitude, |x, _| {
        if x < junction {
            lobe(x as f64)
        } else {
            lobe(junction as f64) * (-gamma * (x - junction) as f64).exp()
        }
    });
    let params = HelmholtzParams {
        sigma: 1.0,
        ..HelmholtzParams::default()
    };
    let start = Instant::now();
    let mask = outline_mask(&k_eff_map(&amp, &params).unwrap(), 0.0).unwrap();
    let elapsed = start.elapsed();
    let margin = 4;
    let (mut ev_hit, mut ev_n, mut sin_hit, mut sin_n) = (0, 0, 0, 0);
    for y in margin..h - margin {
        for x in margin..w - margin {
            if x.abs_diff(junction) <= margin {
                continue;
            }
            if x < junction {
                sin_n += 1;
                sin_hit += mask.get(x, y) as usize;
            } else {
                ev_n += 1;
                ev_hit += mask.get(x, y) as usize;
            }
        }
    }
    let ev = ev_hit as f64 / ev_n as f64;
    let sn = sin_hit as f64 / sin_n as f64;
    let ok = ev >= 0.95 && sn <= 0.05 && elapsed < Duration::from_secs(1);
    (
        ok,
        format!(
            "evanescent flagged {:.1}%, sinusoidal flagged {:.1}%, {:.2} ms",
            ev * 100.0,
            sn * 100.0,
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn c3_gain_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = HelmholtzParams {
        eps: Epsilon::Absolute(0.0),
        ..HelmholtzParams::default()
    };
    let mut mismatches = 0;
    for _ in 0..100 {
        let grid = Grid::square(32, 32).unwrap();
        let a = ScalarField::from_fn(grid, UnitTag::Amplitude, |_, _| rng.random_range(0.05..1.0));
        let base = outline_mask(&k_log_map(&a, &params).unwrap(), 0.0).unwrap();
        for c in [0.1, 1.0, 1000.0] {
            let scaled = a.map(UnitTag::Amplitude, |v| c * v);
            let m = outline_mask(&k_log_map(&scaled, &params).unwrap(), 0.0).unwrap();
            if m != base {
                mismatches += 1;
            }
        }
    }
    (mismatches == 0, format!("{mismatches} of 300 masks differ"))
}

fn c4_eikonal() -> Outcome {
    let (n, h) = (48usize, 1.0);
    let grid = Grid::new(n, n, h, h).unwrap();
    let params = HelmholtzParams::default();
    let mut worst: f64 = 0.0;
    for i in 0..24 {
        let ang = i as f64 * std::f64::consts::TAU / 24.0;
        for mag in [0.05, 0.2, 0.35, 0.5] {
            let (kx, ky) = (mag * ang.cos() / h, mag * ang.sin() / h);
            let out = k2_from_amp_phase(&plane_wave(grid, (kx, ky)), &params).unwrap();
            let disc = (2.0 - 2.0 * (kx * h).cos()) / (h * h) + (2.0 - 2.0 * (ky * h).cos()) / (h * h);
            for y in 1..n - 1 {
                for x in 1..n - 1 {
                    let rel = (out.k2.get(x, y) - disc).abs() / disc;
                    worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
                }
            }
        }
    }
    (worst <= 0.02, format!("max relative deviation {worst:.3e}"))
}

fn radial_residual(h: f64) -> f64 {
    let n = ((10.0 - 5.0) / h).round() as usize;
    let r: Vec<f64> = (0..=n).map(|i| 5.0 + i as f64 * h).collect();
    let u: Vec<Complex64> = r.iter().map(|&r| Complex64::new(0.0, r).exp() / r).collect();
    helmholtz_radial_residual(&r, &u, 1.0).unwrap()
}

fn c5_helmholtz_residual() -> Outcome {
    let (r1, r2) = (radial_residual(0.01), radial_residual(0.005));
    let ratio = r1 / r2;
    let ok = r1 <= 1e-3 && (3.5..=4.5).contains(&ratio);
    (ok, format!("residual {r1:.3e} at h=0.01, ratio {ratio:.4}"))
}

fn c6_exact_inversion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x0: Vec<f64> = (0..4096).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut worst: f64 = 0.0;
    for i in 1..=10 {
        let t = i as f64 / 10.0;
        let (state, eps) = forward_sample(&x0, t, &mut rng).unwrap();
        let pred = PredictorOutput {
            f_hat: x0.iter().map(|v| -v).collect(),
            eps_hat: eps,
        };
        let rec = one_step_reconstruct(&state, &pred).unwrap();
        worst = rec.iter().zip(&x0).fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }
    (worst <= 1e-10, format!("max error {worst:.3e}"))
}

fn c7_distribution() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let oracle = GaussianOracle::new(2.0, 1.0).unwrap();
    let schedule = StepSchedule::uniform(100).unwrap();
    let runs = 100_000;
    let start = Instant::now();
    let x = pool.install(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        ddm::sample(&oracle, runs, &schedule, &Conditioning::none(), &mut rng).unwrap()
    });
    let elapsed = start.elapsed();
    let n = runs as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se_mean = (var / n).sqrt();
    let se_var = var * (2.0 / (n - 1.0)).sqrt();
    let z_mean = (mean - 2.0) / se_mean;
    let z_var = (var - 1.0) / se_var;
    let ok = z_mean.abs() <= 3.0 && z_var.abs() <= 3.0 && elapsed < Duration::from_secs(60);
    (
        ok,
        format!(
            "mean {mean:.4} ({z_mean:+.2} SE), var {var:.4} ({z_var:+.2} SE), {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Same check with predictors drawn from the posterior instead of its mean.
fn c7_sampling_variant() -> Outcome {
    let oracle = GaussianOracle::new(2.0, 1.0).unwrap().sampling(77);
    let schedule = StepSchedule::uniform(100).unwrap();
    let runs = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = ddm::sample(&oracle, runs, &schedule, &Conditioning::none(), &mut rng).unwrap();
    let n = runs as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let z_mean = (mean - 2.0) / (var / n).sqrt();
    let z_var = (var - 1.0) / (var * (2.0 / (n - 1.0)).sqrt());
    (
        z_mean.abs() <= 3.0 && z_var.abs() <= 3.0,
        format!("mean {mean:.4} ({z_mean:+.2} SE), var {var:.4} ({z_var:+.2} SE)"),
    )
}

fn c8_losses() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut zero_ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let mut v = || -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let (z0, eps, f_hat, eps_hat, z0_hat) = (v(), v(), v(), v(), v());
        let neg: Vec<f64> = z0.iter().map(|x| -x).collect();
        zero_ok &= loss_drift(&neg, &z0).unwrap() == 0.0
            && loss_noise(&eps, &eps).unwrap() == 0.0
            && loss_recon(&z0, &z0).unwrap() == 0.0;

        let mut drift = 0.0;
        let mut noise = 0.0;
        let mut recon = 0.0;
        for i in 0..n {
            drift += (f_hat[i] + z0[i]) * (f_hat[i] + z0[i]);
            noise += (eps_hat[i] - eps[i]) * (eps_hat[i] - eps[i]);
            recon += (z0_hat[i] - z0[i]) * (z0_hat[i] - z0[i]);
        }
        let nf = n as f64;
        worst = worst
            .max((loss_drift(&f_hat, &z0).unwrap() - drift / nf).abs())
            .max((loss_noise(&eps_hat, &eps).unwrap() - noise / nf).abs())
            .max((loss_recon(&z0_hat, &z0).unwrap() - recon / nf).abs());
    }
    (zero_ok && worst <= 1e-12, format!("zero at truth: {zero_ok}, max deviation {worst:.3e}"))
}

fn c9_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (w, h) = (rng.random_range(4..40), rng.random_range(4..40));
        let grid = Grid::square(w, h).unwrap();
        let gt = ScalarField::from_fn(grid, UnitTag::NormalizedGray, |_, _| rng.random::<f64>());
        let pred = ScalarField::from_fn(grid, UnitTag::NormalizedGray, |_, _| rng.random::<f64>());
        let (p, g) = (pred.data(), gt.data());
        let n = p.len() as f64;
        let se: f64 = p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
        let energy: f64 = g.iter().map(|b| b * b).sum();
        let mse = se / n;
        let (mp, mg) = (p.iter().sum::<f64>() / n, g.iter().sum::<f64>() / n);
        let vp = p.iter().map(|a| (a - mp) * (a - mp)).sum::<f64>() / n;
        let vg = g.iter().map(|b| (b - mg) * (b - mg)).sum::<f64>() / n;
        let cov = p.iter().zip(g).map(|(a, b)| (a - mp) * (b - mg)).sum::<f64>() / n;
        let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
        let ssim = ((2.0 * mp * mg + c1) * (2.0 * cov + c2)) / ((mp * mp + mg * mg + c1) * (vp + vg + c2));
        let ps = 10.0 * (1.0 / mse).log10();
        worst = worst
            .max((nmse(&pred, &gt).unwrap() - se / energy).abs())
            .max((rmse(&pred, &gt).unwrap() - mse.sqrt()).abs())
            .max((ssim_global(&pred, &gt, 1.0).unwrap() - ssim).abs())
            .max((psnr(&pred, &gt, 1.0).unwrap() - ps).abs());
    }
    let grid = Grid::square(16, 16).unwrap();
    let gt = ScalarField::from_fn(grid, UnitTag::NormalizedGray, |x, y| 0.1 + 0.02 * (x + y) as f64);
    let double = gt.map(UnitTag::NormalizedGray, |v| 2.0 * v);
    let trivial = nmse(&gt, &gt).unwrap() == 0.0
        && ssim_global(&gt, &gt, 1.0).unwrap() == 1.0
        && nmse(&double, &gt).unwrap() == 1.0;
    (
        worst <= 1e-9 && trivial,
        format!("max deviation {worst:.3e}, trivial cases exact: {trivial}"),
    )
}

fn c10_localization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut positions = Vec::new();
    let mut vectors = Vec::new();
    for y in 0..8 {
        for x in 0..8 {
            positions.push((x as f64 + 0.5, y as f64 + 0.5));
            vectors.push((0..4).map(|_| rng.random::<f64>()).collect::<Vec<f64>>());
        }
    }
    let db = FingerprintDb::new(positions, vectors, 1.0, 1.0).unwrap();
    let cfg = LocalizationConfig {
        n_queries: 3000,
        k: 1,
        noise_std: None,
    };
    let self_err = evaluate_localization(&db, &db, &cfg, &mut rng).unwrap();

    let mut mismatches = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..6);
        let positions: Vec<(f64, f64)> = (0..64).map(|i| ((i % 8) as f64 + 0.5, (i / 8) as f64 + 0.5)).collect();
        // Coarse values make distance ties common.
        let vectors: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..m).map(|_| rng.random_range(0..4) as f64).collect())
            .collect();
        let query: Vec<f64> = (0..m).map(|_| rng.random_range(0..4) as f64).collect();
        let k = rng.random_range(1..=64);
        let db = FingerprintDb::new(positions.clone(), vectors.clone(), 1.0, 1.0).unwrap();
        let got = knn_locate(&db, &query, k).unwrap();

        let mut order: Vec<(f64, usize)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (v.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(_, i) in &order[..k] {
            sx += positions[i].0;
            sy += positions[i].1;
        }
        let want = (sx / k as f64, sy / k as f64);
        if (got.0 - want.0).abs() > 1e-12 || (got.1 - want.1).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    (
        self_err == 0.0 && mismatches == 0,
        format!("self-match error {self_err}, {mismatches} of 1000 brute-force mismatches"),
    )
}

fn c11_linear_complexity() -> Outcome {
    let sizes = [256usize, 512, 1024];
    let mut pts = Vec::new();
    for &n in &sizes {
        let grid = Grid::square(n, n).unwrap();
        let f = ScalarField::from_fn(grid, UnitTag::Amplitude, |x, y| ((x * 7 + y * 13) % 17) as f64);
        let (t, _) = time_min(7, || laplacian_5pt(&f, Boundary::Replicate).unwrap());
        pts.push(((n * n) as f64, t.as_secs_f64()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    let times: Vec<String> = pts.iter().map(|p| format!("{:.2}ms", p.1 * 1e3)).collect();
    (r2 >= 0.95, format!("R^2 {r2:.4} ({})", times.join(", ")))
}

fn pipeline_once(dir: &std::path::Path) -> (i32, Vec<Vec<u8>>) {
    let code = k2map::cli::run([
        "k2map",
        "--seed",
        "12",
        "--out-dir",
        dir.to_str().unwrap(),
        "pipeline",
        "--size",
        "64",
    ]);
    let files = ["outline.png", "map.csv", "map.png", "pipeline.json"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap_or_default())
        .collect();
    (code, files)
}

fn c12_pipeline() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let (code_a, files_a) = pipeline_once(a.path());
    let elapsed = start.elapsed();
    let (code_b, files_b) = pipeline_once(b.path());
    let same = files_a == files_b && files_a.iter().all(|f| !f.is_empty());
    (
        code_a == 0 && code_b == 0 && same && elapsed < Duration::from_secs(10),
        format!(
            "exit codes {code_a}/{code_b}, outputs identical: {same}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1 stencil convergence", c1_stencil_convergence),
        ("2 sign theory", c2_sign_theory),
        ("3 gain invariance", c3_gain_invariance),
        ("4 eikonal identity", c4_eikonal),
        ("5 helmholtz residual", c5_helmholtz_residual),
        ("6 ddm exact inversion", c6_exact_inversion),
        ("7 ddm distribution", c7_distribution),
        ("8 loss identities", c8_losses),
        ("9 metric oracles", c9_metrics),
        ("10 localization", c10_localization),
        ("11 linear complexity", c11_linear_complexity),
        ("12 end-to-end pipeline", c12_pipeline),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let (ok, detail) = check();
        failed += (!ok) as usize;
        println!("{} criterion {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    let (ok, detail) = c7_sampling_variant();
    println!(
        "INFO criterion 7 with posterior-sample predictors: {} ({detail})",
        if ok { "within 3 SE" } else { "outside 3 SE" }
    );
    println!("{} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
