//! End-to-end acceptance checks. Every criterion prints one `PASS`/`FAIL`
//! line; the run fails if any required criterion fails.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use hfgauss::camera::Camera;
use hfgauss::gaussian::GaussianSet;
use hfgauss::image::{Image, Mask};
use hfgauss::keypoints::{KeypointSet, NUM_JOINTS};
use hfgauss::losses::{feature_mse, loss_depth, loss_image_terms, mpjpe, pck, psnr, ssim, PCK_THRESHOLD};
use hfgauss::pipeline::gradsuite::{run_gradient_suite, DEFAULT_SEEDS, TOLERANCE};
use hfgauss::pipeline::posebench::{figure_clouds, median, run_backbone, TEST_SEED_OFFSET};
use hfgauss::pipeline::throughput::measure_throughput;
use hfgauss::pipeline::{optimize_scene, FeatureMode, RunConfig};
use hfgauss::posenet::Backbone;
use hfgauss::scenegen::{default_ring, generate_figure, make_sample};
use hfgauss::splat::{pixel_contributions, render, render_naive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    /// Failing does not fail the run; the reason is printed instead.
    advisory: Option<String>,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self {
            passed,
            advisory: None,
            detail,
        }
    }
}

fn random_scene(rng: &mut ChaCha8Rng) -> (GaussianSet, Camera, [f64; 3]) {
    let w = rng.random_range(17..=70);
    let h = rng.random_range(17..=70);
    let f = rng.random_range(0..=4);
    let n = rng.random_range(1..=120);
    let focal = rng.random_range(0.8..1.6) * w as f64;
    let cam = Camera::identity(focal, focal, w as f64 / 2.0, h as f64 / 2.0, w, h);
    let mut set = GaussianSet::zeros(n, f);
    for i in 0..n {
        let z = rng.random_range(1.0..5.0);
        set.positions[i * 3] = rng.random_range(-0.6..0.6) * z;
        set.positions[i * 3 + 1] = rng.random_range(-0.6..0.6) * z;
        set.positions[i * 3 + 2] = z;
        for v in &mut set.rotations[i * 4..i * 4 + 4] {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in &mut set.scales[i * 3..i * 3 + 3] {
            *v = rng.random_range(-4.5..-1.5);
        }
        set.opacities[i] = rng.random_range(-3.0..5.0);
    }
    for v in set.colors.iter_mut().chain(set.features.iter_mut()) {
        *v = rng.random_range(-3.0..3.0);
    }
    let bg = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
    (set, cam, bg)
}

fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b));
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let report = run_gradient_suite(0, DEFAULT_SEEDS).expect("gradient suite");
    let secs = t.elapsed().as_secs_f64();
    let worst = report.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    for c in report.failures() {
        eprintln!("  failing check: {}", c.name);
    }
    Outcome::new(
        report.passed() && secs < 300.0,
        format!(
            "{} checks over {DEFAULT_SEEDS} seeds, worst relative error {worst:.2e} (< {TOLERANCE:.0e}), {secs:.0} s",
            report.checks.len()
        ),
    )
}

fn rasterizer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut weight_gap: f64 = 0.0;
    let mut alpha_ok = true;
    for _ in 0..100 {
        let (set, cam, bg) = random_scene(&mut rng);
        let tiled = render(&set, &cam, bg).unwrap();
        let naive = render_naive(&set, &cam, bg).unwrap();
        for (a, b) in [
            (&tiled.color, &naive.color),
            (&tiled.feature, &naive.feature),
            (&tiled.depth, &naive.depth),
            (&tiled.alpha, &naive.alpha),
        ] {
            worst = worst.max(max_abs_diff(a, b));
        }
        for _ in 0..8 {
            let (x, y) = (rng.random_range(0..cam.width), rng.random_range(0..cam.height));
            let sum: f64 = pixel_contributions(&set, &cam, x, y).unwrap().iter().map(|c| c.weight).sum();
            let alpha = tiled.alpha.get(x, y, 0);
            weight_gap = weight_gap.max((sum - alpha).abs());
            alpha_ok &= alpha <= 1.0;
        }
    }
    Outcome::new(
        worst <= 1e-5 && weight_gap <= 1e-6 && alpha_ok,
        format!("100 scenes, max |tiled - naive| {worst:.1e}, max |sum w - alpha| {weight_gap:.1e}"),
    )
}

fn feature_color_sharing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut identical = true;
    for _ in 0..20 {
        let (mut set, cam, _) = random_scene(&mut rng);
        let colors = set.colors.clone();
        let mut shared = GaussianSet::zeros(set.len(), 3);
        std::mem::swap(&mut shared.positions, &mut set.positions);
        std::mem::swap(&mut shared.rotations, &mut set.rotations);
        std::mem::swap(&mut shared.scales, &mut set.scales);
        std::mem::swap(&mut shared.opacities, &mut set.opacities);
        shared.colors = colors.clone();
        shared.features = colors;
        let out = render(&shared, &cam, [0.0; 3]).unwrap();
        identical &= out
            .feature
            .data
            .iter()
            .zip(&out.color.data)
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    Outcome::new(identical, "20 scenes, feature image equals color image bit for bit".into())
}

fn scene_optimization() -> Outcome {
    let sample = make_sample(&generate_figure(0).unwrap(), &default_ring(256).unwrap(), 0).unwrap();
    let cfg = RunConfig {
        pose_points: 512,
        ..RunConfig::default()
    };
    let t = Instant::now();
    let fit = optimize_scene(&sample, &cfg, None).unwrap();
    let gain = fit.psnr_after - fit.psnr_before;
    Outcome::new(
        gain >= 10.0,
        format!(
            "held-out view {}: {:.2} -> {:.2} dB (+{gain:.2}) after {} iterations, {:.0} s",
            fit.heldout_view,
            fit.psnr_before,
            fit.psnr_after,
            cfg.iterations,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn backbone_ordering() -> Outcome {
    let cfg = RunConfig {
        pose_points: 256,
        pose_epochs: 12,
        ..RunConfig::default()
    };
    let t = Instant::now();
    let train = figure_clouds(0, cfg.train_figures, &cfg).unwrap();
    let test = figure_clouds(TEST_SEED_OFFSET, cfg.test_figures, &cfg).unwrap();
    let mut medians = Vec::new();
    for backbone in Backbone::ALL {
        let errs: Vec<f64> = (0..3)
            .map(|seed| run_backbone(&train, &test, &cfg, backbone, seed).unwrap().heldout_mpjpe)
            .collect();
        medians.push((backbone, median(&errs)));
    }
    let get = |b: Backbone| medians.iter().find(|m| m.0 == b).unwrap().1;
    let list: Vec<String> = medians.iter().map(|(b, m)| format!("{b} {m:.4}")).collect();
    Outcome::new(
        get(Backbone::Hybrid) <= get(Backbone::PointNet),
        format!(
            "median held-out MPJPE over 3 seeds: {} ({} / {} figures, {:.0} s)",
            list.join(", "),
            cfg.train_figures,
            cfg.test_figures,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn feature_ablation() -> Outcome {
    let mut shared = Vec::new();
    let mut splat = Vec::new();
    for seed in 0..3 {
        let sample = make_sample(&generate_figure(seed).unwrap(), &default_ring(128).unwrap(), seed).unwrap();
        for (mode, into) in [(FeatureMode::SharedColor, &mut shared), (FeatureMode::Splat, &mut splat)] {
            let mut cfg = RunConfig {
                seed,
                iterations: 600,
                init_gaussians: 1000,
                feature_mode: mode,
                ..RunConfig::default()
            };
            cfg.losses.pose = false;
            let fit = optimize_scene(&sample, &cfg, None).unwrap();
            into.push(fit.embed_mse_after.unwrap());
        }
    }
    let (ms, mf) = (median(&shared), median(&splat));
    Outcome::new(
        ms > mf,
        format!("median held-out embedding MSE: shared color {ms:.4}, feature splatting {mf:.4}"),
    )
}

/// Independent PCK: per-joint loop over raw coordinates.
fn brute_force_pck(pred: &[f64], gt: &[f64]) -> f64 {
    let torso = ((gt[10] - gt[18]).powi(2) + (gt[11] - gt[19]).powi(2)).sqrt();
    let mut hits = 0;
    for j in 0..NUM_JOINTS {
        let d = ((pred[2 * j] - gt[2 * j]).powi(2) + (pred[2 * j + 1] - gt[2 * j + 1]).powi(2)).sqrt();
        if d <= 0.2 * torso {
            hits += 1;
        }
    }
    hits as f64 / NUM_JOINTS as f64
}

fn metric_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    let img = Image::from_data(24, 24, 3, (0..24 * 24 * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    check(psnr(&img, &img).unwrap() == f64::INFINITY, "psnr identity");
    check((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12, "ssim identity");
    check(feature_mse(&img, &img, None).unwrap() == 0.0, "feature mse identity");
    let kp3 = KeypointSet::new(3, (0..NUM_JOINTS * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    check(mpjpe(&kp3, &kp3).unwrap() == 0.0, "mpjpe identity");
    let kp2 = KeypointSet::new(2, (0..NUM_JOINTS * 2).map(|_| rng.random_range(0.0..100.0)).collect()).unwrap();
    check(pck(&kp2, &kp2, PCK_THRESHOLD).unwrap() == 1.0, "pck identity");

    let mask = Mask::new(24, 24, true);
    let depth = |v: f64| Image::filled(24, 24, 1, v);
    let gt = depth(2.0);
    let d = loss_depth(&[depth(2.5), depth(3.0)], &gt, &mask, 0.9).unwrap();
    check((d - (0.9 * 0.5 + 1.0 * 1.0)).abs() < 1e-12, "depth weights (0.9, 1.0)");

    let other = Image::from_data(24, 24, 3, img.data.iter().map(|v| (v + 0.3).min(1.0)).collect()).unwrap();
    let (l, mae, l_ssim) = loss_image_terms(&other, &img, &mask).unwrap();
    let mae_ref = other.data.iter().zip(&img.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / other.data.len() as f64;
    let ssim_ref = 1.0 - ssim(&other, &img).unwrap();
    check((mae - mae_ref).abs() < 1e-12 && (l_ssim - ssim_ref).abs() < 1e-12, "image loss terms");
    check((l - (1.6 * mae_ref + 0.4 * ssim_ref)).abs() < 1e-12, "image loss weights (1.6, 0.4)");

    let mut pck_mismatch = 0;
    for _ in 0..50 {
        let gt: Vec<f64> = (0..NUM_JOINTS * 2).map(|_| rng.random_range(0.0..200.0)).collect();
        let spread = rng.random_range(1.0..80.0);
        let pred: Vec<f64> = gt.iter().map(|v| v + rng.random_range(-spread..spread)).collect();
        let ours = pck(&KeypointSet::new(2, pred.clone()).unwrap(), &KeypointSet::new(2, gt.clone()).unwrap(), PCK_THRESHOLD).unwrap();
        if ours != brute_force_pck(&pred, &gt) {
            pck_mismatch += 1;
        }
    }
    check(pck_mismatch == 0, "pck brute force");

    let passed = failures.is_empty();
    let detail = if passed {
        "identities, depth and image loss weights, PCK on 50 brute-force cases".to_string()
    } else {
        format!("failed: {}", failures.join(", "))
    };
    Outcome::new(passed, detail)
}

fn hfg(args: &[&str], threads: usize) {
    let status = Command::new(env!("CARGO_BIN_EXE_hfg"))
        .args(args)
        .args(["--threads", &threads.to_string(), "--seed", "11"])
        .output()
        .expect("spawn hfg");
    assert!(status.status.success(), "hfg {args:?} failed: {}", String::from_utf8_lossy(&status.stderr));
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let run = |threads: usize| -> PathBuf {
        let base = tmp.path().join(format!("t{threads}"));
        let p = |s: &str| base.join(s).to_string_lossy().into_owned();
        let sample0 = p("gen/sample_00000");
        hfg(&["gen", "--samples", "3", "--image-size", "48", "--views", "4", "--out", &p("gen")], threads);
        hfg(
            &[
                "optimize", "--dataset", &sample0, "--iterations", "12", "--set", "init_gaussians=200",
                "--set", "pose_points=64", "--set", "checkpoint_every=6", "--out", &p("optimize"),
            ],
            threads,
        );
        hfg(
            &["train-pose", "--dataset", &p("gen"), "--epochs", "1", "--backbone", "hybrid", "--set", "pose_points=64", "--out", &p("train-pose")],
            threads,
        );
        hfg(
            &[
                "render", "--scene", &p("optimize/scene.ply"), "--cameras", &sample0,
                "--decoder", &p("optimize/decoder.ckpt"), "--out", &p("render"),
            ],
            threads,
        );
        hfg(
            &[
                "eval", "--pred-image", &p("render/color_0.png"), "--gt-image", &format!("{sample0}/color_0.png"),
                "--pred-embedding", &p("render/embed_0.pfm"), "--gt-embedding", &format!("{sample0}/embed_0.pfm"),
                "--mask", &format!("{sample0}/mask_0.png"), "--out", &p("eval"),
            ],
            threads,
        );
        hfg(&["gradcheck", "--instances", "2", "--out", &p("gradcheck")], threads);
        base
    };
    let (a, b, c) = (run(1), run(2), run(3));
    let (ta, tb, tc) = (tree(&a), tree(&b), tree(&c));
    let same = ta == tb && tb == tc;
    let detail = if same {
        format!("gen, optimize, train-pose, render, eval, gradcheck: {} files identical at 1, 2 and 3 threads", ta.len())
    } else {
        let differing: Vec<String> = ta
            .iter()
            .filter(|(p, bytes)| [&tb, &tc].iter().any(|t| !t.iter().any(|(q, other)| q == p && other == bytes)))
            .map(|(p, _)| p.display().to_string())
            .collect();
        format!("outputs differ across thread counts: {}", differing.join(", "))
    };
    Outcome::new(same, detail)
}

fn throughput() -> Outcome {
    let r = measure_throughput(100_000, 512, 3, 0).unwrap();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut o = Outcome::new(
        r.fps >= 10.0,
        format!("{:.2} frames/s, 100k Gaussians at 512x512, {} worker threads", r.fps, r.threads),
    );
    if cores < 8 {
        o.advisory = Some(format!("target assumes an 8-core machine, this one has {cores}"));
    }
    o
}

/// Writes past the test harness capture so results show without `--nocapture`.
fn report(line: String) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", gradient_suite),
        ("rasterizer oracle", rasterizer_oracle),
        ("feature/color weight sharing", feature_color_sharing),
        ("scene optimization", scene_optimization),
        ("backbone ordering", backbone_ordering),
        ("feature-splatting ablation", feature_ablation),
        ("metric unit suite", metric_suite),
        ("cli determinism", cli_determinism),
        ("renderer throughput", throughput),
    ];
    report(String::new());
    let mut required_failures = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        match (&o.advisory, o.passed) {
            (Some(why), false) => report(format!("[acceptance {}] {name}: {verdict} ({}) [not enforced: {why}]", i + 1, o.detail)),
            _ => report(format!("[acceptance {}] {name}: {verdict} ({})", i + 1, o.detail)),
        }
        if !o.passed && o.advisory.is_none() {
            required_failures.push(*name);
        }
    }
    assert!(required_failures.is_empty(), "failed: {required_failures:?}");
}
