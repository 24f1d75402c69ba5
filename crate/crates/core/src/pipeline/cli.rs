//! The `hfg` command line. Exit status: 0 on success, 1 for usage and
//! validation errors, 2 for numerical failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::Vector3;
use serde::Serialize;
use serde_json::json;

use super::config::RunConfig;
use super::dataset::{list_samples, read_sample, sample_dir, write_sample};
use super::gradsuite::{run_gradient_suite, DEFAULT_SEEDS};
use super::io::*;
use super::optimize::{optimize_scene, predicted_embedding};
use super::posebench::{figure_clouds, pose_samples, sample_cloud, train_config, PoseCloud, TEST_SEED_OFFSET};
use super::throughput::measure_throughput;
use super::write_manifest;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::featdec::{decode, DecoderWeights};
use crate::keypoints::KeypointSet;
use crate::losses::{feature_mse, mpjpe, pck, psnr, ssim, MetricReport, PCK_THRESHOLD};
use crate::posenet::{forward_trace, train_pose, Backbone, PoseInput, PoseWeights};
use crate::scenegen::{camera_ring, generate_figure_with, make_sample, DatasetSample, BACKGROUND, RING_TARGET};
use crate::splat::render;

#[derive(Debug, Parser)]
#[command(name = "hfg", version, about = "Gaussian feature splatting, pose regression and synthetic figures")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` config overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic figures and write sample directories.
    Gen {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
    },
    /// Fit Gaussians, decoder and pose head to one sample.
    Optimize {
        /// A sample directory or a dataset root; a fresh reference figure
        /// is generated when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Which sample of a dataset root to fit.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train a pose-regression network on point clouds.
    TrainPose {
        /// Dataset root; the last fifth of its samples is held out. Synthetic
        /// figures are generated when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        backbone: Option<Backbone>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Render a PLY scene from one or more cameras.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// Camera JSON (object or array) or a sample directory.
        #[arg(long)]
        cameras: PathBuf,
        /// Decoder checkpoint; adds decoded embedding images.
        #[arg(long)]
        decoder: Option<PathBuf>,
    },
    /// Compare predictions against ground truth and write a metric report.
    Eval {
        #[arg(long, requires = "gt_image")]
        pred_image: Option<PathBuf>,
        #[arg(long, requires = "pred_image")]
        gt_image: Option<PathBuf>,
        /// Foreground mask for the embedding error.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, requires = "gt_keypoints")]
        pred_keypoints: Option<PathBuf>,
        #[arg(long, requires = "pred_keypoints")]
        gt_keypoints: Option<PathBuf>,
        #[arg(long, requires = "gt_embedding")]
        pred_embedding: Option<PathBuf>,
        #[arg(long, requires = "pred_embedding")]
        gt_embedding: Option<PathBuf>,
        /// Also measure renderer throughput.
        #[arg(long)]
        fps: bool,
        #[arg(long, default_value_t = 100_000)]
        fps_gaussians: usize,
        #[arg(long, default_value_t = 512)]
        fps_size: usize,
        #[arg(long, default_value_t = 3)]
        fps_frames: usize,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        instances: usize,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

/// Runs a parsed command inside a pool of `--threads` workers.
pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Invalid("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Gen { .. } => cmd_gen(&cfg),
        Command::Optimize { sample, .. } => cmd_optimize(&cfg, *sample),
        Command::TrainPose { .. } => cmd_train_pose(&cfg),
        Command::Render { scene, cameras, decoder } => cmd_render(&cfg, scene, cameras, decoder.as_deref()),
        Command::Eval { .. } => cmd_eval(&cfg, &cli.command),
        Command::Gradcheck { instances } => cmd_gradcheck(&cfg, *instances),
    })
}

/// Config file, then `--set` overrides, then global flags, then the
/// subcommand's own flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match &cli.command {
        Command::Gen { samples, image_size, views } => {
            cfg.samples = samples.unwrap_or(cfg.samples);
            cfg.image_size = image_size.unwrap_or(cfg.image_size);
            cfg.views = views.unwrap_or(cfg.views);
        }
        Command::Optimize { dataset, iterations, .. } => {
            cfg.dataset = dataset.clone().or(cfg.dataset);
            cfg.iterations = iterations.unwrap_or(cfg.iterations);
        }
        Command::TrainPose { dataset, backbone, epochs } => {
            cfg.dataset = dataset.clone().or(cfg.dataset);
            cfg.backbone = backbone.unwrap_or(cfg.backbone);
            cfg.pose_epochs = epochs.unwrap_or(cfg.pose_epochs);
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    let cams = camera_ring(cfg.views, cfg.ring_radius, Vector3::from(RING_TARGET), cfg.image_size)?;
    for i in 0..cfg.samples {
        let seed = cfg.seed + i as u64;
        let figure = generate_figure_with(seed, cfg.gaussians_per_bone)?;
        let sample = make_sample(&figure, &cams, seed)?;
        let dir = sample_dir(&cfg.out, i);
        write_sample(&dir, &sample)?;
        write_ply(&dir.join("scene.ply"), &figure.gaussians)?;
    }
    write_manifest(&cfg.out, "gen", cfg, json!({ "samples": cfg.samples }))?;
    println!("wrote {} samples to {}", cfg.samples, cfg.out.display());
    Ok(())
}

/// The sample to fit: a sample directory, the `index`-th sample of a
/// dataset root, or the reference figure for `cfg.seed`.
fn load_fit_sample(cfg: &RunConfig, index: usize) -> Result<DatasetSample> {
    match &cfg.dataset {
        Some(d) if d.join("sample.json").exists() => read_sample(d),
        Some(d) => {
            let dirs = list_samples(d)?;
            let dir = dirs
                .get(index)
                .ok_or_else(|| Error::Invalid(format!("{} has {} samples, asked for #{index}", d.display(), dirs.len())))?;
            read_sample(dir)
        }
        None => {
            let cams = camera_ring(cfg.views, cfg.ring_radius, Vector3::from(RING_TARGET), cfg.image_size)?;
            make_sample(&generate_figure_with(cfg.seed, cfg.gaussians_per_bone)?, &cams, cfg.seed)
        }
    }
}

#[derive(Serialize)]
struct FitSummary {
    iterations: usize,
    heldout_view: usize,
    psnr_before: f64,
    psnr_after: f64,
    embed_mse_before: Option<f64>,
    embed_mse_after: Option<f64>,
    final_total: Option<f64>,
}

fn cmd_optimize(cfg: &RunConfig, index: usize) -> Result<()> {
    let sample = load_fit_sample(cfg, index)?;
    let fit = optimize_scene(&sample, cfg, Some(&cfg.out))?;
    let out = &cfg.out;
    write_ply(&out.join("scene.ply"), &fit.scene)?;
    if let Some(d) = &fit.decoder {
        write_file(&out.join("decoder.ckpt"), &d.to_checkpoint())?;
    }
    if let Some(p) = &fit.pose {
        write_file(&out.join("pose.ckpt"), &p.to_checkpoint())?;
    }
    write_json(&out.join("losses.json"), &fit.trajectory)?;

    let view = &sample.views[fit.heldout_view];
    let rendered = render(&fit.scene, &view.camera, BACKGROUND)?;
    let held = out.join("heldout");
    write_png(&held.join("color.png"), &rendered.color)?;
    write_pfm(&held.join("depth.pfm"), &rendered.depth)?;
    if cfg.losses.feature {
        write_pfm(&held.join("embed.pfm"), &predicted_embedding(&rendered, fit.decoder.as_ref(), cfg.feature_mode)?)?;
    }
    write_json(
        &out.join("summary.json"),
        &FitSummary {
            iterations: cfg.iterations,
            heldout_view: fit.heldout_view,
            psnr_before: fit.psnr_before,
            psnr_after: fit.psnr_after,
            embed_mse_before: fit.embed_mse_before,
            embed_mse_after: fit.embed_mse_after,
            final_total: fit.trajectory.last().map(|r| r.total),
        },
    )?;
    write_manifest(out, "optimize", cfg, json!({ "heldout_view": fit.heldout_view }))?;
    println!(
        "held-out view {}: PSNR {:.2} dB -> {:.2} dB",
        fit.heldout_view, fit.psnr_before, fit.psnr_after
    );
    Ok(())
}

fn pose_clouds(cfg: &RunConfig) -> Result<(Vec<PoseCloud>, Vec<PoseCloud>)> {
    match &cfg.dataset {
        Some(d) => {
            let dirs = list_samples(d)?;
            if dirs.len() < 2 {
                return Err(Error::Invalid(format!("{} needs at least two samples", d.display())));
            }
            let clouds = dirs
                .iter()
                .enumerate()
                .map(|(i, dir)| sample_cloud(&read_sample(dir)?, cfg.pose_points, cfg.seed + i as u64))
                .collect::<Result<Vec<_>>>()?;
            let test = (clouds.len() / 5).max(1);
            let mut train = clouds;
            let held = train.split_off(train.len() - test);
            Ok((train, held))
        }
        None => Ok((
            figure_clouds(cfg.seed, cfg.train_figures, cfg)?,
            figure_clouds(TEST_SEED_OFFSET + cfg.seed, cfg.test_figures.max(1), cfg)?,
        )),
    }
}

fn predict(input: &PoseInput, w: &PoseWeights) -> Result<KeypointSet> {
    let mut coords = forward_trace(input, w)?.output;
    if w.dim == 3 {
        for j in coords.chunks_exact_mut(3) {
            j.iter_mut().zip(input.centroid.iter()).for_each(|(v, c)| *v += c);
        }
    }
    KeypointSet::new(w.dim, coords)
}

fn cmd_train_pose(cfg: &RunConfig) -> Result<()> {
    let (train, test) = pose_clouds(cfg)?;
    let tc = train_config(cfg, cfg.backbone, cfg.seed);
    let tr = pose_samples(&train, tc.backbone, tc.dim, tc.k)?;
    let te = pose_samples(&test, tc.backbone, tc.dim, tc.k)?;
    let (weights, log) = train_pose(&tr, &te, &tc)?;

    let mut errors = Vec::with_capacity(te.len());
    let mut pcks = Vec::new();
    for s in &te {
        let pred = predict(&s.input, &weights)?;
        errors.push(mpjpe(&pred, &s.target)?);
        if tc.dim == 2 {
            pcks.push(pck(&pred, &s.target, PCK_THRESHOLD)?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let report = MetricReport {
        mpjpe: Some(mean(&errors)),
        pck: (!pcks.is_empty()).then(|| mean(&pcks)),
        ..MetricReport::default()
    };
    let out = &cfg.out;
    write_file(&out.join("pose.ckpt"), &weights.to_checkpoint())?;
    write_json(&out.join("train_log.json"), &log)?;
    write_json(&out.join("metrics.json"), &report.to_json())?;
    write_manifest(out, "train-pose", cfg, json!({ "backbone": tc.backbone, "train": tr.len(), "test": te.len() }))?;
    print!("{}", report.to_text());
    Ok(())
}

fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    if path.is_dir() {
        let mut cams = Vec::new();
        while path.join(format!("cam_{}.json", cams.len())).exists() {
            cams.push(read_json::<Camera>(&path.join(format!("cam_{}.json", cams.len())))?);
        }
        if cams.is_empty() {
            return Err(Error::Invalid(format!("no cam_N.json files in {}", path.display())));
        }
        return Ok(cams);
    }
    let value: serde_json::Value = read_json(path)?;
    if value.is_array() {
        Ok(serde_json::from_value(value)?)
    } else {
        Ok(vec![serde_json::from_value(value)?])
    }
}

fn cmd_render(cfg: &RunConfig, scene: &Path, cameras: &Path, decoder: Option<&Path>) -> Result<()> {
    let set = read_ply(scene)?;
    let cams = load_cameras(cameras)?;
    let decoder = decoder.map(|p| DecoderWeights::from_checkpoint(&read_file(p)?)).transpose()?;
    let out = &cfg.out;
    for (i, cam) in cams.iter().enumerate() {
        let r = render(&set, cam, BACKGROUND)?;
        write_png(&out.join(format!("color_{i}.png")), &r.color)?;
        write_pfm(&out.join(format!("depth_{i}.pfm")), &r.depth)?;
        write_pfm(&out.join(format!("alpha_{i}.pfm")), &r.alpha)?;
        if set.feature_dim() > 0 {
            write_feature_pfm(&out.join(format!("feature_{i}.pfm")), &r.feature)?;
        }
        if let Some(d) = &decoder {
            write_pfm(&out.join(format!("embed_{i}.pfm")), &decode(&r.feature, &r.alpha, d)?)?;
        }
    }
    write_manifest(out, "render", cfg, json!({ "gaussians": set.len(), "views": cams.len() }))?;
    println!("rendered {} Gaussians from {} cameras", set.len(), cams.len());
    Ok(())
}

fn read_image(path: &Path) -> Result<crate::image::Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => read_pfm(path),
        _ => read_png(path),
    }
}

fn cmd_eval(cfg: &RunConfig, cmd: &Command) -> Result<()> {
    let Command::Eval {
        pred_image,
        gt_image,
        mask,
        pred_keypoints,
        gt_keypoints,
        pred_embedding,
        gt_embedding,
        fps,
        fps_gaussians,
        fps_size,
        fps_frames,
    } = cmd
    else {
        unreachable!("dispatched on Eval")
    };
    let mut report = MetricReport::default();
    let mask = mask.as_deref().map(read_mask).transpose()?;
    if let (Some(p), Some(g)) = (pred_image, gt_image) {
        let (p, g) = (read_image(p)?, read_image(g)?);
        report.psnr = Some(psnr(&p, &g)?);
        report.ssim = Some(ssim(&p, &g)?);
    }
    if let (Some(p), Some(g)) = (pred_keypoints, gt_keypoints) {
        let (p, g) = (read_keypoints(p)?, read_keypoints(g)?);
        report.mpjpe = Some(mpjpe(&p, &g)?);
        if g.dim == 2 {
            report.pck = Some(pck(&p, &g, PCK_THRESHOLD)?);
        }
    }
    if let (Some(p), Some(g)) = (pred_embedding, gt_embedding) {
        report.feature_mse = Some(feature_mse(&read_image(p)?, &read_image(g)?, mask.as_ref())?);
    }
    if report == MetricReport::default() && !fps {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    let out = &cfg.out;
    write_json(&out.join("metrics.json"), &report.to_json())?;
    write_file(&out.join("metrics.txt"), report.to_text().as_bytes())?;
    print!("{}", report.to_text());
    if *fps {
        let t = measure_throughput(*fps_gaussians, *fps_size, *fps_frames, cfg.seed)?;
        write_json(&out.join("throughput.json"), &t)?;
        println!("fps={:.3} gaussians={} size={}x{} threads={}", t.fps, t.gaussians, t.width, t.height, t.threads);
    }
    write_manifest(out, "eval", cfg, json!({}))?;
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, instances: usize) -> Result<()> {
    if instances == 0 {
        return Err(Error::Invalid("--instances must be positive".into()));
    }
    let report = run_gradient_suite(cfg.seed, instances)?;
    let out = &cfg.out;
    write_file(&out.join("gradcheck.txt"), report.to_text().as_bytes())?;
    write_json(&out.join("gradcheck.json"), &report)?;
    write_manifest(out, "gradcheck", cfg, json!({ "instances": instances, "passed": report.passed() }))?;
    print!("{}", report.to_text());
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        Err(Error::GradCheck(names.join(", ")))
    }
}
