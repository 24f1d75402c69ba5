//! Run configuration: a flat `key = value` file with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{DEPTH_DECAY, IMAGE_BETA, IMAGE_GAMMA};
use crate::posenet::Backbone;

/// How embeddings are produced during scene fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Splat per-Gaussian features and decode them.
    Splat,
    /// Reuse the rendered color as the embedding; no features, no decoder.
    SharedColor,
}

impl FeatureMode {
    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Splat => "splat",
            FeatureMode::SharedColor => "shared",
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "splat" => Ok(FeatureMode::Splat),
            "shared" => Ok(FeatureMode::SharedColor),
            _ => Err(Error::Config(format!("unknown feature_mode {s:?}"))),
        }
    }
}

/// Learning rates of the optimized parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub feature: f64,
    pub decoder: f64,
    pub pose: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            feature: 2.5e-3,
            decoder: 2e-4,
            pose: 2e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossToggles {
    pub image: bool,
    pub depth: bool,
    pub pose: bool,
    pub feature: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,

    // scene generation
    pub samples: usize,
    pub image_size: usize,
    pub views: usize,
    pub ring_radius: f64,
    pub gaussians_per_bone: usize,

    // scene fitting
    pub iterations: usize,
    pub init_gaussians: usize,
    pub init_opacity: f64,
    pub lr: LearningRates,
    pub weight_decay: f64,
    pub losses: LossToggles,
    pub image_beta: f64,
    pub image_gamma: f64,
    pub depth_decay: f64,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub feature_mode: FeatureMode,
    pub checkpoint_every: usize,

    // pose network
    pub backbone: Backbone,
    pub pose_dim: usize,
    pub k: usize,
    pub pose_points: usize,
    pub pose_epochs: usize,
    pub pose_batch: usize,
    pub pose_lr: f64,
    pub train_figures: usize,
    pub test_figures: usize,
    pub pose_image_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out: PathBuf::from("out"),
            seed: 0,
            samples: 1,
            image_size: 512,
            views: 8,
            ring_radius: crate::scenegen::DEFAULT_RING_RADIUS,
            gaussians_per_bone: crate::scenegen::DEFAULT_GAUSSIANS_PER_BONE,
            iterations: 2000,
            init_gaussians: 2000,
            init_opacity: 0.1,
            lr: LearningRates::default(),
            weight_decay: 1e-5,
            losses: LossToggles {
                image: true,
                depth: true,
                pose: true,
                feature: true,
            },
            image_beta: IMAGE_BETA,
            image_gamma: IMAGE_GAMMA,
            depth_decay: DEPTH_DECAY,
            feature_dim: crate::gaussian::DEFAULT_FEATURE_DIM,
            embed_dim: crate::featdec::DEFAULT_EMBED_DIM,
            feature_mode: FeatureMode::Splat,
            checkpoint_every: 500,
            backbone: Backbone::Hybrid,
            pose_dim: 3,
            k: crate::posenet::DEFAULT_K,
            pose_points: crate::unproject::DEFAULT_SAMPLE_SIZE,
            pose_epochs: 30,
            pose_batch: 8,
            pose_lr: 1e-3,
            train_figures: 500,
            test_figures: 100,
            pose_image_size: 128,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "views" => self.views = parse(key, value)?,
            "ring_radius" => self.ring_radius = parse(key, value)?,
            "gaussians_per_bone" => self.gaussians_per_bone = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "init_gaussians" => self.init_gaussians = parse(key, value)?,
            "init_opacity" => self.init_opacity = parse(key, value)?,
            "lr_position" => self.lr.position = parse(key, value)?,
            "lr_rotation" => self.lr.rotation = parse(key, value)?,
            "lr_scale" => self.lr.scale = parse(key, value)?,
            "lr_opacity" => self.lr.opacity = parse(key, value)?,
            "lr_color" => self.lr.color = parse(key, value)?,
            "lr_feature" => self.lr.feature = parse(key, value)?,
            "lr_decoder" => self.lr.decoder = parse(key, value)?,
            "lr_pose" => self.lr.pose = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "loss_image" => self.losses.image = parse_bool(key, value)?,
            "loss_depth" => self.losses.depth = parse_bool(key, value)?,
            "loss_pose" => self.losses.pose = parse_bool(key, value)?,
            "loss_feature" => self.losses.feature = parse_bool(key, value)?,
            "image_beta" => self.image_beta = parse(key, value)?,
            "image_gamma" => self.image_gamma = parse(key, value)?,
            "depth_decay" => self.depth_decay = parse(key, value)?,
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "feature_mode" => self.feature_mode = value.parse()?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "backbone" => self.backbone = value.parse()?,
            "pose_dim" => self.pose_dim = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "pose_points" => self.pose_points = parse(key, value)?,
            "pose_epochs" => self.pose_epochs = parse(key, value)?,
            "pose_batch" => self.pose_batch = parse(key, value)?,
            "pose_lr" => self.pose_lr = parse(key, value)?,
            "train_figures" => self.train_figures = parse(key, value)?,
            "test_figures" => self.test_figures = parse(key, value)?,
            "pose_image_size" => self.pose_image_size = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Checks ranges and that referenced paths exist.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Some(d) = &self.dataset {
            if !d.exists() {
                return Err(Error::MissingFile(d.clone()));
            }
        }
        if self.image_size < 16 || self.pose_image_size < 16 {
            return bad("image sizes must be at least 16".into());
        }
        if self.views < 2 {
            return bad("views must be at least 2".into());
        }
        if !(self.ring_radius > 0.0) {
            return bad("ring_radius must be positive".into());
        }
        if self.gaussians_per_bone == 0 || self.init_gaussians == 0 || self.samples == 0 {
            return bad("gaussians_per_bone, init_gaussians and samples must be positive".into());
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return bad("init_opacity must lie in (0, 1)".into());
        }
        let lrs = [
            self.lr.position,
            self.lr.rotation,
            self.lr.scale,
            self.lr.opacity,
            self.lr.color,
            self.lr.feature,
            self.lr.decoder,
            self.lr.pose,
            self.pose_lr,
            self.weight_decay,
            self.image_beta,
            self.image_gamma,
            self.depth_decay,
        ];
        if lrs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("learning rates, weight decay and loss weights must be finite and non-negative".into());
        }
        if self.feature_dim == 0 || self.embed_dim == 0 {
            return bad("feature_dim and embed_dim must be positive".into());
        }
        if self.losses.feature && self.embed_dim != crate::scenegen::EMBED_DIM {
            return bad(format!("ground-truth embeddings have {} channels", crate::scenegen::EMBED_DIM));
        }
        if self.pose_dim != 2 && self.pose_dim != 3 {
            return bad("pose_dim must be 2 or 3".into());
        }
        if self.k == 0 || self.pose_points <= self.k {
            return bad("k must be positive and smaller than pose_points".into());
        }
        if self.pose_batch == 0 || self.train_figures == 0 {
            return bad("pose_batch and train_figures must be positive".into());
        }
        Ok(())
    }

    /// Every setting as canonical `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        if let Some(d) = &self.dataset {
            kv("dataset", d.display().to_string());
        }
        kv("out", self.out.display().to_string());
        kv("seed", self.seed.to_string());
        kv("samples", self.samples.to_string());
        kv("image_size", self.image_size.to_string());
        kv("views", self.views.to_string());
        kv("ring_radius", format!("{:?}", self.ring_radius));
        kv("gaussians_per_bone", self.gaussians_per_bone.to_string());
        kv("iterations", self.iterations.to_string());
        kv("init_gaussians", self.init_gaussians.to_string());
        kv("init_opacity", format!("{:?}", self.init_opacity));
        kv("lr_position", format!("{:?}", self.lr.position));
        kv("lr_rotation", format!("{:?}", self.lr.rotation));
        kv("lr_scale", format!("{:?}", self.lr.scale));
        kv("lr_opacity", format!("{:?}", self.lr.opacity));
        kv("lr_color", format!("{:?}", self.lr.color));
        kv("lr_feature", format!("{:?}", self.lr.feature));
        kv("lr_decoder", format!("{:?}", self.lr.decoder));
        kv("lr_pose", format!("{:?}", self.lr.pose));
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("loss_image", self.losses.image.to_string());
        kv("loss_depth", self.losses.depth.to_string());
        kv("loss_pose", self.losses.pose.to_string());
        kv("loss_feature", self.losses.feature.to_string());
        kv("image_beta", format!("{:?}", self.image_beta));
        kv("image_gamma", format!("{:?}", self.image_gamma));
        kv("depth_decay", format!("{:?}", self.depth_decay));
        kv("feature_dim", self.feature_dim.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("feature_mode", self.feature_mode.name().to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("backbone", self.backbone.name().to_string());
        kv("pose_dim", self.pose_dim.to_string());
        kv("k", self.k.to_string());
        kv("pose_points", self.pose_points.to_string());
        kv("pose_epochs", self.pose_epochs.to_string());
        kv("pose_batch", self.pose_batch.to_string());
        kv("pose_lr", format!("{:?}", self.pose_lr));
        kv("train_figures", self.train_figures.to_string());
        kv("test_figures", self.test_figures.to_string());
        kv("pose_image_size", self.pose_image_size.to_string());
        s
    }

    /// SHA-256 of [`RunConfig::to_text`] without the dataset and output
    /// paths, hex encoded, so identical runs in different directories agree.
    pub fn hash(&self) -> String {
        let text: String = self.to_text().lines().filter(|l| !l.starts_with("out = ") && !l.starts_with("dataset = ")).map(|l| format!("{l}\n")).collect();
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
