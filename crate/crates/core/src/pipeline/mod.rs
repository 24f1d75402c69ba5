//! End-to-end orchestration: configuration, file formats, sample
//! directories, scene fitting, pose benchmarks, the gradient suite and the
//! command line.

use std::path::Path;

use serde_json::{json, Value};

use crate::error::Result;

pub mod cli;
pub mod config;
pub mod dataset;
pub mod gradsuite;
pub mod io;
mod optimize;
pub mod posebench;
pub mod throughput;

pub use config::{FeatureMode, LearningRates, LossToggles, RunConfig};
pub use optimize::{heldout_view, init_scene, optimize_scene, predicted_embedding, SceneFit};

/// Version in `git describe` form.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Writes `out/manifest.json`: command, config hash, seed, version and
/// command-specific details. Nothing time- or machine-dependent goes in.
pub fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, details: Value) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": VERSION,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "details": details,
    });
    io::write_json(&out.join("manifest.json"), &manifest)
}
