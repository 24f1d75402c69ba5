//! Sample directories: `sample_%05d/` with per-view cameras, color, depth,
//! mask, 2D keypoints and embeddings, plus the 3D keypoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::*;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::scenegen::{DatasetSample, ViewData};

#[derive(Serialize, Deserialize)]
struct SampleInfo {
    views: usize,
    source: [usize; 2],
    target: usize,
}

pub fn sample_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("sample_{index:05}"))
}

pub fn write_sample(dir: &Path, sample: &DatasetSample) -> Result<()> {
    for (i, v) in sample.views.iter().enumerate() {
        write_json(&dir.join(format!("cam_{i}.json")), &v.camera)?;
        write_png(&dir.join(format!("color_{i}.png")), &v.color)?;
        write_pfm(&dir.join(format!("depth_{i}.pfm")), &v.depth)?;
        write_mask(&dir.join(format!("mask_{i}.png")), &v.mask)?;
        write_keypoints(&dir.join(format!("kp2d_{i}.json")), &v.keypoints2d)?;
        write_pfm(&dir.join(format!("embed_{i}.pfm")), &v.embedding)?;
    }
    write_keypoints(&dir.join("kp3d.json"), &sample.keypoints3d)?;
    let info = SampleInfo {
        views: sample.views.len(),
        source: sample.source,
        target: sample.target,
    };
    write_json(&dir.join("sample.json"), &info)
}

/// Loads a sample directory. Colors come back quantized to 8 bits and the
/// alpha channel is reconstructed from the mask.
pub fn read_sample(dir: &Path) -> Result<DatasetSample> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let info: SampleInfo = read_json(&dir.join("sample.json"))?;
    let mut views = Vec::with_capacity(info.views);
    for i in 0..info.views {
        let camera: Camera = read_json(&dir.join(format!("cam_{i}.json")))?;
        camera.validate()?;
        let color = read_png(&dir.join(format!("color_{i}.png")))?;
        let depth = read_pfm(&dir.join(format!("depth_{i}.pfm")))?;
        let mask = read_mask(&dir.join(format!("mask_{i}.png")))?;
        let embedding = read_pfm(&dir.join(format!("embed_{i}.pfm")))?;
        let keypoints2d = read_keypoints(&dir.join(format!("kp2d_{i}.json")))?;
        for (what, w, h) in [
            ("color", color.width, color.height),
            ("depth", depth.width, depth.height),
            ("mask", mask.width, mask.height),
            ("embedding", embedding.width, embedding.height),
        ] {
            if (w, h) != (camera.width, camera.height) {
                return Err(Error::Shape(format!("view {i} {what} is {w}x{h}, camera is {}x{}", camera.width, camera.height)));
            }
        }
        views.push(ViewData {
            alpha: mask_to_image(&mask),
            camera,
            color,
            depth,
            mask,
            embedding,
            keypoints2d,
        });
    }
    if info.source.iter().chain([&info.target]).any(|&v| v >= views.len()) {
        return Err(Error::Invalid("sample.json refers to a missing view".into()));
    }
    Ok(DatasetSample {
        views,
        keypoints3d: read_keypoints(&dir.join("kp3d.json"))?,
        source: info.source,
        target: info.target,
    })
}

/// Sample directories under `root`, sorted by name.
pub fn list_samples(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("sample_")))
        .collect();
    dirs.sort();
    Ok(dirs)
}
