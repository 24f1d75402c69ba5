//! Writes a few synthetic sample directories and reads one back.
//!
//! cargo run --example generate_dataset -- [samples] [out_dir]

use std::path::PathBuf;

use hfgauss::pipeline::dataset::{list_samples, read_sample, sample_dir, write_sample};
use hfgauss::pipeline::io::write_ply;
use hfgauss::scenegen::{default_ring, generate_figure, make_sample};

fn main() -> hfgauss::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: u64 = args.next().map_or(3, |s| s.parse().expect("samples"));
    let root = PathBuf::from(args.next().unwrap_or_else(|| "dataset_out".into()));

    let ring = default_ring(128)?;
    for seed in 0..count {
        let figure = generate_figure(seed)?;
        let sample = make_sample(&figure, &ring, seed)?;
        let dir = sample_dir(&root, seed as usize);
        write_sample(&dir, &sample)?;
        write_ply(&dir.join("scene.ply"), &figure.gaussians)?;
        println!("{}: sources {:?}, target {}", dir.display(), sample.source, sample.target);
    }
    let dirs = list_samples(&root)?;
    let back = read_sample(&dirs[0])?;
    println!("{} samples; first has {} views", dirs.len(), back.views.len());
    Ok(())
}
