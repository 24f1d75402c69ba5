//! Renders a random stick figure from an eight-camera ring and writes
//! color, depth and alpha images for every view.
//!
//! cargo run --example render_figure -- [seed] [out_dir]

use std::path::PathBuf;

use hfgauss::pipeline::io::{write_pfm, write_png};
use hfgauss::scenegen::{default_ring, generate_figure, BACKGROUND};
use hfgauss::splat::render;

fn main() -> hfgauss::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "render_figure_out".into()));

    let figure = generate_figure(seed)?;
    println!("figure {seed}: {} Gaussians", figure.gaussians.len());
    for (i, cam) in default_ring(256)?.iter().enumerate() {
        let r = render(&figure.gaussians, cam, BACKGROUND)?;
        write_png(&out.join(format!("color_{i}.png")), &r.color)?;
        write_pfm(&out.join(format!("depth_{i}.pfm")), &r.depth)?;
        write_pfm(&out.join(format!("alpha_{i}.pfm")), &r.alpha)?;
        let covered = r.alpha.data.iter().filter(|&&a| a > 0.5).count();
        println!("view {i}: {covered} foreground pixels");
    }
    println!("wrote {}", out.display());
    Ok(())
}
