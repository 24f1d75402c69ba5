//! Composites per-Gaussian features with the color weights, decodes them
//! into embeddings, and shows that features equal to colors reproduce the
//! color image exactly.

use hfgauss::featdec::{decode, DecoderWeights};
use hfgauss::gaussian::GaussianSet;
use hfgauss::scenegen::{default_ring, generate_figure};
use hfgauss::splat::render;

fn main() -> hfgauss::Result<()> {
    let figure = generate_figure(1)?;
    let cam = &default_ring(96)?[0];

    let g = &figure.gaussians;
    let mut shared = GaussianSet::zeros(g.len(), 3);
    shared.positions = g.positions.clone();
    shared.rotations = g.rotations.clone();
    shared.scales = g.scales.clone();
    shared.opacities = g.opacities.clone();
    shared.colors = g.colors.clone();
    shared.features = g.colors.clone();
    let out = render(&shared, cam, [0.0; 3])?;
    println!("feature image == color image: {}", out.feature == out.color);

    let mut featured = GaussianSet::zeros(g.len(), 8);
    featured.positions = g.positions.clone();
    featured.rotations = g.rotations.clone();
    featured.scales = g.scales.clone();
    featured.opacities = g.opacities.clone();
    for (i, v) in featured.features.iter_mut().enumerate() {
        *v = ((i * 37 % 101) as f64 / 50.0) - 1.0;
    }
    let out = render(&featured, cam, [0.0; 3])?;
    let decoder = DecoderWeights::init(8, 3, 7);
    let embed = decode(&out.feature, &out.alpha, &decoder)?;
    let fg = out.alpha.data.iter().filter(|&&a| a > 1e-6).count();
    println!(
        "decoded {}x{}x{} embedding over {fg} covered pixels",
        embed.width, embed.height, embed.channels
    );
    Ok(())
}
