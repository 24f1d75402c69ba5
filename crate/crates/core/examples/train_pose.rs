//! Trains the three pose backbones on clouds lifted from two source views of
//! synthetic figures and compares held-out MPJPE.
//!
//! cargo run --example train_pose -- [train_figures] [epochs]

use hfgauss::pipeline::posebench::{figure_clouds, run_backbone, TEST_SEED_OFFSET};
use hfgauss::pipeline::RunConfig;
use hfgauss::posenet::Backbone;

fn main() -> hfgauss::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = RunConfig {
        train_figures: args.next().map_or(60, |s| s.parse().expect("train figures")),
        test_figures: 20,
        pose_epochs: args.next().map_or(4, |s| s.parse().expect("epochs")),
        pose_points: 256,
        ..RunConfig::default()
    };
    let train = figure_clouds(0, cfg.train_figures, &cfg)?;
    let test = figure_clouds(TEST_SEED_OFFSET, cfg.test_figures, &cfg)?;
    println!("{} training clouds of {} points", train.len(), cfg.pose_points);
    for backbone in Backbone::ALL {
        let run = run_backbone(&train, &test, &cfg, backbone, 0)?;
        let last = run.log.last().expect("at least one epoch");
        println!(
            "{backbone:9} train MPJPE {:.4}  held-out MPJPE {:.4}",
            last.train_mpjpe, run.heldout_mpjpe
        );
    }
    Ok(())
}
