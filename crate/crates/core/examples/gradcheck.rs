//! Checks analytic rendering gradients against central differences on one
//! random scene, then runs a short version of the full gradient suite.

use hfgauss::gaussian::ParamClass;
use hfgauss::grad::{adjoint_inner, backward_render, finite_diff_check_with, FdOptions};
use hfgauss::pipeline::gradsuite::{random_scene, run_gradient_suite, TOLERANCE};
use hfgauss::splat::{contributor_fingerprint, render};

fn main() -> hfgauss::Result<()> {
    let (set, cam, bg) = random_scene(3);
    let adjoint = render(&set, &cam, bg)?;
    let grads = backward_render(&set, &cam, bg, &adjoint)?;

    // L = ⟨adjoint, render(x)⟩ with a fixed adjoint.
    let loss = |flat: &[f64]| {
        let mut s = set.clone();
        s.set_flat(flat);
        adjoint_inner(&render(&s, &cam, bg).unwrap(), &adjoint)
    };
    // Perturbations that change which Gaussians reach which pixels are skipped.
    let regime = |flat: &[f64]| {
        let mut s = set.clone();
        s.set_flat(flat);
        contributor_fingerprint(&s, &cam).unwrap()
    };
    let options = FdOptions {
        eps: 1e-5,
        regime: Some(&regime),
        shrink: 2,
        ..FdOptions::default()
    };
    let report = finite_diff_check_with(loss, &set.to_flat(), &grads.scene.to_flat(), &options);
    println!(
        "{} Gaussians: {} parameters checked, {} skipped, max relative error {:.2e}",
        set.len(),
        report.checked,
        report.skipped,
        report.max_rel_error
    );
    for class in ParamClass::ALL {
        println!("  |d{}| max {:.3e}", class.name(), grads.scene.param(class).iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    let suite = run_gradient_suite(0, 2)?;
    print!("{}", suite.to_text());
    println!("suite {} at tolerance {TOLERANCE:.0e}", if suite.passed() { "passed" } else { "failed" });
    Ok(())
}
