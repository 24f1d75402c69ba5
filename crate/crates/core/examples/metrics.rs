//! Evaluation metrics and training losses on small hand-made inputs.

use hfgauss::image::{Image, Mask};
use hfgauss::keypoints::{KeypointSet, NUM_JOINTS};
use hfgauss::losses::{feature_mse, loss_depth, loss_image_terms, mpjpe, pck, psnr, ssim, PCK_THRESHOLD};

fn main() -> hfgauss::Result<()> {
    let gt = Image::from_data(32, 32, 3, (0..32 * 32 * 3).map(|i| ((i * 7) % 255) as f64 / 255.0).collect())?;
    let noisy = Image::from_data(32, 32, 3, gt.data.iter().enumerate().map(|(i, v)| (v + if i % 2 == 0 { 0.02 } else { -0.02 }).clamp(0.0, 1.0)).collect())?;
    let mask = Mask::new(32, 32, true);

    println!("PSNR identical {:?}, noisy {:.2} dB", psnr(&gt, &gt)?, psnr(&noisy, &gt)?);
    println!("SSIM noisy {:.4}", ssim(&noisy, &gt)?);
    let (l, mae, l_ssim) = loss_image_terms(&noisy, &gt, &mask)?;
    println!("L_image {l:.4} = 1.6 * {mae:.4} + 0.4 * {l_ssim:.4}");
    println!("feature MSE {:.6}", feature_mse(&noisy, &gt, Some(&mask))?);

    let d = |v| Image::filled(32, 32, 1, v);
    println!("depth loss over two steps {:.3}", loss_depth(&[d(1.5), d(1.2)], &d(1.0), &mask, 0.9)?);

    let truth: Vec<f64> = (0..NUM_JOINTS * 2).map(|i| (i * 13 % 97) as f64).collect();
    let pred: Vec<f64> = truth.iter().enumerate().map(|(i, v)| v + (i % 5) as f64).collect();
    let (p, t) = (KeypointSet::new(2, pred)?, KeypointSet::new(2, truth)?);
    println!("MPJPE {:.3} px, PCK@0.2 {:.3}", mpjpe(&p, &t)?, pck(&p, &t, PCK_THRESHOLD)?);
    Ok(())
}
