//! Evaluates each loss term on small hand-made inputs.

use roomsdf::losses::{
    color_loss, distance_prior_loss, eikonal_loss, normal_prior_loss, residual_loss, smooth_l1, LossWeights,
};
use roomsdf::scene_io::Vec3;

fn main() -> roomsdf::Result<()> {
    let w = LossWeights::default();
    println!("smooth L1 below / at / above beta: {:.4} {:.4} {:.4}",
        smooth_l1(&[0.05], &[0.0], 0.1)?,
        smooth_l1(&[0.1], &[0.0], 0.1)?,
        smooth_l1(&[0.3], &[0.0], 0.1)?);
    let rendered = [Vec3::new(0.5, 0.4, 0.3), Vec3::new(0.1, 0.9, 0.2)];
    let truth = [Vec3::new(0.6, 0.4, 0.3), Vec3::new(0.1, 0.7, 0.2)];
    println!("color L1: {:.4}", color_loss(&rendered, &truth));
    println!(
        "distance prior (second ray masked): {:.4}",
        distance_prior_loss(&[1.2, 3.0], &[1.0, 0.0], &[true, false])
    );
    let n = Vec3::new(0.0, 0.0, 1.0);
    println!(
        "normal prior, 30 degrees apart: {:.4}",
        normal_prior_loss(&[Vec3::new(0.5, 0.0, 0.75f64.sqrt())], &[n], &[true])
    );
    println!(
        "eikonal for |g| = 1, 0, 2: {:.1} {:.1} {:.1}",
        eikonal_loss(&[Vec3::x()]),
        eikonal_loss(&[Vec3::zeros()]),
        eikonal_loss(&[Vec3::x() * 2.0])
    );
    let res = residual_loss(&[1.0, 1.0], &[1.02, 1.5], &[n, n], &[n, Vec3::x()], &[true, true], &w, true);
    println!(
        "residual: smooth {:.5}, consist {:.5}, gradient into the first stage {:?}",
        res.smooth, res.consist, res.d_depth
    );
    Ok(())
}
