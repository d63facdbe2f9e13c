//! Scores a perturbed copy of a mesh against the original.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomsdf::evaluation::{mesh_to_points, recon_metrics};
use roomsdf::extraction::{marching_cubes, sdf_grid};
use roomsdf::renderer::AnalyticField;
use roomsdf::scene_io::Vec3;
use roomsdf::synth::sphere_scene;

fn main() -> roomsdf::Result<()> {
    let scene = sphere_scene();
    let gt = marching_cubes(&sdf_grid(&AnalyticField { shape: &scene, sharpness: 1.0 }, 96, 1.0), 0.0);
    let gt_points = mesh_to_points(&gt, 0.01, 0);
    println!("{:>8} {:>8} {:>8} {:>8} {:>8}", "noise", "acc", "comp", "P", "F");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for noise in [0.0, 0.01, 0.03, 0.06] {
        let pred = gt.map_vertices(|v| {
            let jitter = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            v + jitter * noise
        });
        let m = recon_metrics(&mesh_to_points(&pred, 0.01, 1), &gt_points, 0.05)?;
        println!(
            "{noise:>8.3} {:>8.4} {:>8.4} {:>8.1} {:>8.1}",
            m.accuracy, m.completeness, m.precision, m.fscore
        );
    }
    Ok(())
}
