//! Fuses ground-truth depth maps of the synthetic room into a TSDF volume
//! and measures how close the fused surface is to the analytic one.

use roomsdf::extraction::{marching_cubes, TsdfVolume};
use roomsdf::scene_io::Vec3;
use roomsdf::synth::{generate, SynthConfig, ROOM_CENTER};

fn main() -> roomsdf::Result<()> {
    let synth = generate(&SynthConfig { views: 12, ..SynthConfig::default() })?;
    let c = Vec3::from(ROOM_CENTER);
    let mut volume = TsdfVolume::covering(&(c - Vec3::repeat(1.1)), &(c + Vec3::repeat(1.1)), 0.02, 0.12)?;
    for (view, gt) in synth.views.iter().zip(&synth.ground_truth) {
        volume.integrate(&gt.depth, view)?;
    }
    let mesh = marching_cubes(&volume.to_grid(), 0.0);
    let errors: Vec<f64> = mesh.vertices.iter().map(|v| synth.scene.sdf(v).abs()).collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    println!(
        "{} dims, {} vertices, mean |sdf| at vertices {:.4} m, max {:.4} m",
        volume.dims.map(|d| d.to_string()).join("x"),
        mesh.vertices.len(),
        mean,
        errors.iter().cloned().fold(0.0, f64::max)
    );
    Ok(())
}
