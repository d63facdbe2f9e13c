//! Extracts the zero level set of an analytic sphere and writes a PLY.

use std::path::PathBuf;

use roomsdf::extraction::{marching_cubes, sdf_grid, write_ply};
use roomsdf::renderer::{AnalyticField, SignedDistance};
use roomsdf::scene_io::Vec3;

struct Sphere;

impl SignedDistance for Sphere {
    fn distance(&self, x: &Vec3) -> f64 {
        x.norm() - 0.5
    }
}

fn main() -> roomsdf::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sphere.ply"));
    for res in [32, 64, 128] {
        let grid = sdf_grid(&AnalyticField { shape: &Sphere, sharpness: 1.0 }, res, 1.0);
        let mesh = marching_cubes(&grid, 0.0);
        let worst = mesh.vertices.iter().map(|v| (v.norm() - 0.5).abs()).fold(0.0, f64::max);
        println!(
            "res {res:>3}: {:>6} vertices, {:>6} triangles, area {:.4} (exact {:.4}), worst radius error {:.2} cells, orientation defects {:?}",
            mesh.vertices.len(),
            mesh.triangles.len(),
            mesh.surface_area(),
            std::f64::consts::PI,
            worst / grid.spacing,
            mesh.orientation_defects()
        );
        if res == 128 {
            write_ply(&mesh, &out, false)?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
