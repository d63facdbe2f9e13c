//! Surface extraction: geometry lattice, marching cubes, ray-traced depth
//! and TSDF fusion of the raw mesh into the final mesh.

mod bvh;
mod grid;
mod mesh;
mod tables;
mod tsdf;

pub use bvh::{ray_triangle, raytrace_depth, Bvh};
pub use grid::{marching_cubes, sdf_grid, ScalarGrid};
pub use mesh::{read_ply, write_ply, TriangleMesh};
pub use tsdf::TsdfVolume;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::renderer::RenderField;
use crate::scene_io::{SceneBundle, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    /// Lattice points per axis of the raw geometry grid.
    pub resolution: usize,
    /// Meters.
    pub voxel_size: f64,
    /// Meters.
    pub truncation: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            resolution: 256,
            voxel_size: 0.02,
            truncation: 0.12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Extraction {
    /// Marching-cubes mesh of the zero level set, meters.
    pub raw: TriangleMesh,
    /// Fused mesh restricted to what the cameras observe, meters.
    pub fused: TriangleMesh,
}

/// Maps an optimization-frame mesh into world meters.
pub fn denormalize(mesh: &TriangleMesh, scene: &SceneBundle) -> TriangleMesh {
    mesh.map_vertices(|p| scene.to_world(p))
}

/// Inverse of [`denormalize`].
pub fn normalize(mesh: &TriangleMesh, scene: &SceneBundle) -> TriangleMesh {
    mesh.map_vertices(|p| scene.to_optimization(p))
}

/// Raw mesh from the field's zero level set, then re-fused from depth maps
/// ray traced at every camera. Fusion runs in world meters so voxel size
/// and truncation keep their physical meaning.
pub fn extract_mesh<F: RenderField + ?Sized>(field: &F, scene: &SceneBundle, opts: &ExtractOptions) -> Result<Extraction> {
    let grid = sdf_grid(field, opts.resolution, scene.cube_half_extent);
    let raw = denormalize(&marching_cubes(&grid, 0.0), scene);
    log::info!("raw mesh: {} vertices, {} triangles", raw.vertices.len(), raw.triangles.len());
    let fused = fuse_views(&raw, scene, opts)?;
    log::info!("fused mesh: {} vertices, {} triangles", fused.vertices.len(), fused.triangles.len());
    Ok(Extraction { raw, fused })
}

/// TSDF re-fusion of a world-frame mesh from every scene camera.
pub fn fuse_views(mesh: &TriangleMesh, scene: &SceneBundle, opts: &ExtractOptions) -> Result<TriangleMesh> {
    let half = Vec3::repeat(scene.cube_half_extent * scene.s_scale);
    let lo = scene.t_opt - half;
    let hi = scene.t_opt + half;
    let mut volume = TsdfVolume::covering(&lo, &hi, opts.voxel_size, opts.truncation)?;
    let bvh = Bvh::build(mesh);
    for view in scene.world_views() {
        let depth = raytrace_depth(&bvh, &view);
        volume.integrate(&depth, &view)?;
    }
    Ok(marching_cubes(&volume.to_grid(), 0.0))
}
