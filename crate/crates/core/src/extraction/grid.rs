use rayon::prelude::*;

use super::tables::TRI_TABLE;
use super::TriangleMesh;
use crate::renderer::RenderField;
use crate::scene_io::Vec3;

/// Scalar samples on a regular lattice, x fastest. NaN marks unknown
/// samples; cubes touching one are skipped by [`marching_cubes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }
}

/// Evaluates `field` on `resolution^3` lattice points spanning
/// `[-half_extent, half_extent]^3`, one z-slice per batch.
pub fn sdf_grid<F: RenderField + ?Sized>(field: &F, resolution: usize, half_extent: f64) -> ScalarGrid {
    assert!(resolution >= 2, "grid needs at least two samples per axis");
    let spacing = 2.0 * half_extent / (resolution - 1) as f64;
    let origin = Vec3::repeat(-half_extent);
    let n = resolution;
    let slices: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let pts: Vec<Vec3> = (0..n * n)
                .map(|ij| origin + Vec3::new((ij % n) as f64, (ij / n) as f64, k as f64) * spacing)
                .collect();
            field.sdf(&pts)
        })
        .collect();
    ScalarGrid {
        dims: [n; 3],
        origin,
        spacing,
        values: slices.concat(),
    }
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `iso` level set with per-vertex welding along lattice edges.
/// Triangles are wound so their geometric normals point toward increasing
/// values (out of the negative region); vertex normals are the normalized
/// lattice gradient.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims;
    let mut mesh = TriangleMesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    let mut welded: std::collections::HashMap<(usize, u8), u32> = std::collections::HashMap::new();
    let mut vertex_on = |mesh: &mut TriangleMesh, a: [usize; 3], b: [usize; 3]| -> u32 {
        let (lo, hi) = if grid.index(a[0], a[1], a[2]) < grid.index(b[0], b[1], b[2]) { (a, b) } else { (b, a) };
        let axis = (0..3).find(|&d| lo[d] != hi[d]).expect("distinct corners") as u8;
        let key = (grid.index(lo[0], lo[1], lo[2]), axis);
        *welded.entry(key).or_insert_with(|| {
            let (va, vb) = (grid.get(lo[0], lo[1], lo[2]), grid.get(hi[0], hi[1], hi[2]));
            let t = ((iso - va) / (vb - va)).clamp(1e-7, 1.0 - 1e-7);
            let p = grid.point(lo[0], lo[1], lo[2]) * (1.0 - t) + grid.point(hi[0], hi[1], hi[2]) * t;
            mesh.vertices.push(p);
            (mesh.vertices.len() - 1) as u32
        })
    };
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                let mut known = true;
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = grid.get(i + off[0], j + off[1], k + off[2]);
                    known &= vals[c].is_finite();
                    if vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                if !known || case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                    let mut ids = [0u32; 3];
                    for (slot, e) in tri.iter().enumerate() {
                        let [ca, cb] = EDGES[*e as usize];
                        let a = [i + CORNERS[ca][0], j + CORNERS[ca][1], k + CORNERS[ca][2]];
                        let b = [i + CORNERS[cb][0], j + CORNERS[cb][1], k + CORNERS[cb][2]];
                        ids[slot] = vertex_on(&mut mesh, a, b);
                    }
                    if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
                        // Table winding faces the negative side; flip it.
                        mesh.triangles.push([ids[0], ids[2], ids[1]]);
                    }
                }
            }
        }
    }
    mesh.triangles.retain(|t| {
        let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm() > 1e-12
    });
    mesh.normals = Some(mesh.vertices.iter().map(|p| lattice_gradient(grid, p)).collect());
    mesh
}

/// Normal estimate from central differences at the nearest
/// lattice point, falling back to zero where a neighbour is missing.
fn lattice_gradient(grid: &ScalarGrid, p: &Vec3) -> Vec3 {
    let rel = (p - grid.origin) / grid.spacing;
    let idx: [usize; 3] = std::array::from_fn(|d| (rel[d].round().max(0.0) as usize).min(grid.dims[d] - 1));
    let mut g = Vec3::zeros();
    for d in 0..3 {
        let mut lo = idx;
        let mut hi = idx;
        lo[d] = lo[d].saturating_sub(1);
        hi[d] = (hi[d] + 1).min(grid.dims[d] - 1);
        if lo[d] == hi[d] {
            continue;
        }
        let diff = grid.get(hi[0], hi[1], hi[2]) - grid.get(lo[0], lo[1], lo[2]);
        g[d] = diff / ((hi[d] - lo[d]) as f64 * grid.spacing);
    }
    let n = g.norm();
    if n.is_finite() && n > 0.0 {
        g / n
    } else {
        Vec3::zeros()
    }
}
