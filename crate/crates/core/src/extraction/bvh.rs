use rayon::prelude::*;

use super::TriangleMesh;
use crate::scene_io::{CameraView, PixelMap, Vec3};

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    /// Entry distance of the ray if it overlaps `[0, t_max]`.
    fn hit(&self, o: &Vec3, inv_d: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - o[k]) * inv_d[k];
            let b = (self.max[k] - o[k]) * inv_d[k];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            // NaN from 0 * inf leaves the bounds unchanged.
            t0 = if lo > t0 { lo } else { t0 };
            t1 = if hi < t1 { hi } else { t1 };
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: first triangle slot and count. Inner: left child index and 0.
    start: usize,
    count: usize,
    right: usize,
}

/// Bounding-volume hierarchy over a triangle mesh (median splits along the
/// widest centroid axis).
#[derive(Debug, Clone)]
pub struct Bvh<'a> {
    mesh: &'a TriangleMesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

const LEAF_SIZE: usize = 4;

impl<'a> Bvh<'a> {
    pub fn build(mesh: &'a TriangleMesh) -> Self {
        let n = mesh.triangles.len();
        let centroids: Vec<Vec3> = (0..n)
            .map(|i| {
                let [a, b, c] = mesh.triangle(i);
                (a + b + c) / 3.0
            })
            .collect();
        let mut bvh = Self {
            mesh,
            nodes: Vec::new(),
            order: (0..n).collect(),
        };
        if n > 0 {
            bvh.split(0, n, &centroids);
        }
        bvh
    }

    fn split(&mut self, start: usize, end: usize, centroids: &[Vec3]) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &t in &self.order[start..end] {
            for p in self.mesh.triangle(t) {
                bounds.grow(&p);
            }
            cbounds.grow(&centroids[t]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            bounds,
            start,
            count: end - start,
            right: 0,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let extent = cbounds.max - cbounds.min;
        let axis = extent.imax();
        if extent[axis] <= 0.0 {
            return id;
        }
        let mid = (start + end) / 2;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |a, b| centroids[*a][axis].total_cmp(&centroids[*b][axis]));
        self.split(start, mid, centroids);
        let right = self.split(mid, end, centroids);
        let node = &mut self.nodes[id];
        node.count = 0;
        node.start = id + 1;
        node.right = right;
        id
    }

    /// Nearest intersection distance along `d` (any length; distance in
    /// units of `|d|`) greater than `1e-9`.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.bounds.hit(o, &inv, best).is_none() {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.mesh.triangle(t);
                    if let Some(hit) = ray_triangle(o, d, &a, &b, &c) {
                        if hit < best {
                            best = hit;
                        }
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.start);
            }
        }
        best.is_finite().then_some(best)
    }
}

/// Möller-Trumbore intersection, two-sided.
pub fn ray_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-9).then_some(t)
}

/// Distance along each pixel-center ray to the nearest surface, 0 on miss.
pub fn raytrace_depth(bvh: &Bvh<'_>, view: &CameraView) -> PixelMap<f64> {
    let (w, h) = (view.width(), view.height());
    let o = view.center();
    let depth: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let d = view.direction_through((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            bvh.intersect(&o, &d).unwrap_or(0.0)
        })
        .collect();
    PixelMap::from_vec(w, h, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{marching_cubes, sdf_grid};
    use crate::renderer::{AnalyticField, SignedDistance};
    use crate::scene_io::{look_at, pinhole_intrinsics};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(z: f64) -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                Vec3::new(-0.5, -0.5, z),
                Vec3::new(0.5, -0.5, z),
                Vec3::new(0.5, 0.5, z),
                Vec3::new(-0.5, 0.5, z),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            normals: None,
        }
    }

    fn camera(eye: Vec3, w: usize, h: usize, f: f64) -> CameraView {
        let (r, t) = look_at(&eye, &Vec3::zeros(), &Vec3::y());
        CameraView::new(
            "c",
            pinhole_intrinsics(f, w as f64 / 2.0, h as f64 / 2.0),
            r,
            t,
            PixelMap::filled(w, h, Vec3::zeros()),
        )
    }

    #[test]
    fn square_facing_camera() {
        let mesh = square(0.0);
        let bvh = Bvh::build(&mesh);
        let view = camera(Vec3::new(0.0, 0.0, -2.0), 31, 31, 40.0);
        let depth = raytrace_depth(&bvh, &view);
        assert!((depth.get(15, 15) - 2.0).abs() < 1e-6);
        // Off-axis pixels: the plane z = 0 seen from z = -2 is hit at 2 / cos(theta).
        for (c, r) in [(8, 8), (20, 12), (15, 22)] {
            let d = view.direction_through(c as f64 + 0.5, r as f64 + 0.5);
            let expected = 2.0 / d.z;
            assert!((depth.get(c, r) - expected).abs() < 1e-9);
        }
        assert_eq!(*depth.get(0, 0), 0.0);
    }

    #[test]
    fn empty_mesh_gives_zero_depth() {
        let mesh = TriangleMesh::default();
        let bvh = Bvh::build(&mesh);
        let depth = raytrace_depth(&bvh, &camera(Vec3::new(0.0, 0.0, -2.0), 8, 6, 10.0));
        assert!(depth.as_slice().iter().all(|d| *d == 0.0));
    }

    struct Sphere;
    impl SignedDistance for Sphere {
        fn distance(&self, x: &Vec3) -> f64 {
            x.norm() - 0.5
        }
    }

    #[test]
    fn marching_cubes_sphere_depth_matches_analytic() {
        let grid = sdf_grid(&AnalyticField { shape: &Sphere, sharpness: 1.0 }, 64, 1.0);
        let mesh = marching_cubes(&grid, 0.0);
        let bvh = Bvh::build(&mesh);
        let view = camera(Vec3::new(0.3, 0.2, -1.8), 48, 48, 50.0);
        let depth = raytrace_depth(&bvh, &view);
        let o = view.center();
        let (mut hits, mut good) = (0, 0);
        for r in 0..48 {
            for c in 0..48 {
                let d = view.direction_through(c as f64 + 0.5, r as f64 + 0.5);
                let b = o.dot(&d);
                let disc = b * b - (o.norm_squared() - 0.25);
                if disc <= 0.0 || *depth.get(c, r) == 0.0 {
                    continue;
                }
                hits += 1;
                let analytic = -b - disc.sqrt();
                if (depth.get(c, r) - analytic).abs() <= 2.0 * grid.spacing {
                    good += 1;
                }
            }
        }
        assert!(hits > 100 && good as f64 >= 0.99 * hits as f64, "{good}/{hits}");
    }

    #[test]
    fn bvh_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut mesh = TriangleMesh::default();
        for t in 0..300u32 {
            let c = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            for _ in 0..3 {
                let off = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                mesh.vertices.push(c + off);
            }
            mesh.triangles.push([3 * t, 3 * t + 1, 3 * t + 2]);
        }
        let bvh = Bvh::build(&mesh);
        for _ in 0..500 {
            let o = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), -3.0);
            let d = (Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0) - o).normalize();
            let brute = (0..mesh.triangles.len())
                .filter_map(|i| {
                    let [a, b, c] = mesh.triangle(i);
                    ray_triangle(&o, &d, &a, &b, &c)
                })
                .fold(f64::INFINITY, f64::min);
            let fast = bvh.intersect(&o, &d).unwrap_or(f64::INFINITY);
            assert_eq!(fast, brute);
        }
    }
}
