use rayon::prelude::*;

use super::ScalarGrid;
use crate::error::{Error, Result};
use crate::scene_io::{CameraView, PixelMap, Vec3};

/// Fixed-point scale of the accumulated TSDF sums. Integer accumulation
/// keeps fusion exactly independent of the view order.
const FIXED_ONE: f64 = 4_294_967_296.0;

/// Projective truncated signed distance volume with unit weight per
/// observation. Lattice point `(i, j, k)` sits at `origin + voxel_size * (i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub voxel_size: f64,
    pub truncation: f64,
    pub origin: Vec3,
    pub dims: [usize; 3],
    sums: Vec<i64>,
    weights: Vec<u32>,
}

impl TsdfVolume {
    pub fn new(origin: Vec3, dims: [usize; 3], voxel_size: f64, truncation: f64) -> Result<Self> {
        if !(voxel_size > 0.0) || !(truncation > 0.0) {
            return Err(Error::Validation(format!(
                "voxel size and truncation must be positive, got {voxel_size} and {truncation}"
            )));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Validation(format!("TSDF dims {dims:?} need at least 2 per axis")));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            voxel_size,
            truncation,
            origin,
            dims,
            sums: vec![0; n],
            weights: vec![0; n],
        })
    }

    /// Volume covering the box `[lo, hi]`.
    pub fn covering(lo: &Vec3, hi: &Vec3, voxel_size: f64, truncation: f64) -> Result<Self> {
        let extent = hi - lo;
        let dims = [0, 1, 2].map(|k| (extent[k] / voxel_size).ceil().max(1.0) as usize + 1);
        Self::new(*lo, dims, voxel_size, truncation)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Fused value in `[-1, 1]`, `None` if never observed.
    pub fn tsdf(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        let idx = self.index(i, j, k);
        let w = self.weights[idx];
        (w > 0).then(|| self.sums[idx] as f64 / (w as f64 * FIXED_ONE))
    }

    pub fn weight(&self, i: usize, j: usize, k: usize) -> u32 {
        self.weights[self.index(i, j, k)]
    }

    /// Fuses one depth map of Euclidean ray distances (0 = no measurement).
    /// Each voxel is compared with the nearest pixel's depth converted to
    /// camera z. Voxels more than one truncation behind the surface are
    /// left untouched.
    pub fn integrate(&mut self, depth: &PixelMap<f64>, view: &CameraView) -> Result<()> {
        if depth.width() != view.width() || depth.height() != view.height() {
            return Err(Error::Argument(format!(
                "depth map {}x{} does not match view `{}` ({}x{})",
                depth.width(),
                depth.height(),
                view.id,
                view.width(),
                view.height()
            )));
        }
        let (w, h) = (view.width(), view.height());
        let z_depth: Vec<f64> = (0..w * h)
            .map(|i| {
                let d = depth.as_slice()[i];
                if d > 0.0 {
                    let (_, dir) = view.pixel_center_ray(i % w, i / w);
                    d * (view.rotation * dir).z
                } else {
                    0.0
                }
            })
            .collect();
        let slice = self.dims[0] * self.dims[1];
        let (nx, ny) = (self.dims[0], self.dims[1]);
        let (origin, voxel, trunc) = (self.origin, self.voxel_size, self.truncation);
        self.sums
            .par_chunks_mut(slice)
            .zip(self.weights.par_chunks_mut(slice))
            .enumerate()
            .for_each(|(k, (sums, weights))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vec3::new(i as f64, j as f64, k as f64) * voxel;
                        let (u, v, z) = view.project(&p);
                        if !(z > 0.0) || !(u >= 0.0 && v >= 0.0) {
                            continue;
                        }
                        let (col, row) = (u as usize, v as usize);
                        if col >= w || row >= h {
                            continue;
                        }
                        let measured = z_depth[col + w * row];
                        if measured <= 0.0 {
                            continue;
                        }
                        let sdf = measured - z;
                        if sdf < -trunc {
                            continue;
                        }
                        let value = (sdf / trunc).min(1.0);
                        let idx = i + nx * j;
                        sums[idx] += (value * FIXED_ONE).round() as i64;
                        weights[idx] += 1;
                    }
                }
            });
        Ok(())
    }

    /// Lattice of fused values, NaN where unobserved.
    pub fn to_grid(&self) -> ScalarGrid {
        let values = self
            .sums
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| if w > 0 { s as f64 / (w as f64 * FIXED_ONE) } else { f64::NAN })
            .collect();
        ScalarGrid {
            dims: self.dims,
            origin: self.origin,
            spacing: self.voxel_size,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::marching_cubes;
    use crate::scene_io::{look_at, pinhole_intrinsics};

    fn view_at(eye: Vec3, target: Vec3) -> CameraView {
        let (r, t) = look_at(&eye, &target, &Vec3::y());
        CameraView::new("v", pinhole_intrinsics(60.0, 40.0, 30.0), r, t, PixelMap::filled(80, 60, Vec3::zeros()))
    }

    /// Euclidean distances to the plane `z = plane_z` seen by `view`.
    fn plane_depth(view: &CameraView, plane_z: f64) -> PixelMap<f64> {
        PixelMap::from_fn(view.width(), view.height(), |c, r| {
            let (o, d) = view.pixel_center_ray(c, r);
            let t = (plane_z - o.z) / d.z;
            if t > 0.0 { t } else { 0.0 }
        })
    }

    fn volume() -> TsdfVolume {
        TsdfVolume::covering(&Vec3::repeat(-0.5), &Vec3::repeat(0.5), 0.02, 0.12).unwrap()
    }

    #[test]
    fn plane_zero_crossing() {
        let view = view_at(Vec3::new(0.0, 0.0, -2.0), Vec3::zeros());
        let mut vol = volume();
        vol.integrate(&plane_depth(&view, 0.1), &view).unwrap();
        let mesh = marching_cubes(&vol.to_grid(), 0.0);
        assert!(mesh.vertices.len() > 100);
        for v in &mesh.vertices {
            assert!((v.z - 0.1).abs() <= vol.voxel_size, "{v:?}");
        }
    }

    #[test]
    fn repeated_map_doubles_weight_only() {
        let view = view_at(Vec3::new(0.3, 0.1, -2.0), Vec3::zeros());
        let depth = plane_depth(&view, 0.0);
        let mut once = volume();
        once.integrate(&depth, &view).unwrap();
        let mut twice = once.clone();
        twice.integrate(&depth, &view).unwrap();
        let mut observed = 0;
        for k in 0..once.dims[2] {
            for j in 0..once.dims[1] {
                for i in 0..once.dims[0] {
                    assert_eq!(twice.weight(i, j, k), 2 * once.weight(i, j, k));
                    assert_eq!(twice.tsdf(i, j, k), once.tsdf(i, j, k));
                    observed += once.tsdf(i, j, k).is_some() as usize;
                }
            }
        }
        assert!(observed > 1000);
    }

    #[test]
    fn far_behind_surface_untouched() {
        let view = view_at(Vec3::new(0.0, 0.0, -2.0), Vec3::zeros());
        let mut vol = volume();
        vol.integrate(&plane_depth(&view, -0.2), &view).unwrap();
        let c = vol.dims[0] / 2;
        for k in 0..vol.dims[2] {
            let z = vol.point(c, c, k).z;
            let t = vol.tsdf(c, c, k);
            if z > -0.2 + 0.12 + 1e-9 {
                assert!(t.is_none(), "voxel at z={z} got {t:?}");
            } else {
                let t = t.expect("voxel in front of or near the surface is observed");
                assert!(t.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn values_bounded() {
        let view = view_at(Vec3::new(0.5, 0.4, -1.5), Vec3::zeros());
        let mut vol = volume();
        vol.integrate(&plane_depth(&view, 0.05), &view).unwrap();
        let grid = vol.to_grid();
        assert!(grid.values.iter().filter(|v| v.is_finite()).all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let view = view_at(Vec3::new(0.0, 0.0, -2.0), Vec3::zeros());
        let mut vol = volume();
        assert!(vol.integrate(&PixelMap::filled(3, 3, 1.0), &view).is_err());
        assert!(TsdfVolume::new(Vec3::zeros(), [4, 4, 4], 0.0, 0.1).is_err());
    }
}
