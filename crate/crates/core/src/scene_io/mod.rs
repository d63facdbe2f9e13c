//! Scene data model: posed pinhole views, their prior maps, and the
//! world-to-optimization normalization shared by every later stage.
//!
//! Conventions used throughout the crate:
//!
//! * extrinsics map world to camera, `x_cam = R x_world + t`;
//! * pixel `(col, row)` covers `[col, col+1) x [row, row+1)`, so its center
//!   sits at half-integer image coordinates;
//! * camera looks down `+z`, image `x` right, image `y` down.

mod disk;
mod map;

pub use disk::{load_scene, read_f32_map, save_scene, write_f32_map, LoadOptions, SceneFrame, SceneMeta};
pub use map::PixelMap;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ROTATION_TOLERANCE: f64 = 1e-6;

/// One posed image with optional geometry priors.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub id: String,
    pub intrinsics: Mat3,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub image: PixelMap<Vec3>,
    /// Camera-center-to-surface distance, 0 where undefined.
    pub distance_prior: Option<PixelMap<f64>>,
    /// World-frame unit normals, zero vector where filtered.
    pub normal_prior: Option<PixelMap<Vec3>>,
    pub uncertainty: Option<PixelMap<f64>>,
}

impl CameraView {
    pub fn new(id: impl Into<String>, intrinsics: Mat3, rotation: Mat3, translation: Vec3, image: PixelMap<Vec3>) -> Self {
        Self {
            id: id.into(),
            intrinsics,
            rotation,
            translation,
            image,
            distance_prior: None,
            normal_prior: None,
            uncertainty: None,
        }
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Camera center `-R^T t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    fn intrinsics_inverse(&self) -> Mat3 {
        self.intrinsics
            .try_inverse()
            .expect("intrinsics validated as invertible")
    }

    /// Checks the rotation, intrinsics and prior-map invariants.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        let det = r.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::Validation(format!(
                "view `{}`: rotation is not a proper rotation (|R^T R - I| = {ortho:.3e}, det = {det:.6})",
                self.id
            )));
        }
        if self.intrinsics.try_inverse().is_none() || self.intrinsics[(2, 2)] == 0.0 {
            return Err(Error::Validation(format!("view `{}`: singular intrinsics", self.id)));
        }
        if let Some(d) = &self.distance_prior {
            if !d.same_shape(&self.image) {
                return Err(shape_error(&self.id, "distance prior"));
            }
            if d.as_slice().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "view `{}`: distance prior contains negative or non-finite values",
                    self.id
                )));
            }
        }
        if let Some(n) = &self.normal_prior {
            if !n.same_shape(&self.image) {
                return Err(shape_error(&self.id, "normal prior"));
            }
            for v in n.as_slice() {
                let len = v.norm();
                if len != 0.0 && (len - 1.0).abs() > 1e-4 {
                    return Err(Error::Validation(format!(
                        "view `{}`: normal prior with norm {len}",
                        self.id
                    )));
                }
            }
        }
        if let Some(u) = &self.uncertainty {
            if !u.same_shape(&self.image) {
                return Err(shape_error(&self.id, "uncertainty"));
            }
            if u.as_slice().iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Validation(format!("view `{}`: negative uncertainty", self.id)));
            }
        }
        Ok(())
    }

    fn check_bounds(&self, u: f64, v: f64) -> Result<()> {
        let inside = u >= 0.0 && v >= 0.0 && u <= self.width() as f64 && v <= self.height() as f64;
        if inside {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "pixel ({u}, {v}) outside {}x{} image `{}`",
                self.width(),
                self.height(),
                self.id
            )))
        }
    }

    /// Unit world-frame direction through continuous image coordinates,
    /// without a bounds check. Used for jittered rays that may leave the image.
    pub fn direction_through(&self, u: f64, v: f64) -> Vec3 {
        let cam = self.intrinsics_inverse() * Vec3::new(u, v, 1.0);
        self.rotation.transpose() * cam.normalize()
    }

    /// Ray through continuous image coordinates `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Result<(Vec3, Vec3)> {
        self.check_bounds(u, v)?;
        Ok((self.center(), self.direction_through(u, v)))
    }

    /// Ray through the center of pixel `(col, row)`.
    pub fn pixel_center_ray(&self, col: usize, row: usize) -> (Vec3, Vec3) {
        (
            self.center(),
            self.direction_through(col as f64 + 0.5, row as f64 + 0.5),
        )
    }

    /// Lifts image coordinates at z-depth `depth` into the scene frame.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Result<Vec3> {
        if !(depth > 0.0) {
            return Err(Error::Argument(format!("backproject needs depth > 0, got {depth}")));
        }
        let cam = self.intrinsics_inverse() * Vec3::new(u * depth, v * depth, depth);
        Ok(self.rotation.transpose() * (cam - self.translation))
    }

    /// Point along the pixel-center ray at Euclidean distance `distance`.
    pub fn backproject_distance(&self, col: usize, row: usize, distance: f64) -> Vec3 {
        let (o, d) = self.pixel_center_ray(col, row);
        o + d * distance
    }

    /// Returns `(u, v, z_depth)` for a scene point.
    pub fn project(&self, x: &Vec3) -> (f64, f64, f64) {
        let cam = self.rotation * x + self.translation;
        let p = self.intrinsics * cam;
        (p.x / p.z, p.y / p.z, cam.z)
    }

    /// Point in camera coordinates.
    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// Re-expresses the view in the frame `x' = (x - center) / scale`.
    /// Rotations are untouched; distance priors are divided by `scale`.
    pub fn normalized(&self, center: &Vec3, scale: f64) -> CameraView {
        let c = (self.center() - center) / scale;
        let mut out = self.clone();
        out.translation = -(self.rotation * c);
        if let Some(d) = &self.distance_prior {
            out.distance_prior = Some(d.map(|&v| v / scale));
        }
        out
    }
}

fn shape_error(id: &str, what: &str) -> Error {
    Error::Load {
        view: id.to_string(),
        reason: format!("{what} resolution does not match the image"),
    }
}

/// All views of a scene expressed in optimization coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub views: Vec<CameraView>,
    /// World-frame scene center.
    pub t_opt: Vec3,
    /// World units per optimization unit.
    pub s_scale: f64,
    pub cube_half_extent: f64,
}

impl SceneBundle {
    /// Builds a bundle from world-frame views and an already computed transform.
    pub fn from_world(views: Vec<CameraView>, t_opt: Vec3, s_scale: f64) -> Result<Self> {
        if !(s_scale > 0.0) {
            return Err(Error::Validation(format!("scene scale must be positive, got {s_scale}")));
        }
        let views = views.iter().map(|v| v.normalized(&t_opt, s_scale)).collect();
        Ok(Self {
            views,
            t_opt,
            s_scale,
            cube_half_extent: 1.0,
        })
    }

    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        p * self.s_scale + self.t_opt
    }

    pub fn to_optimization(&self, p: &Vec3) -> Vec3 {
        (p - self.t_opt) / self.s_scale
    }

    pub fn view(&self, id: &str) -> Option<&CameraView> {
        self.views.iter().find(|v| v.id == id)
    }

    /// Views transformed back into world coordinates.
    pub fn world_views(&self) -> Vec<CameraView> {
        let inv_center = -self.t_opt / self.s_scale;
        self.views
            .iter()
            .map(|v| v.normalized(&inv_center, 1.0 / self.s_scale))
            .collect()
    }
}

/// Intrinsics for a pinhole camera with square pixels.
pub fn pinhole_intrinsics(focal: f64, cx: f64, cy: f64) -> Mat3 {
    Mat3::new(focal, 0.0, cx, 0.0, focal, cy, 0.0, 0.0, 1.0)
}

/// World-to-camera rotation and translation for a camera at `eye` looking
/// at `target`, with `up` roughly opposite the image `y` axis.
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> (Mat3, Vec3) {
    let forward = (target - eye).normalize();
    let right = forward.cross(up).normalize();
    let down = forward.cross(&right);
    let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let translation = -(rotation * eye);
    (rotation, translation)
}
