//! Analytic oracle scenes: closed-form geometry, sphere-traced ground truth
//! views and controllably corrupted priors.

mod shapes;

pub use shapes::{AnalyticScene, Primitive, Shape};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{marching_cubes, sdf_grid, write_ply, TriangleMesh};
use crate::preprocess::erode_undefined;
use crate::renderer::AnalyticField;
use crate::scene_io::{
    look_at, pinhole_intrinsics, save_scene, write_f32_map, CameraView, PixelMap, SceneFrame, SceneMeta, Vec3,
};

const MAX_STEPS: usize = 200;
const HIT_EPSILON: f64 = 1e-5;
const AMBIENT: f64 = 0.2;

/// Clean per-pixel observations of an analytic scene.
#[derive(Debug, Clone)]
pub struct GroundTruthView {
    pub color: PixelMap<Vec3>,
    /// Euclidean distance from the camera center, 0 on miss.
    pub depth: PixelMap<f64>,
    /// World-frame unit normals, zero on miss.
    pub normal: PixelMap<Vec3>,
    pub textured: PixelMap<bool>,
}

/// Sphere traces `o + t v` up to `t_max`; returns the hit distance.
pub fn sphere_trace(scene: &AnalyticScene, o: &Vec3, v: &Vec3, t_max: f64) -> Option<f64> {
    let mut t = 0.0;
    for _ in 0..MAX_STEPS {
        let d = scene.sdf(&(o + v * t));
        if d < HIT_EPSILON {
            return Some(t);
        }
        t += d;
        if t > t_max {
            return None;
        }
    }
    None
}

/// Renders color, depth and normals under a directional light with a
/// floor of `AMBIENT` on the shading term.
pub fn render_gt_view(scene: &AnalyticScene, view: &CameraView, light: &Vec3) -> GroundTruthView {
    let (w, h) = (view.width(), view.height());
    let light = light.normalize();
    let pixels: Vec<(Vec3, f64, Vec3, bool)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (o, v) = view.pixel_center_ray(i % w, i / w);
            match sphere_trace(scene, &o, &v, 100.0) {
                Some(t) => {
                    let x = o + v * t;
                    let n = scene.normal(&x);
                    let shade = n.dot(&light).max(AMBIENT);
                    let color = scene.albedo_at(&x) * shade;
                    (color, t, n, scene.is_textured(&x))
                }
                None => (Vec3::zeros(), 0.0, Vec3::zeros(), false),
            }
        })
        .collect();
    GroundTruthView {
        color: PixelMap::from_vec(w, h, pixels.iter().map(|p| p.0).collect()),
        depth: PixelMap::from_vec(w, h, pixels.iter().map(|p| p.1).collect()),
        normal: PixelMap::from_vec(w, h, pixels.iter().map(|p| p.2).collect()),
        textured: PixelMap::from_vec(w, h, pixels.iter().map(|p| p.3).collect()),
    }
}

impl AnalyticScene {
    fn albedo_at(&self, x: &Vec3) -> Vec3 {
        crate::renderer::SignedDistance::albedo(self, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    /// Probability of keeping a textured pixel's depth.
    pub keep_probability: f64,
    /// Standard deviation of additive depth noise, meters.
    pub depth_sigma: f64,
    /// Erosion applied to the textured-depth mask before dropout.
    pub erode_radius: usize,
    /// Also give depth to creases and to the near side of depth jumps,
    /// where stereo matching finds edges even on uniform surfaces.
    pub edge_depth: bool,
    /// Baseline angular noise scale, degrees.
    pub normal_sigma_deg: f64,
    /// Relative jitter between the true noise scale and the reported uncertainty.
    pub uncertainty_jitter: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            keep_probability: 0.7,
            depth_sigma: 0.005,
            erode_radius: 1,
            edge_depth: true,
            normal_sigma_deg: 6.0,
            uncertainty_jitter: 0.2,
        }
    }
}

/// Prior maps derived from a ground-truth view.
#[derive(Debug, Clone)]
pub struct Priors {
    pub distance: PixelMap<f64>,
    pub normal: PixelMap<Vec3>,
    pub uncertainty: PixelMap<f64>,
}

fn near_discontinuity(depth: &PixelMap<f64>, c: usize, r: usize) -> bool {
    let d = *depth.get(c, r);
    let (w, h) = (depth.width(), depth.height());
    let mut near = false;
    for (dc, dr) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
        let (cc, rr) = (c as i64 + dc, r as i64 + dr);
        if cc < 0 || rr < 0 || cc as usize >= w || rr as usize >= h {
            continue;
        }
        let e = *depth.get(cc as usize, rr as usize);
        near |= e <= 0.0 || (e - d).abs() > 0.05 * d;
    }
    near
}

/// Crease (normal turns by more than 30 degrees without a depth jump) or
/// the near side of a depth jump.
fn on_edge(gt: &GroundTruthView, c: usize, r: usize) -> bool {
    let d = *gt.depth.get(c, r);
    let n = *gt.normal.get(c, r);
    if d <= 0.0 {
        return false;
    }
    let (w, h) = (gt.depth.width(), gt.depth.height());
    let cos_crease = 30f64.to_radians().cos();
    [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(dc, dr)| {
        let (cc, rr) = (c as i64 + dc, r as i64 + dr);
        if cc < 0 || rr < 0 || cc as usize >= w || rr as usize >= h {
            return false;
        }
        let e = *gt.depth.get(cc as usize, rr as usize);
        if e <= 0.0 {
            return false;
        }
        if (e - d).abs() > 0.05 * d {
            return d < e;
        }
        n.dot(gt.normal.get(cc as usize, rr as usize)) < cos_crease
    })
}

/// Rotates `n` by `angle` radians about a random axis perpendicular to it.
fn tilt<R: Rng + ?Sized>(n: &Vec3, angle: f64, rng: &mut R) -> Vec3 {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = n.cross(&helper).normalize();
    let b = n.cross(&a);
    let phi = rng.random::<f64>() * std::f64::consts::TAU;
    let axis = a * phi.cos() + b * phi.sin();
    let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), angle);
    (rot * n).normalize()
}

/// Sparse noisy depth on textured pixels and geometric edges; dense normals whose angular
/// noise scale varies per pixel and doubles near depth edges, reported
/// (with jitter) as the uncertainty.
pub fn corrupt_priors(gt: &GroundTruthView, config: &CorruptionConfig, seed: u64) -> Priors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (gt.depth.width(), gt.depth.height());
    let textured = PixelMap::from_fn(w, h, |c, r| if *gt.textured.get(c, r) { *gt.depth.get(c, r) } else { 0.0 });
    let mut eroded = if config.erode_radius > 0 {
        erode_undefined(&textured, config.erode_radius)
    } else {
        textured
    };
    if config.edge_depth {
        for r in 0..h {
            for c in 0..w {
                if on_edge(gt, c, r) {
                    *eroded.get_mut(c, r) = *gt.depth.get(c, r);
                }
            }
        }
    }
    let noise = Normal::new(0.0, config.depth_sigma.max(0.0)).expect("finite sigma");
    let distance = PixelMap::from_vec(
        w,
        h,
        eroded
            .as_slice()
            .iter()
            .map(|&d| {
                let keep = rng.random::<f64>() < config.keep_probability;
                let e = noise.sample(&mut rng);
                if d > 0.0 && keep {
                    (d + e).max(1e-6)
                } else {
                    0.0
                }
            })
            .collect(),
    );
    let mut normal = PixelMap::filled(w, h, Vec3::zeros());
    let mut uncertainty = PixelMap::filled(w, h, 0.0);
    for r in 0..h {
        for c in 0..w {
            let u: f64 = rng.random();
            let jitter: f64 = StandardNormal.sample(&mut rng);
            let g = *gt.normal.get(c, r);
            if g.norm() == 0.0 {
                *uncertainty.get_mut(c, r) = 1.0;
                continue;
            }
            let edge = if near_discontinuity(&gt.depth, c, r) { 2.0 } else { 1.0 };
            let scale = config.normal_sigma_deg * (0.5 + 3.0 * u * u) * edge;
            let angle: f64 = StandardNormal.sample(&mut rng);
            *normal.get_mut(c, r) = tilt(&g, (angle * scale).abs().to_radians(), &mut rng);
            *uncertainty.get_mut(c, r) = (scale / 90.0 * (1.0 + config.uncertainty_jitter * jitter)).max(0.0);
        }
    }
    Priors {
        distance,
        normal,
        uncertainty,
    }
}

/// A generated scene: world-frame views with priors and their ground truth.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub scene: AnalyticScene,
    pub views: Vec<CameraView>,
    pub ground_truth: Vec<GroundTruthView>,
    /// Normalization recorded with the scene.
    pub t_opt: Vec3,
    pub s_scale: f64,
    pub light: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub preset: String,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, degrees.
    pub fov_deg: f64,
    pub seed: u64,
    pub corruption: CorruptionConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            preset: "room".into(),
            views: 24,
            width: 96,
            height: 72,
            fov_deg: 60.0,
            seed: 0,
            corruption: CorruptionConfig::default(),
        }
    }
}

/// World-frame center of the room preset; off the origin so that
/// normalization is exercised.
pub const ROOM_CENTER: [f64; 3] = [1.2, 1.0, -0.4];
const ROOM_HALF: f64 = 1.0;

/// 2 m room: texture-less walls and ceiling, a checkered floor, a
/// checkered sphere and a texture-less box.
pub fn room_scene() -> AnalyticScene {
    let c = Vec3::from(ROOM_CENTER);
    let floor = c.y - ROOM_HALF;
    AnalyticScene {
        primitives: vec![
            Primitive {
                shape: Shape::Room { center: c, half: Vec3::repeat(ROOM_HALF) },
                albedo: Vec3::new(0.78, 0.74, 0.68),
                checker: None,
            },
            Primitive {
                shape: Shape::Plane { normal: Vec3::y(), offset: floor },
                albedo: Vec3::new(0.65, 0.55, 0.42),
                checker: Some(0.25),
            },
            Primitive {
                shape: Shape::Sphere { center: c + Vec3::new(0.3, -0.7, 0.2), radius: 0.3 },
                albedo: Vec3::new(0.3, 0.6, 0.85),
                checker: Some(0.1),
            },
            Primitive {
                shape: Shape::Box { center: c + Vec3::new(-0.35, -0.8, -0.3), half: Vec3::repeat(0.2) },
                albedo: Vec3::new(0.85, 0.4, 0.3),
                checker: None,
            },
        ],
    }
}

/// Checkered sphere of radius 0.5 at the origin.
pub fn sphere_scene() -> AnalyticScene {
    AnalyticScene {
        primitives: vec![Primitive {
            shape: Shape::Sphere { center: Vec3::zeros(), radius: 0.5 },
            albedo: Vec3::new(0.8, 0.7, 0.5),
            checker: Some(0.15),
        }],
    }
}

fn view_from(id: String, eye: Vec3, target: Vec3, config: &SynthConfig) -> CameraView {
    let (w, h) = (config.width, config.height);
    let focal = 0.5 * w as f64 / (0.5 * config.fov_deg).to_radians().tan();
    let (r, t) = look_at(&eye, &target, &Vec3::y());
    CameraView::new(
        id,
        pinhole_intrinsics(focal, 0.5 * w as f64, 0.5 * h as f64),
        r,
        t,
        PixelMap::filled(w, h, Vec3::zeros()),
    )
}

/// Generates a preset scene (`room` or `sphere`).
pub fn generate(config: &SynthConfig) -> Result<SynthScene> {
    if config.views == 0 || config.width < 3 || config.height < 3 {
        return Err(Error::Argument("synthetic scene needs views and images of at least 3x3".into()));
    }
    if !(config.fov_deg > 0.0 && config.fov_deg < 170.0) {
        return Err(Error::Argument(format!("field of view {} out of range", config.fov_deg)));
    }
    let n = config.views;
    let ring = |i: usize| i as f64 / n as f64 * std::f64::consts::TAU;
    let (scene, t_opt, s_scale, cameras): (AnalyticScene, Vec3, f64, Vec<(Vec3, Vec3)>) = match config.preset.as_str() {
        "room" => {
            let c = Vec3::from(ROOM_CENTER);
            let cams = (0..n)
                .map(|i| {
                    let a = ring(i);
                    let eye = c + Vec3::new(0.75 * a.cos(), 0.15 + 0.1 * (3.0 * a).sin(), 0.75 * a.sin());
                    let target = c + Vec3::new(-0.35 * a.cos(), -0.45, -0.35 * a.sin());
                    (eye, target)
                })
                .collect();
            // Margin keeps the walls strictly inside the cube.
            (room_scene(), c, 1.1 * ROOM_HALF, cams)
        }
        "sphere" => {
            let cams = (0..n)
                .map(|i| {
                    let a = ring(i);
                    let eye = Vec3::new(2.2 * a.cos(), 0.8 * (2.0 * a).sin(), 2.2 * a.sin());
                    (eye, Vec3::zeros())
                })
                .collect();
            (sphere_scene(), Vec3::zeros(), 1.0, cams)
        }
        other => return Err(Error::Argument(format!("unknown synthetic preset `{other}` (room, sphere)"))),
    };
    let light = Vec3::new(0.4, 1.0, 0.3);
    let mut views = Vec::with_capacity(n);
    let mut ground_truth = Vec::with_capacity(n);
    for (i, (eye, target)) in cameras.into_iter().enumerate() {
        let mut view = view_from(format!("view_{i:03}"), eye, target, config);
        let gt = render_gt_view(&scene, &view, &light);
        let priors = corrupt_priors(&gt, &config.corruption, config.seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        view.image = gt.color.clone();
        view.distance_prior = Some(priors.distance);
        view.normal_prior = Some(priors.normal);
        view.uncertainty = Some(priors.uncertainty);
        views.push(view);
        ground_truth.push(gt);
    }
    Ok(SynthScene {
        scene,
        views,
        ground_truth,
        t_opt,
        s_scale,
        light,
    })
}

/// Marching-cubes mesh of the analytic surface inside the normalization
/// cube, in world coordinates.
pub fn ground_truth_mesh(synth: &SynthScene, resolution: usize) -> TriangleMesh {
    let local = NormalizedScene { synth };
    let grid = sdf_grid(&AnalyticField { shape: &local, sharpness: 1.0 }, resolution, 1.0);
    marching_cubes(&grid, 0.0).map_vertices(|p| p * synth.s_scale + synth.t_opt)
}

/// The analytic scene seen through the normalization (distances in
/// optimization units).
struct NormalizedScene<'a> {
    synth: &'a SynthScene,
}

impl crate::renderer::SignedDistance for NormalizedScene<'_> {
    fn distance(&self, x: &Vec3) -> f64 {
        self.synth.scene.sdf(&(x * self.synth.s_scale + self.synth.t_opt)) / self.synth.s_scale
    }
}

/// Writes the scene directory plus `gt/mesh.ply`, `gt/depth/<id>.f32` and
/// `gt/normal/<id>.f32`.
pub fn write_synth(dir: &Path, synth: &SynthScene, gt_resolution: usize) -> Result<()> {
    let meta = SceneMeta {
        height: 0,
        width: 0,
        views: vec![],
        frame: SceneFrame::World,
        t_opt: Some([synth.t_opt.x, synth.t_opt.y, synth.t_opt.z]),
        s_scale: Some(synth.s_scale),
    };
    save_scene(dir, &synth.views, &meta)?;
    let gt_dir = dir.join("gt");
    for sub in ["depth", "normal"] {
        let p = gt_dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (view, gt) in synth.views.iter().zip(&synth.ground_truth) {
        write_f32_map(
            &gt_dir.join("depth").join(format!("{}.f32", view.id)),
            gt.depth.as_slice().iter().map(|&d| d as f32),
        )?;
        write_f32_map(
            &gt_dir.join("normal").join(format!("{}.f32", view.id)),
            gt.normal.as_slice().iter().flat_map(|n| [n.x as f32, n.y as f32, n.z as f32]),
        )?;
    }
    write_ply(&ground_truth_mesh(synth, gt_resolution), &gt_dir.join("mesh.ply"), true)
}
