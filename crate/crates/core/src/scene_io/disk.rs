//! On-disk scene directory:
//!
//! ```text
//! scene.json                 height, width, view ids, frame, optional t_opt / s_scale
//! images/<id>.png            8-bit RGB
//! cams/<id>.txt              9 floats K, 9 floats R (row-major), 3 floats t
//! priors/dist/<id>.f32       H*W little-endian f32, 0 = undefined
//! priors/normal/<id>.f32     H*W*3 little-endian f32, world frame
//! priors/uncert/<id>.f32     H*W little-endian f32
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CameraView, Mat3, PixelMap, SceneBundle, Vec3};
use crate::error::{Error, Result};
use crate::preprocess::compute_normalization;

/// Coordinate frame the cameras and priors of a directory are stored in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SceneFrame {
    #[default]
    World,
    Optimization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub height: usize,
    pub width: usize,
    pub views: Vec<String>,
    #[serde(default)]
    pub frame: SceneFrame,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_opt: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Normalize world-frame scenes into the optimization cube.
    pub normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

fn load_err(view: &str, reason: impl Into<String>) -> Error {
    Error::Load {
        view: view.to_string(),
        reason: reason.into(),
    }
}

fn read_meta(dir: &Path) -> Result<SceneMeta> {
    let path = dir.join("scene.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads a raw little-endian f32 buffer of exactly `count` values.
pub fn read_f32_map(path: &Path, count: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != count * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} floats, found {} bytes",
            path.display(),
            count,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_f32_map(path: &Path, values: impl IntoIterator<Item = f32>) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_camera(path: &Path, id: &str) -> Result<(Mat3, Mat3, Vec3)> {
    let text = fs::read_to_string(path).map_err(|_| load_err(id, format!("missing camera file {}", path.display())))?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| load_err(id, format!("bad camera file: {e}")))?;
    if values.len() != 21 {
        return Err(load_err(id, format!("camera file has {} values, expected 21", values.len())));
    }
    let k = Mat3::from_row_slice(&values[0..9]);
    let r = Mat3::from_row_slice(&values[9..18]);
    let t = Vec3::new(values[18], values[19], values[20]);
    Ok((k, r, t))
}

fn read_image(path: &Path, id: &str, width: usize, height: usize) -> Result<PixelMap<Vec3>> {
    let img = image::open(path)
        .map_err(|e| load_err(id, format!("cannot read {}: {e}", path.display())))?
        .to_rgb8();
    if img.width() as usize != width || img.height() as usize != height {
        return Err(load_err(
            id,
            format!("image is {}x{}, scene declares {width}x{height}", img.width(), img.height()),
        ));
    }
    let data = img
        .pixels()
        .map(|p| Vec3::new(p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0))
        .collect();
    Ok(PixelMap::from_vec(width, height, data))
}

fn optional_map(path: PathBuf, id: &str, count: usize) -> Result<Option<Vec<f32>>> {
    if !path.exists() {
        return Ok(None);
    }
    read_f32_map(&path, count).map(Some).map_err(|e| load_err(id, e.to_string()))
}

fn read_view(dir: &Path, id: &str, width: usize, height: usize) -> Result<CameraView> {
    let (k, r, t) = read_camera(&dir.join("cams").join(format!("{id}.txt")), id)?;
    let image = read_image(&dir.join("images").join(format!("{id}.png")), id, width, height)?;
    let mut view = CameraView::new(id, k, r, t, image);
    let n = width * height;
    let f32_path = |kind: &str| dir.join("priors").join(kind).join(format!("{id}.f32"));
    if let Some(d) = optional_map(f32_path("dist"), id, n)? {
        view.distance_prior = Some(PixelMap::from_vec(width, height, d.into_iter().map(f64::from).collect()));
    }
    if let Some(raw) = optional_map(f32_path("normal"), id, n * 3)? {
        let normals = raw
            .chunks_exact(3)
            .map(|c| {
                let v = Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64);
                // Stored as f32; re-normalize so the unit-norm invariant holds in f64.
                if v.norm() > 0.0 {
                    v.normalize()
                } else {
                    v
                }
            })
            .collect();
        view.normal_prior = Some(PixelMap::from_vec(width, height, normals));
    }
    if let Some(u) = optional_map(f32_path("uncert"), id, n)? {
        view.uncertainty = Some(PixelMap::from_vec(width, height, u.into_iter().map(f64::from).collect()));
    }
    view.validate()?;
    Ok(view)
}

/// Loads a scene directory and returns it in optimization coordinates.
///
/// World-frame scenes are normalized with the `t_opt`/`s_scale` stored in
/// `scene.json` when present, otherwise with the bounding box of all
/// back-projected distance priors.
pub fn load_scene(dir: &Path, options: LoadOptions) -> Result<SceneBundle> {
    let meta = read_meta(dir)?;
    if meta.views.is_empty() {
        return Err(Error::Validation("scene.json lists no views".into()));
    }
    let views = meta
        .views
        .iter()
        .map(|id| read_view(dir, id, meta.width, meta.height))
        .collect::<Result<Vec<_>>>()?;

    match meta.frame {
        SceneFrame::Optimization => {
            let (t, s) = match (meta.t_opt, meta.s_scale) {
                (Some(t), Some(s)) => (Vec3::from(t), s),
                _ => {
                    return Err(Error::Validation(
                        "optimization-frame scene must record t_opt and s_scale".into(),
                    ))
                }
            };
            Ok(SceneBundle {
                views,
                t_opt: t,
                s_scale: s,
                cube_half_extent: 1.0,
            })
        }
        SceneFrame::World if !options.normalize => Ok(SceneBundle {
            views,
            t_opt: Vec3::zeros(),
            s_scale: 1.0,
            cube_half_extent: 1.0,
        }),
        SceneFrame::World => {
            let (t, s) = match (meta.t_opt, meta.s_scale) {
                (Some(t), Some(s)) => (Vec3::from(t), s),
                _ => compute_normalization(&views)?,
            };
            SceneBundle::from_world(views, t, s)
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes views in the directory layout above. `meta.views` is rewritten
/// from the given views.
pub fn save_scene(dir: &Path, views: &[CameraView], meta: &SceneMeta) -> Result<()> {
    let first = views
        .first()
        .ok_or_else(|| Error::Argument("cannot save a scene without views".into()))?;
    for sub in ["images", "cams", "priors/dist", "priors/normal", "priors/uncert"] {
        create_dir(&dir.join(sub))?;
    }
    let mut meta = meta.clone();
    meta.width = first.width();
    meta.height = first.height();
    meta.views = views.iter().map(|v| v.id.clone()).collect();

    for view in views {
        let id = &view.id;
        let mut rgb = image::RgbImage::new(view.width() as u32, view.height() as u32);
        for (col, row, c) in view.image.indexed() {
            let q = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
            rgb.put_pixel(col as u32, row as u32, image::Rgb([q(c.x), q(c.y), q(c.z)]));
        }
        let img_path = dir.join("images").join(format!("{id}.png"));
        rgb.save(&img_path)
            .map_err(|e| Error::Format(format!("{}: {e}", img_path.display())))?;

        let mut cam = String::new();
        let k = &view.intrinsics;
        let r = &view.rotation;
        for row in 0..3 {
            cam.push_str(&format!("{:.17e} {:.17e} {:.17e}\n", k[(row, 0)], k[(row, 1)], k[(row, 2)]));
        }
        for row in 0..3 {
            cam.push_str(&format!("{:.17e} {:.17e} {:.17e}\n", r[(row, 0)], r[(row, 1)], r[(row, 2)]));
        }
        let t = &view.translation;
        cam.push_str(&format!("{:.17e} {:.17e} {:.17e}\n", t.x, t.y, t.z));
        let cam_path = dir.join("cams").join(format!("{id}.txt"));
        fs::write(&cam_path, cam).map_err(|e| Error::io(&cam_path, e))?;

        let prior = |kind: &str| dir.join("priors").join(kind).join(format!("{id}.f32"));
        if let Some(d) = &view.distance_prior {
            write_f32_map(&prior("dist"), d.as_slice().iter().map(|&v| v as f32))?;
        }
        if let Some(n) = &view.normal_prior {
            write_f32_map(
                &prior("normal"),
                n.as_slice().iter().flat_map(|v| [v.x as f32, v.y as f32, v.z as f32]),
            )?;
        }
        if let Some(u) = &view.uncertainty {
            write_f32_map(&prior("uncert"), u.as_slice().iter().map(|&v| v as f32))?;
        }
    }
    let json = serde_json::to_string_pretty(&meta).expect("scene meta serializes");
    let path = dir.join("scene.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::pinhole_intrinsics;

    fn view(id: &str) -> CameraView {
        let mut v = CameraView::new(
            id,
            pinhole_intrinsics(10.0, 4.0, 3.0),
            Mat3::identity(),
            Vec3::new(0.0, 0.0, 1.0),
            PixelMap::from_fn(8, 6, |c, r| Vec3::new(c as f64 / 7.0, r as f64 / 5.0, 0.5)),
        );
        v.distance_prior = Some(PixelMap::from_fn(8, 6, |c, _| if c > 2 { 2.5 } else { 0.0 }));
        v
    }

    fn meta() -> SceneMeta {
        SceneMeta {
            height: 0,
            width: 0,
            views: vec![],
            frame: SceneFrame::World,
            t_opt: None,
            s_scale: None,
        }
    }

    #[test]
    fn missing_priors_stay_absent() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = view("a");
        a.distance_prior = Some(PixelMap::filled(8, 6, 2.0));
        let b = CameraView { distance_prior: None, ..view("b") };
        save_scene(dir.path(), &[a, b], &meta()).unwrap();
        let bundle = load_scene(dir.path(), LoadOptions::default()).unwrap();
        assert_eq!(bundle.views.len(), 2);
        assert!(bundle.views[0].distance_prior.is_some());
        assert!(bundle.views[1].distance_prior.is_none());
        assert!(bundle.views[1].normal_prior.is_none());
    }

    #[test]
    fn missing_camera_names_view() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(dir.path(), &[view("a"), view("b")], &meta()).unwrap();
        fs::remove_file(dir.path().join("cams/b.txt")).unwrap();
        match load_scene(dir.path(), LoadOptions::default()) {
            Err(Error::Load { view, .. }) => assert_eq!(view, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_prior_is_load_error() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(dir.path(), &[view("a")], &meta()).unwrap();
        fs::write(dir.path().join("priors/dist/a.f32"), [0u8; 12]).unwrap();
        assert!(matches!(
            load_scene(dir.path(), LoadOptions::default()),
            Err(Error::Load { .. })
        ));
    }

    #[test]
    fn doubled_rotation_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = view("a");
        v.rotation *= 2.0;
        save_scene(dir.path(), &[v], &meta()).unwrap();
        assert!(matches!(
            load_scene(dir.path(), LoadOptions::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn stored_transform_is_used() {
        let dir = tempfile::tempdir().unwrap();
        let m = SceneMeta {
            t_opt: Some([0.0, 0.0, 1.0]),
            s_scale: Some(2.0),
            ..meta()
        };
        save_scene(dir.path(), &[view("a")], &m).unwrap();
        let bundle = load_scene(dir.path(), LoadOptions::default()).unwrap();
        assert_eq!(bundle.s_scale, 2.0);
        let d = bundle.views[0].distance_prior.as_ref().unwrap();
        assert!((d.get(5, 0) - 1.25).abs() < 1e-6);
        assert!((bundle.views[0].center() - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }
}
