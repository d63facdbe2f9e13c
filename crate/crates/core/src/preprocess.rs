//! Keyframe selection, distance-prior construction, scene normalization and
//! uncertainty-filtered normal priors.

use crate::error::{Error, Result};
use crate::scene_io::{CameraView, Mat3, PixelMap, SceneBundle, Vec3};

pub const KEYFRAME_GROUP: usize = 10;
pub const DEFAULT_ERODE_RADIUS: usize = 3;

fn luma(c: &Vec3) -> f64 {
    0.299 * c.x + 0.587 * c.y + 0.114 * c.z
}

/// Variance of the 3x3 Laplacian response over the interior pixels of the
/// grayscale image. Higher means sharper.
pub fn blur_score(image: &PixelMap<Vec3>) -> Result<f64> {
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return Err(Error::Argument(format!("blur score needs at least 3x3 pixels, got {w}x{h}")));
    }
    let gray = image.map(luma);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for row in 1..h - 1 {
        for col in 1..w - 1 {
            let r = 4.0 * gray.get(col, row)
                - gray.get(col - 1, row)
                - gray.get(col + 1, row)
                - gray.get(col, row - 1)
                - gray.get(col, row + 1);
            sum += r;
            sum_sq += r * r;
        }
    }
    let n = ((w - 2) * (h - 2)) as f64;
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

/// Keeps the sharpest index of every consecutive group of ten scores.
/// Ties resolve to the lowest index.
pub fn select_by_scores(scores: &[f64]) -> Vec<usize> {
    scores
        .chunks(KEYFRAME_GROUP)
        .enumerate()
        .map(|(g, chunk)| {
            let mut best = 0;
            for (i, &s) in chunk.iter().enumerate() {
                if s > chunk[best] {
                    best = i;
                }
            }
            g * KEYFRAME_GROUP + best
        })
        .collect()
}

pub fn select_keyframes(images: &[&PixelMap<Vec3>]) -> Result<Vec<usize>> {
    let scores = images.iter().map(|img| blur_score(img)).collect::<Result<Vec<_>>>()?;
    Ok(select_by_scores(&scores))
}

/// Zeroes every defined pixel whose Chebyshev neighborhood of `radius`
/// contains an undefined pixel or reaches past the image border.
pub fn erode_undefined(map: &PixelMap<f64>, radius: usize) -> PixelMap<f64> {
    let (w, h) = (map.width(), map.height());
    let r = radius as isize;
    // Horizontal pass: is there a hole within `radius` columns?
    let horizontal = PixelMap::from_fn(w, h, |col, row| {
        (-r..=r).any(|d| {
            let c = col as isize + d;
            c < 0 || c >= w as isize || *map.get(c as usize, row) == 0.0
        })
    });
    PixelMap::from_fn(w, h, |col, row| {
        let value = *map.get(col, row);
        if value == 0.0 {
            return 0.0;
        }
        let near_hole = (-r..=r).any(|d| {
            let rr = row as isize + d;
            rr < 0 || rr >= h as isize || *horizontal.get(col, rr as usize)
        });
        if near_hole {
            0.0
        } else {
            value
        }
    })
}

/// Fused prior points of every view with a distance prior.
pub fn fused_prior_points(views: &[CameraView]) -> Vec<Vec3> {
    let mut points = Vec::new();
    for view in views {
        if let Some(d) = &view.distance_prior {
            for (col, row, &dist) in d.indexed() {
                if dist > 0.0 {
                    points.push(view.backproject_distance(col, row, dist));
                }
            }
        }
    }
    points
}

/// Center and scale of the axis-aligned box around `points`, chosen so that
/// every point lands in `[-1, 1]^3` after `(x - t) / s`.
pub fn normalization_from_points(points: &[Vec3]) -> Result<(Vec3, f64)> {
    let first = points
        .first()
        .ok_or_else(|| Error::Preprocess("no defined depth values to normalize the scene".into()))?;
    let (mut lo, mut hi) = (*first, *first);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let center = (lo + hi) / 2.0;
    let half_longest = (hi - lo).max() / 2.0;
    let s = if half_longest > 0.0 { half_longest } else { 1.0 };
    Ok((center, s))
}

/// Normalization `(t_opt, s)` from the bounding box of all fused priors.
pub fn compute_normalization(views: &[CameraView]) -> Result<(Vec3, f64)> {
    normalization_from_points(&fused_prior_points(views))
}

/// Euclidean camera-to-point distance `|K^-1 d p~| / s` for every defined
/// z-depth pixel (pixel centers at half-integers), 0 elsewhere.
pub fn distance_prior(view: &CameraView, depth: &PixelMap<f64>, s_scale: f64) -> PixelMap<f64> {
    let k_inv = view
        .intrinsics
        .try_inverse()
        .expect("intrinsics validated as invertible");
    PixelMap::from_fn(depth.width(), depth.height(), |col, row| {
        let d = *depth.get(col, row);
        if d > 0.0 {
            (k_inv * Vec3::new(col as f64 + 0.5, row as f64 + 0.5, 1.0) * d).norm() / s_scale
        } else {
            0.0
        }
    })
}

/// Keeps raw normals whose uncertainty does not exceed the image mean.
pub fn filter_normals(raw: &PixelMap<Vec3>, uncertainty: &PixelMap<f64>) -> Result<PixelMap<Vec3>> {
    if !raw.same_shape(uncertainty) || raw.is_empty() {
        return Err(Error::Argument("normal and uncertainty maps differ in resolution".into()));
    }
    let mean = uncertainty.as_slice().iter().sum::<f64>() / uncertainty.len() as f64;
    let data = raw
        .as_slice()
        .iter()
        .zip(uncertainty.as_slice())
        .map(|(n, &u)| if u <= mean { *n } else { Vec3::zeros() })
        .collect();
    Ok(PixelMap::from_vec(raw.width(), raw.height(), data))
}

/// Maps camera-frame normals to the world frame through `R^T`.
pub fn normals_camera_to_world(normals: &PixelMap<Vec3>, rotation: &Mat3) -> PixelMap<Vec3> {
    let rt = rotation.transpose();
    normals.map(|n| rt * n)
}

#[derive(Debug, Clone, Copy)]
pub struct PreprocessOptions {
    pub select_keyframes: bool,
    /// Erosion radius applied to distance priors; `None` leaves them as given.
    pub erode_radius: Option<usize>,
    /// Filter normal priors with their uncertainty maps when both are present.
    pub filter_normals: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            select_keyframes: false,
            erode_radius: None,
            filter_normals: true,
        }
    }
}

/// Runs the preprocessing chain on world-frame views and returns the
/// normalized bundle.
pub fn preprocess_views(mut views: Vec<CameraView>, options: PreprocessOptions) -> Result<SceneBundle> {
    if views.is_empty() {
        return Err(Error::Preprocess("no views".into()));
    }
    if options.select_keyframes {
        let images: Vec<_> = views.iter().map(|v| &v.image).collect();
        let keep = select_keyframes(&images)?;
        views = keep.into_iter().map(|i| views[i].clone()).collect();
    }
    for view in &mut views {
        if let (Some(radius), Some(d)) = (options.erode_radius, &view.distance_prior) {
            view.distance_prior = Some(erode_undefined(d, radius));
        }
        if options.filter_normals {
            if let (Some(n), Some(u)) = (&view.normal_prior, &view.uncertainty) {
                view.normal_prior = Some(filter_normals(n, u)?);
            }
        }
    }
    let (t_opt, s) = compute_normalization(&views)?;
    SceneBundle::from_world(views, t_opt, s)
}
