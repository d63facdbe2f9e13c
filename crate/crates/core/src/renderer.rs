//! Volume rendering of rays through a signed distance field.
//!
//! Opacity comes from consecutive pairs of sdf values passed through a
//! logistic CDF. Color, depth and normal of a section are evaluated at the
//! section midpoint and composited with the usual front-to-back weights.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Real, SceneModel};
use crate::scene_io::{CameraView, PixelMap, Vec3};

/// Points sampled along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySample {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_values: Vec<f64>,
}

impl RaySample {
    pub fn points(&self) -> Vec<Vec3> {
        self.t_values.iter().map(|t| self.origin + self.direction * *t).collect()
    }

    /// Section midpoints `o + (t_i + t_{i+1}) / 2 v`.
    pub fn midpoints(&self) -> Vec<Vec3> {
        midpoint_ts(&self.t_values)
            .into_iter()
            .map(|t| self.origin + self.direction * t)
            .collect()
    }
}

pub fn midpoint_ts(t: &[f64]) -> Vec<f64> {
    t.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: Vec3,
    pub depth: f64,
    pub normal: Vec3,
    /// Compositing weights `M_i alpha_i`, one per section.
    pub weights: Vec<f64>,
    pub weight_sum: f64,
}

/// Slab-test entry and exit distances of a ray and the cube
/// `[-half_extent, half_extent]^3`, with the entry clamped to `1e-3`.
pub fn ray_cube_span(o: &Vec3, v: &Vec3, half_extent: f64) -> Result<(f64, f64)> {
    let mut near = f64::NEG_INFINITY;
    let mut far = f64::INFINITY;
    for k in 0..3 {
        if v[k].abs() < 1e-15 {
            if o[k].abs() > half_extent {
                return Err(Error::Render(format!("ray from {o:?} parallel to and outside slab {k}")));
            }
            continue;
        }
        let a = (-half_extent - o[k]) / v[k];
        let b = (half_extent - o[k]) / v[k];
        near = near.max(a.min(b));
        far = far.min(a.max(b));
    }
    let near = near.max(1e-3);
    if far <= near {
        return Err(Error::Render(format!("ray from {o:?} along {v:?} misses the cube")));
    }
    Ok((near, far))
}

/// Stratified samples, one per equal sub-interval. Without an rng every
/// sample sits at its interval midpoint.
pub fn sample_coarse<R: Rng + ?Sized>(span: (f64, f64), n: usize, rng: Option<&mut R>) -> Vec<f64> {
    let step = (span.1 - span.0) / n as f64;
    match rng {
        Some(rng) => (0..n)
            .map(|i| span.0 + (i as f64 + rng.random::<f64>()) * step)
            .collect(),
        None => (0..n).map(|i| span.0 + (i as f64 + 0.5) * step).collect(),
    }
}

/// Numerically stable `log(sigmoid(u))`.
fn log_sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Discrete opacity of each consecutive pair:
/// `max((Phi(s f_i) - Phi(s f_{i+1})) / Phi(s f_i), 0)`.
pub fn alphas(sdf: &[f64], s: f64) -> Vec<f64> {
    sdf.windows(2)
        .map(|w| (1.0 - (log_sigmoid(s * w[1]) - log_sigmoid(s * w[0])).exp()).max(0.0))
        .collect()
}

/// Opacities with their partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGrad {
    pub alpha: Vec<f64>,
    /// `d alpha_i / d f_i`
    pub d_left: Vec<f64>,
    /// `d alpha_i / d f_{i+1}`
    pub d_right: Vec<f64>,
    /// `d alpha_i / d s`
    pub d_s: Vec<f64>,
}

pub fn alphas_with_grad(sdf: &[f64], s: f64) -> AlphaGrad {
    let m = sdf.len().saturating_sub(1);
    let mut out = AlphaGrad {
        alpha: Vec::with_capacity(m),
        d_left: Vec::with_capacity(m),
        d_right: Vec::with_capacity(m),
        d_s: Vec::with_capacity(m),
    };
    for w in sdf.windows(2) {
        let (u0, u1) = (s * w[0], s * w[1]);
        let ratio = (log_sigmoid(u1) - log_sigmoid(u0)).exp();
        let alpha = 1.0 - ratio;
        if alpha <= 0.0 {
            out.alpha.push(0.0);
            out.d_left.push(0.0);
            out.d_right.push(0.0);
            out.d_s.push(0.0);
            continue;
        }
        let a0 = ratio * sigmoid(-u0);
        let a1 = -ratio * sigmoid(-u1);
        out.alpha.push(alpha);
        out.d_left.push(s * a0);
        out.d_right.push(s * a1);
        out.d_s.push(w[0] * a0 + w[1] * a1);
    }
    out
}

/// Front-to-back weights `M_i alpha_i` with `M_i = prod_{j<i} (1 - alpha_j)`.
pub fn composite_weights(alpha: &[f64]) -> Vec<f64> {
    let mut m = 1.0;
    alpha
        .iter()
        .map(|a| {
            let w = m * a;
            m *= 1.0 - a;
            w
        })
        .collect()
}

/// Gradient of `sum_i w_i e_i` with respect to every alpha, where `e_i` is
/// the upstream gradient dotted with the quantity composited at section `i`.
pub fn alpha_adjoint(alpha: &[f64], e: &[f64]) -> Vec<f64> {
    let n = alpha.len();
    let mut trans = Vec::with_capacity(n);
    let mut m = 1.0;
    for a in alpha {
        trans.push(m);
        m *= 1.0 - a;
    }
    let mut out = vec![0.0; n];
    let mut rest = 0.0;
    for k in (0..n).rev() {
        out[k] = trans[k] * (e[k] - rest);
        rest = e[k] * alpha[k] + (1.0 - alpha[k]) * rest;
    }
    out
}

/// Anything that can be volume rendered.
pub trait RenderField: Sync {
    fn sharpness(&self) -> f64;
    fn sdf(&self, points: &[Vec3]) -> Vec<f64>;
    /// Spatial gradients and colors at `points` seen along `dir`.
    fn shade(&self, points: &[Vec3], dir: &Vec3) -> (Vec<Vec3>, Vec<Vec3>);
}

/// Closed-form signed distance with an exact gradient.
pub trait SignedDistance: Sync {
    fn distance(&self, x: &Vec3) -> f64;

    fn gradient(&self, x: &Vec3) -> Vec3 {
        let h = 1e-6;
        let mut g = Vec3::zeros();
        for k in 0..3 {
            let mut a = *x;
            let mut b = *x;
            a[k] += h;
            b[k] -= h;
            g[k] = (self.distance(&a) - self.distance(&b)) / (2.0 * h);
        }
        g
    }

    fn albedo(&self, _x: &Vec3) -> Vec3 {
        Vec3::repeat(0.5)
    }
}

/// Renders a [`SignedDistance`] with a fixed sharpness and its albedo as color.
pub struct AnalyticField<'a, S: ?Sized> {
    pub shape: &'a S,
    pub sharpness: f64,
}

impl<S: SignedDistance + ?Sized> RenderField for AnalyticField<'_, S> {
    fn sharpness(&self) -> f64 {
        self.sharpness
    }

    fn sdf(&self, points: &[Vec3]) -> Vec<f64> {
        points.iter().map(|p| self.shape.distance(p)).collect()
    }

    fn shade(&self, points: &[Vec3], _dir: &Vec3) -> (Vec<Vec3>, Vec<Vec3>) {
        points
            .iter()
            .map(|p| (self.shape.gradient(p), self.shape.albedo(p)))
            .unzip()
    }
}

impl<T: Real> RenderField for SceneModel<T> {
    fn sharpness(&self) -> f64 {
        self.geometry.sharpness()
    }

    fn sdf(&self, points: &[Vec3]) -> Vec<f64> {
        self.geometry.sdf_values(points)
    }

    fn shade(&self, points: &[Vec3], dir: &Vec3) -> (Vec<Vec3>, Vec<Vec3>) {
        let geo = self.geometry.forward(points, true);
        let grads = geo.gradient.clone().expect("tangent evaluation");
        let dirs = vec![*dir; points.len()];
        let colors = self.radiance.forward(points, &dirs, &grads, &geo.features).colors;
        (grads, colors)
    }
}

/// Increasing sharpness values used while importance sampling.
pub const FINE_SHARPNESS_LADDER: [f64; 4] = [32.0, 64.0, 128.0, 256.0];

/// Deterministic inverse-CDF draw of `n` samples from the piecewise-constant
/// density with mass `weights[i]` over `[t[i], t[i+1]]`.
fn inverse_cdf(t: &[f64], weights: &[f64], n: usize) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let uniform: Vec<f64>;
    let w = if total > 1e-8 && total.is_finite() {
        weights
    } else {
        uniform = t.windows(2).map(|s| s[1] - s[0]).collect();
        &uniform
    };
    let total: f64 = w.iter().sum();
    let mut cdf = Vec::with_capacity(w.len() + 1);
    let mut acc = 0.0;
    cdf.push(0.0);
    for x in w {
        acc += x / total;
        cdf.push(acc);
    }
    let mut out = Vec::with_capacity(n);
    let mut bin = 0;
    for j in 0..n {
        let u = (j as f64 + 0.5) / n as f64;
        while bin + 1 < w.len() && cdf[bin + 1] < u {
            bin += 1;
        }
        let span = cdf[bin + 1] - cdf[bin];
        let frac = if span > 0.0 { ((u - cdf[bin]) / span).clamp(0.0, 1.0) } else { 0.5 };
        out.push(t[bin] + frac * (t[bin + 1] - t[bin]));
    }
    out
}

/// Importance sampling: each of the ladder's sharpness values adds its share
/// of `n_fine` samples drawn from the alpha-compositing weights of the
/// current sample set. Returns the merged, sorted, deduplicated list.
pub fn sample_fine<F: RenderField + ?Sized>(
    field: &F,
    o: &Vec3,
    v: &Vec3,
    t_coarse: &[f64],
    n_fine: usize,
    ladder: &[f64],
) -> Vec<f64> {
    sample_fine_batch(field, &[(*o, *v)], vec![t_coarse.to_vec()], n_fine, ladder)
        .pop()
        .expect("one ray")
}

/// [`sample_fine`] for many rays, with one field query per ladder step.
pub fn sample_fine_batch<F: RenderField + ?Sized>(
    field: &F,
    rays: &[(Vec3, Vec3)],
    t_coarse: Vec<Vec<f64>>,
    n_fine: usize,
    ladder: &[f64],
) -> Vec<Vec<f64>> {
    assert_eq!(rays.len(), t_coarse.len(), "one sample list per ray");
    let pts: Vec<Vec3> = rays
        .iter()
        .zip(&t_coarse)
        .flat_map(|((o, v), t)| t.iter().map(move |ti| o + v * *ti))
        .collect();
    let flat = field.sdf(&pts);
    let mut at = 0;
    let mut state: Vec<(Vec<f64>, Vec<f64>)> = t_coarse
        .into_iter()
        .map(|t| {
            let f = flat[at..at + t.len()].to_vec();
            at += t.len();
            (t, f)
        })
        .collect();
    if !ladder.is_empty() && n_fine > 0 {
        let iters = ladder.len();
        for (k, s) in ladder.iter().enumerate() {
            let count = n_fine / iters + usize::from(k < n_fine % iters);
            if count == 0 {
                continue;
            }
            let new_t: Vec<Vec<f64>> = state
                .iter()
                .map(|(t, f)| {
                    if t.len() < 2 {
                        Vec::new()
                    } else {
                        inverse_cdf(t, &composite_weights(&alphas(f, *s)), count)
                    }
                })
                .collect();
            let new_pts: Vec<Vec3> = rays
                .iter()
                .zip(&new_t)
                .flat_map(|((o, v), t)| t.iter().map(move |ti| o + v * *ti))
                .collect();
            let new_f = field.sdf(&new_pts);
            let mut at = 0;
            for ((t, f), nt) in state.iter_mut().zip(new_t) {
                let mut merged: Vec<(f64, f64)> = t.iter().copied().zip(f.iter().copied()).collect();
                merged.extend(nt.iter().copied().zip(new_f[at..at + nt.len()].iter().copied()));
                at += nt.len();
                merged.sort_by(|a, b| a.0.total_cmp(&b.0));
                *t = merged.iter().map(|p| p.0).collect();
                *f = merged.iter().map(|p| p.1).collect();
            }
        }
    }
    state.into_iter().map(|(t, _)| dedup_sorted(t)).collect()
}

fn dedup_sorted(mut t: Vec<f64>) -> Vec<f64> {
    t.sort_by(f64::total_cmp);
    t.dedup_by(|b, a| *b - *a <= 1e-9);
    t
}

/// Renders one ray at the given sample distances.
pub fn render_ray<F: RenderField + ?Sized>(field: &F, o: &Vec3, v: &Vec3, t_values: &[f64]) -> RenderOutput {
    let pts: Vec<Vec3> = t_values.iter().map(|t| o + v * *t).collect();
    let sdf = field.sdf(&pts);
    let alpha = alphas(&sdf, field.sharpness());
    let weights = composite_weights(&alpha);
    let mids = midpoint_ts(t_values);
    let mid_pts: Vec<Vec3> = mids.iter().map(|t| o + v * *t).collect();
    let (grads, colors) = field.shade(&mid_pts, v);
    let mut out = RenderOutput {
        color: Vec3::zeros(),
        depth: 0.0,
        normal: Vec3::zeros(),
        weight_sum: weights.iter().sum(),
        weights,
    };
    for (i, w) in out.weights.iter().enumerate() {
        out.color += colors[i] * *w;
        out.depth += mids[i] * *w;
        out.normal += grads[i] * *w;
    }
    out
}

/// Sample counts used when rendering without gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub cube_half_extent: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            n_coarse: 64,
            n_fine: 64,
            cube_half_extent: 1.0,
        }
    }
}

/// Samples and renders the ray from `o` along unit `v`.
pub fn render_direction<F: RenderField + ?Sized>(
    field: &F,
    o: &Vec3,
    v: &Vec3,
    opts: &RenderOptions,
) -> Result<RenderOutput> {
    let span = ray_cube_span(o, v, opts.cube_half_extent)?;
    let coarse = sample_coarse::<rand_chacha::ChaCha8Rng>(span, opts.n_coarse, None);
    let t = sample_fine(field, o, v, &coarse, opts.n_fine, &FINE_SHARPNESS_LADDER);
    Ok(render_ray(field, o, v, &t))
}

/// Per-pixel renderings of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub color: PixelMap<Vec3>,
    /// Distance along the pixel ray, optimization units.
    pub depth: PixelMap<f64>,
    /// Composited sdf gradient; not normalized.
    pub normal: PixelMap<Vec3>,
    pub weight_sum: PixelMap<f64>,
}

/// Renders every pixel center of `view` (in the field's frame). Pixels whose
/// ray misses the cube stay zero.
pub fn render_view<F: RenderField + ?Sized>(field: &F, view: &CameraView, opts: &RenderOptions) -> RenderedView {
    let (w, h) = (view.width(), view.height());
    let o = view.center();
    let pixels: Vec<Option<RenderOutput>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (col, row) = (i % w, i / w);
            let v = view.direction_through(col as f64 + 0.5, row as f64 + 0.5);
            match render_direction(field, &o, &v, opts) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::debug!("view {} pixel ({col},{row}) skipped: {e}", view.id);
                    None
                }
            }
        })
        .collect();
    let get = |i: usize| pixels[i].as_ref();
    RenderedView {
        color: PixelMap::from_fn(w, h, |c, r| get(r * w + c).map_or(Vec3::zeros(), |o| o.color)),
        depth: PixelMap::from_fn(w, h, |c, r| get(r * w + c).map_or(0.0, |o| o.depth)),
        normal: PixelMap::from_fn(w, h, |c, r| get(r * w + c).map_or(Vec3::zeros(), |o| o.normal)),
        weight_sum: PixelMap::from_fn(w, h, |c, r| get(r * w + c).map_or(0.0, |o| o.weight_sum)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Sphere {
        center: Vec3,
        radius: f64,
    }

    impl SignedDistance for Sphere {
        fn distance(&self, x: &Vec3) -> f64 {
            (x - self.center).norm() - self.radius
        }
        fn gradient(&self, x: &Vec3) -> Vec3 {
            (x - self.center).normalize()
        }
    }

    struct Constant(f64);

    impl SignedDistance for Constant {
        fn distance(&self, _x: &Vec3) -> f64 {
            self.0
        }
    }

    fn origin_sphere() -> Sphere {
        Sphere {
            center: Vec3::zeros(),
            radius: 0.5,
        }
    }

    #[test]
    fn span_examples() {
        let (a, b) = ray_cube_span(&Vec3::zeros(), &Vec3::z(), 1.0).unwrap();
        assert_eq!((a, b), (1e-3, 1.0));
        let (a, b) = ray_cube_span(&Vec3::new(0.0, 0.0, -2.0), &Vec3::z(), 1.0).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12);
        assert!(matches!(
            ray_cube_span(&Vec3::new(3.0, 0.0, 0.0), &Vec3::y(), 1.0),
            Err(Error::Render(_))
        ));
        assert!(ray_cube_span(&Vec3::new(0.0, 0.0, 2.0), &Vec3::z(), 1.0).is_err());
    }

    #[test]
    fn span_endpoints_on_faces() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let o = Vec3::new(rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9));
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() < 1e-3 {
                continue;
            }
            let v = v.normalize();
            let (_, far) = ray_cube_span(&o, &v, 1.0).unwrap();
            let p = o + v * far;
            // Brute force: on the boundary means max |coordinate| equals 1.
            assert!((p.amax() - 1.0).abs() < 1e-6, "{p:?}");
            let start = o - v * 10.0;
            let (near, _) = ray_cube_span(&start, &v, 1.0).unwrap();
            let q = start + v * near;
            assert!((q.amax() - 1.0).abs() < 1e-6, "{q:?}");
        }
    }

    #[test]
    fn coarse_midpoints_without_jitter() {
        let t = sample_coarse::<ChaCha8Rng>((0.0, 1.0), 4, None);
        assert_eq!(t, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn coarse_histogram_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bins = 20;
        let mut hist = vec![0usize; bins];
        let draws = 100_000;
        for _ in 0..draws / 8 {
            for t in sample_coarse((0.0, 1.0), 8, Some(&mut rng)) {
                hist[((t * bins as f64) as usize).min(bins - 1)] += 1;
            }
        }
        let expected = (draws / 8 * 8) as f64 / bins as f64;
        let sigma = (expected * (1.0 - 1.0 / bins as f64)).sqrt();
        for count in hist {
            assert!((count as f64 - expected).abs() < 3.0 * sigma, "{count} vs {expected}");
        }
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alphas(&[0.3, 0.3], 50.0), vec![0.0]);
        assert_eq!(alphas(&[-0.1, 0.2], 50.0), vec![0.0]);
        let s = |u: f64| 1.0 / (1.0 + (-u).exp());
        let expected = (s(5.0) - s(-5.0)) / s(5.0);
        let got = alphas(&[0.1, -0.1], 50.0)[0];
        assert!((got - expected).abs() < 1e-12);
        // The unnormalized difference Phi(5) - Phi(-5) would be 0.9866.
        assert!((got - 0.993262).abs() < 1e-6);
    }

    #[test]
    fn alpha_gradients_match_finite_differences() {
        let f = [0.3, 0.05, -0.02, -0.2, 0.1];
        let s = 17.0;
        let g = alphas_with_grad(&f, s);
        assert_eq!(g.alpha, alphas(&f, s));
        let h = 1e-7;
        for i in 0..f.len() - 1 {
            for (which, analytic) in [(i, g.d_left[i]), (i + 1, g.d_right[i])] {
                let mut a = f;
                a[which] += h;
                let mut b = f;
                b[which] -= h;
                let fd = (alphas(&a, s)[i] - alphas(&b, s)[i]) / (2.0 * h);
                assert!((fd - analytic).abs() < 1e-6, "{fd} vs {analytic}");
            }
            let fd = (alphas(&f, s + h)[i] - alphas(&f, s - h)[i]) / (2.0 * h);
            assert!((fd - g.d_s[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn alpha_adjoint_matches_finite_differences() {
        let alpha = [0.1, 0.5, 0.3, 0.9, 0.2];
        let e = [0.7, -1.0, 0.2, 2.0, 0.5];
        let loss = |a: &[f64]| composite_weights(a).iter().zip(&e).map(|(w, e)| w * e).sum::<f64>();
        let adj = alpha_adjoint(&alpha, &e);
        for k in 0..alpha.len() {
            let mut a = alpha;
            a[k] += 1e-7;
            let mut b = alpha;
            b[k] -= 1e-7;
            let fd = (loss(&a) - loss(&b)) / 2e-7;
            assert!((fd - adj[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_space_renders_nothing() {
        let shape = Constant(1.0);
        let field = AnalyticField { shape: &shape, sharpness: 50.0 };
        let t = sample_coarse::<ChaCha8Rng>((0.0, 2.0), 64, None);
        let out = render_ray(&field, &Vec3::new(0.0, 0.0, -1.0), &Vec3::z(), &t);
        assert!(out.weight_sum.abs() < 1e-12 && out.depth.abs() < 1e-12);
    }

    #[test]
    fn sphere_depth_and_normal() {
        let shape = origin_sphere();
        let field = AnalyticField { shape: &shape, sharpness: 500.0 };
        let o = Vec3::new(0.0, 0.0, -2.0);
        let t: Vec<f64> = (0..=2000).map(|i| 1.0 + i as f64 * 1e-3).collect();
        let out = render_ray(&field, &o, &Vec3::z(), &t);
        assert!((out.depth - 1.5).abs() < 0.01, "{}", out.depth);
        let n = out.normal.normalize();
        assert!(n.angle(&Vec3::new(0.0, 0.0, -1.0)).to_degrees() < 1.0);
    }

    #[test]
    fn fine_samples_concentrate_at_surface() {
        let shape = origin_sphere();
        let field = AnalyticField { shape: &shape, sharpness: 64.0 };
        let o = Vec3::new(0.1, -0.05, -0.95);
        let v = (Vec3::new(0.0, 0.0, 0.0) - o).normalize();
        let span = ray_cube_span(&o, &v, 1.0).unwrap();
        let coarse = sample_coarse::<ChaCha8Rng>(span, 64, None);
        let all = sample_fine(&field, &o, &v, &coarse, 64, &FINE_SHARPNESS_LADDER);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert!(all.len() <= 128);
        let hit = (o - shape.center).norm() - 0.5;
        let fine: Vec<f64> = all.iter().copied().filter(|t| !coarse.iter().any(|c| (c - t).abs() < 1e-12)).collect();
        let near = fine.iter().filter(|t| (**t - hit).abs() <= 0.05).count();
        assert!(near as f64 >= 0.6 * fine.len() as f64, "{near} of {}", fine.len());
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        let out = inverse_cdf(&t, &[0.0; 4], 4);
        assert_eq!(out, vec![0.5, 1.5, 2.5, 3.5]);
        let shape = Constant(2.0);
        let field = AnalyticField { shape: &shape, sharpness: 50.0 };
        let coarse = [0.0, 1.0, 2.0];
        let all = sample_fine(&field, &Vec3::zeros(), &Vec3::x(), &coarse, 4, &[32.0]);
        assert_eq!(all, vec![0.0, 0.25, 0.75, 1.0, 1.25, 1.75, 2.0]);
    }

    #[test]
    fn weight_sum_grows_with_sharpness() {
        let shape = origin_sphere();
        let o = Vec3::new(0.0, 0.0, -0.95);
        let t = sample_coarse::<ChaCha8Rng>((0.05, 0.9), 64, None);
        let mut last = 0.0;
        for s in [10.0, 50.0, 200.0] {
            let out = render_ray(&AnalyticField { shape: &shape, sharpness: s }, &o, &Vec3::z(), &t);
            assert!(out.weight_sum >= last - 1e-12);
            last = out.weight_sum;
        }
    }

    proptest! {
        #[test]
        fn weights_form_subprobability(
            center in prop::array::uniform3(-0.5f64..0.5),
            radius in 0.05f64..0.6,
            o in prop::array::uniform3(-0.9f64..0.9),
            d in prop::array::uniform3(-1.0f64..1.0),
            s in 1.0f64..400.0,
        ) {
            let v = Vec3::from(d);
            prop_assume!(v.norm() > 1e-2);
            let v = v.normalize();
            let o = Vec3::from(o);
            let shape = Sphere { center: Vec3::from(center), radius };
            let field = AnalyticField { shape: &shape, sharpness: s };
            let span = ray_cube_span(&o, &v, 1.0).unwrap();
            let coarse = sample_coarse::<ChaCha8Rng>(span, 32, None);
            let t = sample_fine(&field, &o, &v, &coarse, 32, &FINE_SHARPNESS_LADDER);
            for p in t.iter().map(|t| o + v * *t) {
                prop_assert!(p.amax() <= 1.2);
            }
            let out = render_ray(&field, &o, &v, &t);
            prop_assert!(out.weights.iter().all(|w| *w >= 0.0));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&out.weight_sum));
            if out.weight_sum > 0.5 {
                prop_assert!(out.depth >= span.0 && out.depth <= span.1);
            }
        }

        #[test]
        fn translation_equivariance(shift in prop::array::uniform3(-0.3f64..0.3)) {
            let shift = Vec3::from(shift);
            let a = origin_sphere();
            let b = Sphere { center: shift, radius: 0.5 };
            let o = Vec3::new(0.1, 0.2, -1.5);
            let t: Vec<f64> = (0..64).map(|i| 0.5 + i as f64 * 0.025).collect();
            let ra = render_ray(&AnalyticField { shape: &a, sharpness: 80.0 }, &o, &Vec3::z(), &t);
            let rb = render_ray(&AnalyticField { shape: &b, sharpness: 80.0 }, &(o + shift), &Vec3::z(), &t);
            prop_assert!((ra.depth - rb.depth).abs() < 1e-6);
            prop_assert!((ra.normal - rb.normal).norm() < 1e-6);
            prop_assert!((ra.color - rb.color).norm() < 1e-6);
            prop_assert!((ra.weight_sum - rb.weight_sum).abs() < 1e-6);
        }
    }
}
