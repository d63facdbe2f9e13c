use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Adam, TrainConfig};
use crate::error::{Error, Result};
use crate::fields::{GeometryEval, RadianceEval, Real, SceneModel};
use crate::losses::{
    color_loss_and_grad, distance_prior_loss_and_grad, eikonal_loss_and_grad, normal_prior_loss_and_grad,
    perturb_direction, residual_loss, total_loss, LossParts, LossWeights,
};
use crate::renderer::{
    alpha_adjoint, alphas_with_grad, composite_weights, midpoint_ts, ray_cube_span, sample_coarse,
    sample_fine_batch, AlphaGrad, FINE_SHARPNESS_LADDER,
};
use crate::scene_io::{SceneBundle, Vec3};

/// Deterministic generator for one training step.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Where a batch ray came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaySampleOrigin {
    pub view: usize,
    pub col: usize,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRay {
    pub pixel: RaySampleOrigin,
    pub origin: Vec3,
    pub dir: Vec3,
    pub color: Vec3,
    pub depth: Option<f64>,
    pub normal: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayBatch {
    pub view: usize,
    pub rays: Vec<BatchRay>,
}

/// Picks one view uniformly and `k` of its pixels uniformly (with
/// replacement); rays pass through pixel centers.
pub fn sample_batch<R: Rng + ?Sized>(scene: &SceneBundle, rng: &mut R, k: usize) -> RayBatch {
    let vi = rng.random_range(0..scene.views.len());
    let view = &scene.views[vi];
    let (w, h) = (view.width(), view.height());
    let rays = (0..k)
        .map(|_| {
            let col = rng.random_range(0..w);
            let row = rng.random_range(0..h);
            let (origin, dir) = view.pixel_center_ray(col, row);
            let depth = view
                .distance_prior
                .as_ref()
                .map(|d| *d.get(col, row))
                .filter(|d| *d > 0.0);
            let normal = view
                .normal_prior
                .as_ref()
                .map(|n| *n.get(col, row))
                .filter(|n| n.norm() > 0.0);
            BatchRay {
                pixel: RaySampleOrigin { view: vi, col, row },
                origin,
                dir,
                color: *view.image.get(col, row),
                depth,
                normal,
            }
        })
        .collect();
    RayBatch { view: vi, rays }
}

/// A ray with frozen sample distances and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRay {
    pub origin: Vec3,
    pub dir: Vec3,
    /// Perturbed direction for the second stage, sharing `t`.
    pub dir_pert: Option<Vec3>,
    pub t: Vec<f64>,
    pub color: Vec3,
    pub depth_prior: Option<f64>,
    pub normal_prior: Option<Vec3>,
}

/// Everything random about one step, fixed so the objective is a plain
/// function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub step: u64,
    pub rays: Vec<PlannedRay>,
    /// Constant first-stage depths to use in the residual instead of the
    /// live ones (only consulted when detaching).
    pub frozen_depth: Option<Vec<f64>>,
}

/// Samples the batch, the stratified and importance samples and the
/// perturbations of step `step`.
pub fn plan_step<T: Real>(model: &SceneModel<T>, scene: &SceneBundle, config: &TrainConfig, step: u64) -> StepPlan {
    let mut rng = step_rng(config.seed, step);
    let batch = sample_batch(scene, &mut rng, config.rays_per_batch);
    let view = &scene.views[batch.view];
    let second = config.terms.needs_second_stage();
    let mut kept = Vec::with_capacity(batch.rays.len());
    let mut coarse = Vec::with_capacity(batch.rays.len());
    for ray in batch.rays {
        match ray_cube_span(&ray.origin, &ray.dir, scene.cube_half_extent) {
            Ok(span) => {
                coarse.push(sample_coarse(span, config.n_coarse, Some(&mut rng)));
                let pert = second.then(|| {
                    perturb_direction(
                        view,
                        ray.pixel.col as f64 + 0.5,
                        ray.pixel.row as f64 + 0.5,
                        config.weights.perturb_w,
                        &mut rng,
                    )
                });
                kept.push((ray, pert));
            }
            Err(e) => log::debug!("step {step}: ray skipped: {e}"),
        }
    }
    let pairs: Vec<(Vec3, Vec3)> = kept.iter().map(|(r, _)| (r.origin, r.dir)).collect();
    let ts = sample_fine_batch(model, &pairs, coarse, config.n_fine, &FINE_SHARPNESS_LADDER);
    let rays = kept
        .into_iter()
        .zip(ts)
        .map(|((r, pert), t)| PlannedRay {
            origin: r.origin,
            dir: r.dir,
            dir_pert: pert,
            t,
            color: r.color,
            depth_prior: r.depth,
            normal_prior: r.normal,
        })
        .collect();
    StepPlan {
        step,
        rays,
        frozen_depth: None,
    }
}

/// Parameter gradients of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub geometry: Vec<T>,
    pub radiance: Vec<T>,
    pub log_sharpness: f64,
}

impl<T: Real> ModelGrads<T> {
    pub fn zeros(model: &SceneModel<T>) -> Self {
        Self {
            geometry: vec![T::zero(); model.geometry.num_params()],
            radiance: vec![T::zero(); model.radiance.num_params()],
            log_sharpness: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.log_sharpness.is_finite()
            && self.geometry.iter().all(|g| g.is_finite())
            && self.radiance.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    pub step: u64,
    pub parts: LossParts,
    pub total: f64,
    pub grads: Option<ModelGrads<T>>,
    /// First-stage rendered depth per planned ray.
    pub depth: Vec<f64>,
    /// Learning rate applied, when an update happened.
    pub learning_rate: Option<f64>,
}

struct Stage<T> {
    ends: GeometryEval<T>,
    mids: GeometryEval<T>,
    color: Option<RadianceEval<T>>,
    /// `(endpoint offset, midpoint offset, sample count)` per ray.
    ranges: Vec<(usize, usize, usize)>,
    alpha: Vec<AlphaGrad>,
    weights: Vec<Vec<f64>>,
    mid_t: Vec<Vec<f64>>,
    out_color: Vec<Vec3>,
    out_depth: Vec<f64>,
    out_normal: Vec<Vec3>,
}

fn forward_stage<T: Real>(model: &SceneModel<T>, rays: &[(Vec3, Vec3, &[f64])], with_color: bool) -> Stage<T> {
    let mut ranges = Vec::with_capacity(rays.len());
    let mut end_pts = Vec::new();
    let mut mid_pts = Vec::new();
    let mut mid_dirs = Vec::new();
    let mut mid_t = Vec::with_capacity(rays.len());
    for (o, v, t) in rays {
        ranges.push((end_pts.len(), mid_pts.len(), t.len()));
        end_pts.extend(t.iter().map(|ti| o + v * *ti));
        let mids = midpoint_ts(t);
        mid_pts.extend(mids.iter().map(|ti| o + v * *ti));
        mid_dirs.extend(std::iter::repeat_n(*v, mids.len()));
        mid_t.push(mids);
    }
    let ends = model.geometry.forward(&end_pts, false);
    let mids = model.geometry.forward(&mid_pts, true);
    let grads = mids.gradient.as_ref().expect("tangent evaluation");
    let color = with_color.then(|| model.radiance.forward(&mid_pts, &mid_dirs, grads, &mids.features));
    let s = model.geometry.sharpness();
    let mut stage = Stage {
        alpha: Vec::with_capacity(rays.len()),
        weights: Vec::with_capacity(rays.len()),
        out_color: Vec::with_capacity(rays.len()),
        out_depth: Vec::with_capacity(rays.len()),
        out_normal: Vec::with_capacity(rays.len()),
        ends,
        mids,
        color,
        ranges,
        mid_t,
    };
    for (r, &(e_off, m_off, n)) in stage.ranges.iter().enumerate() {
        let a = alphas_with_grad(&stage.ends.sdf[e_off..e_off + n], s);
        let w = composite_weights(&a.alpha);
        let g = stage.mids.gradient.as_ref().expect("tangent evaluation");
        let (mut c, mut d, mut nn) = (Vec3::zeros(), 0.0, Vec3::zeros());
        for (i, wi) in w.iter().enumerate() {
            if let Some(col) = &stage.color {
                c += col.colors[m_off + i] * *wi;
            }
            d += stage.mid_t[r][i] * *wi;
            nn += g[m_off + i] * *wi;
        }
        stage.out_color.push(c);
        stage.out_depth.push(d);
        stage.out_normal.push(nn);
        stage.alpha.push(a);
        stage.weights.push(w);
    }
    stage
}

/// Pulls upstream gradients on the composited outputs (and on the
/// midpoint sdf gradients directly) back to the parameters.
fn backward_stage<T: Real>(
    model: &SceneModel<T>,
    stage: &Stage<T>,
    d_color: Option<&[Vec3]>,
    d_depth: &[f64],
    d_normal: &[Vec3],
    d_mid_grad: Option<&[Vec3]>,
    grads: &mut ModelGrads<T>,
) {
    let n_mid = stage.mids.len();
    let mut d_f = vec![0.0; stage.ends.len()];
    let mut d_g: Vec<Vec3> = match d_mid_grad {
        Some(g) => g.to_vec(),
        None => vec![Vec3::zeros(); n_mid],
    };
    let mut d_c = vec![Vec3::zeros(); n_mid];
    let g = stage.mids.gradient.as_ref().expect("tangent evaluation");
    let s = model.geometry.sharpness();
    for (r, &(e_off, m_off, n)) in stage.ranges.iter().enumerate() {
        let sections = n.saturating_sub(1);
        let w = &stage.weights[r];
        let mut e = vec![0.0; sections];
        for i in 0..sections {
            let mut v = d_depth[r] * stage.mid_t[r][i] + d_normal[r].dot(&g[m_off + i]);
            if let (Some(dc), Some(col)) = (d_color, &stage.color) {
                v += dc[r].dot(&col.colors[m_off + i]);
                d_c[m_off + i] = dc[r] * w[i];
            }
            e[i] = v;
            d_g[m_off + i] += d_normal[r] * w[i];
        }
        let a = &stage.alpha[r];
        let d_alpha = alpha_adjoint(&a.alpha, &e);
        for i in 0..sections {
            d_f[e_off + i] += d_alpha[i] * a.d_left[i];
            d_f[e_off + i + 1] += d_alpha[i] * a.d_right[i];
            grads.log_sharpness += d_alpha[i] * a.d_s[i] * s;
        }
    }
    let mut d_feat = None;
    if let (Some(_), Some(col)) = (d_color, &stage.color) {
        let back = model.radiance.backward(col, &d_c, &mut grads.radiance);
        if !back.gradient.is_empty() {
            for (dg, b) in d_g.iter_mut().zip(&back.gradient) {
                *dg += b;
            }
            d_feat = Some(back.features);
        }
    }
    model.geometry.backward(&stage.ends, &d_f, None, None, &mut grads.geometry);
    let zeros = vec![0.0; n_mid];
    model
        .geometry
        .backward(&stage.mids, &zeros, Some(&d_g), d_feat.as_deref(), &mut grads.geometry);
}

/// Maps a gradient on `n / |n|` back to `n`.
fn normalize_backward(n: &Vec3, d_unit: &Vec3) -> Vec3 {
    let len = n.norm();
    if len == 0.0 {
        return Vec3::zeros();
    }
    let u = n / len;
    (d_unit - u * u.dot(d_unit)) / len
}

/// Evaluates the objective on a frozen plan, optionally with gradients.
pub fn evaluate_plan<T: Real>(
    model: &SceneModel<T>,
    plan: &StepPlan,
    config: &TrainConfig,
    want_grad: bool,
) -> Result<StepOutcome<T>> {
    let terms = config.terms;
    let k = plan.rays.len();
    let w = &config.weights;
    let rays: Vec<(Vec3, Vec3, &[f64])> = plan.rays.iter().map(|r| (r.origin, r.dir, r.t.as_slice())).collect();
    let s1 = forward_stage(model, &rays, true);

    let truth: Vec<Vec3> = plan.rays.iter().map(|r| r.color).collect();
    let (l_color, g_color) = if terms.color {
        color_loss_and_grad(&s1.out_color, &truth)
    } else {
        (0.0, Vec::new())
    };

    let used_normal: Vec<Vec3> = if config.normalize_rendered_normal {
        s1.out_normal
            .iter()
            .map(|n| if n.norm() > 0.0 { n.normalize() } else { *n })
            .collect()
    } else {
        s1.out_normal.clone()
    };
    let d_mask: Vec<bool> = plan.rays.iter().map(|r| r.depth_prior.is_some()).collect();
    let d_prior: Vec<f64> = plan.rays.iter().map(|r| r.depth_prior.unwrap_or(0.0)).collect();
    let n_mask: Vec<bool> = plan.rays.iter().map(|r| r.normal_prior.is_some()).collect();
    let n_prior: Vec<Vec3> = plan.rays.iter().map(|r| r.normal_prior.unwrap_or_else(Vec3::zeros)).collect();

    let mut parts = LossParts {
        color: l_color,
        ..LossParts::default()
    };
    let mut d_depth = vec![0.0; k];
    let mut d_normal_used = vec![Vec3::zeros(); k];
    if terms.prior_d {
        let (l, g) = distance_prior_loss_and_grad(&s1.out_depth, &d_prior, &d_mask, w.beta_dist);
        parts.prior_d = l;
        for (d, g) in d_depth.iter_mut().zip(g) {
            *d += g;
        }
    }
    if terms.prior_n {
        let (l, g) = normal_prior_loss_and_grad(&used_normal, &n_prior, &n_mask, w.beta_norm);
        parts.prior_n = l;
        for (d, g) in d_normal_used.iter_mut().zip(g) {
            *d += g * w.gamma;
        }
    }
    let mid_grads = s1.mids.gradient.as_ref().expect("tangent evaluation");
    let mut d_mid = None;
    if terms.eikonal {
        let (l, g) = eikonal_loss_and_grad(mid_grads);
        parts.eikonal = l;
        d_mid = Some(g.into_iter().map(|v| v * w.eikonal_weight).collect::<Vec<_>>());
    }

    let mut stage2 = None;
    if terms.needs_second_stage() {
        let pert: Vec<(Vec3, Vec3, &[f64])> = plan
            .rays
            .iter()
            .map(|r| {
                let d = r.dir_pert.ok_or_else(|| Error::Argument("plan lacks perturbed directions".into()))?;
                Ok((r.origin, d, r.t.as_slice()))
            })
            .collect::<Result<_>>()?;
        let s2 = forward_stage(model, &pert, false);
        let weights = LossWeights {
            delta: if terms.smooth_d { w.delta } else { 0.0 },
            epsilon: if terms.consist_n { w.epsilon } else { 0.0 },
            ..w.clone()
        };
        let first: &[f64] = match (&plan.frozen_depth, config.detach_first_stage) {
            (Some(f), true) => f,
            _ => &s1.out_depth,
        };
        let res = residual_loss(
            first,
            &s2.out_depth,
            &n_prior,
            &s2.out_normal,
            &n_mask,
            &weights,
            config.detach_first_stage,
        );
        if terms.smooth_d {
            parts.smooth_d = res.smooth;
        }
        if terms.consist_n {
            parts.consist_n = res.consist;
        }
        for (d, g) in d_depth.iter_mut().zip(&res.d_depth) {
            *d += g;
        }
        stage2 = Some((s2, res));
    }

    let total = total_loss(&parts, w);
    for (name, value) in parts.named().into_iter().chain([("total", total)]) {
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step: plan.step, term: name });
        }
    }

    let grads = want_grad.then(|| {
        let mut grads = ModelGrads::zeros(model);
        let d_normal: Vec<Vec3> = if config.normalize_rendered_normal {
            s1.out_normal
                .iter()
                .zip(&d_normal_used)
                .map(|(n, d)| normalize_backward(n, d))
                .collect()
        } else {
            d_normal_used
        };
        let g_color = terms.color.then_some(g_color.as_slice());
        backward_stage(model, &s1, g_color, &d_depth, &d_normal, d_mid.as_deref(), &mut grads);
        if let Some((s2, res)) = &stage2 {
            backward_stage(model, s2, None, &res.d_depth_pert, &res.d_normal_pert, None, &mut grads);
        }
        grads
    });
    Ok(StepOutcome {
        step: plan.step,
        parts,
        total,
        grads,
        depth: s1.out_depth,
        learning_rate: None,
    })
}

/// One optimization step: plan, evaluate, update.
pub fn train_step(
    model: &mut SceneModel<f32>,
    opt: &mut Adam,
    scene: &SceneBundle,
    config: &TrainConfig,
    step: u64,
) -> Result<StepOutcome<f32>> {
    let plan = plan_step(model, scene, config, step);
    if plan.rays.is_empty() {
        return Err(Error::Render(format!("step {step}: no batch ray intersects the scene cube")));
    }
    let mut out = evaluate_plan(model, &plan, config, true)?;
    let grads = out.grads.as_ref().expect("gradients requested");
    if !grads.is_finite() {
        return Err(Error::NonFiniteLoss { step, term: "gradient" });
    }
    let lr = config.schedule.rate(step, config.iterations);
    let SceneModel { geometry, radiance } = model;
    opt.update(
        step + 1,
        lr,
        &mut [
            (geometry.mlp.params_mut(), &grads.geometry),
            (radiance.mlp.params_mut(), &grads.radiance),
        ],
        &mut geometry.log_sharpness,
        grads.log_sharpness,
    );
    out.learning_rate = Some(lr);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{GeometryConfig, ModelConfig, RadianceConfig};
    use crate::scene_io::{look_at, pinhole_intrinsics, CameraView, PixelMap};

    fn mini_config() -> TrainConfig {
        TrainConfig {
            rays_per_batch: 8,
            n_coarse: 4,
            n_fine: 0,
            model: ModelConfig {
                geometry: GeometryConfig {
                    hidden_layers: 2,
                    hidden_width: 8,
                    feature_dim: 4,
                    encoding_freqs: 2,
                    skip_layer: None,
                    ..GeometryConfig::default()
                },
                radiance: RadianceConfig {
                    hidden_layers: 2,
                    hidden_width: 8,
                    encoding_freqs_dir: 1,
                    ..RadianceConfig::default()
                },
            },
            ..TrainConfig::default()
        }
    }

    fn scene(with_priors: bool) -> SceneBundle {
        let mut views = Vec::new();
        for (i, eye) in [Vec3::new(0.0, 0.0, -0.8), Vec3::new(0.7, 0.1, 0.2)].iter().enumerate() {
            let (r, t) = look_at(eye, &Vec3::zeros(), &Vec3::y());
            let mut v = CameraView::new(
                format!("v{i}"),
                pinhole_intrinsics(8.0, 4.0, 4.0),
                r,
                t,
                PixelMap::from_fn(8, 8, |c, r| Vec3::new(c as f64 / 8.0, r as f64 / 8.0, 0.5)),
            );
            if with_priors {
                v.distance_prior = Some(PixelMap::from_fn(8, 8, |c, _| if c % 3 == 0 { 0.0 } else { 0.4 }));
                v.normal_prior = Some(PixelMap::from_fn(8, 8, |_, r| {
                    if r % 4 == 0 {
                        Vec3::zeros()
                    } else {
                        Vec3::new(0.2, 0.3, -1.0).normalize()
                    }
                }));
            }
            views.push(v);
        }
        SceneBundle {
            views,
            t_opt: Vec3::zeros(),
            s_scale: 1.0,
            cube_half_extent: 1.0,
        }
    }

    #[test]
    fn batch_comes_from_one_view() {
        let s = scene(false);
        let mut rng = step_rng(1, 0);
        let b = sample_batch(&s, &mut rng, 512);
        assert_eq!(b.rays.len(), 512);
        assert!(b.rays.iter().all(|r| r.pixel.view == b.view));
        assert!(b.rays.iter().all(|r| r.depth.is_none() && r.normal.is_none()));
        let s = scene(true);
        let b = sample_batch(&s, &mut rng, 64);
        assert!(b.rays.iter().all(|r| r.depth.is_some() == (r.pixel.col % 3 != 0)));
        assert!(b.rays.iter().all(|r| r.normal.is_some() == (r.pixel.row % 4 != 0)));
    }

    #[test]
    fn pixel_coverage_is_uniform() {
        // Chi-square over a 4x4 grid of 2x2 pixel cells, 15 dof, 1% critical value 30.58.
        let s = scene(false);
        let mut rng = step_rng(3, 0);
        let mut hist = [0usize; 16];
        let draws = 200;
        for _ in 0..draws {
            for r in sample_batch(&s, &mut rng, 64).rays {
                hist[(r.pixel.row / 2) * 4 + r.pixel.col / 2] += 1;
            }
        }
        let expected = (draws * 64) as f64 / 16.0;
        let chi2: f64 = hist.iter().map(|h| (*h as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 30.58, "chi2 = {chi2}");
    }

    fn model(config: &TrainConfig) -> SceneModel<f64> {
        SceneModel::init(&config.model, 11)
    }

    #[test]
    fn disabled_terms_are_zero() {
        let s = scene(true);
        let config = mini_config().with_preset("base").unwrap();
        let m = model(&config);
        let plan = plan_step(&m, &s, &config, 0);
        let out = evaluate_plan(&m, &plan, &config, true).unwrap();
        assert_eq!((out.parts.prior_d, out.parts.prior_n, out.parts.smooth_d, out.parts.consist_n), (0.0, 0.0, 0.0, 0.0));
        assert!(plan.rays.iter().all(|r| r.dir_pert.is_none()));
        let full = mini_config();
        let plan = plan_step(&m, &s, &full, 0);
        let out = evaluate_plan(&m, &plan, &full, false).unwrap();
        assert!(out.parts.prior_d > 0.0 && out.parts.prior_n > 0.0);
    }

    /// Gradient of a term switched off through its flag is exactly zero:
    /// toggling only that flag leaves the gradient unchanged when its part
    /// is not included in the objective.
    #[test]
    fn toggling_a_term_changes_only_its_contribution() {
        let s = scene(true);
        let base = mini_config().with_preset("base_prior").unwrap();
        let m = model(&base);
        let plan = plan_step(&m, &s, &mini_config(), 0);
        let g_base = evaluate_plan(&m, &plan, &base, true).unwrap().grads.unwrap();
        let mut zero_weight = mini_config();
        zero_weight.weights.delta = 0.0;
        zero_weight.weights.epsilon = 0.0;
        let g_zero = evaluate_plan(&m, &plan, &zero_weight, true).unwrap().grads.unwrap();
        assert_eq!(g_base, g_zero);
    }

    #[test]
    fn equal_seeds_give_identical_steps() {
        let s = scene(true);
        let config = mini_config();
        let run = || {
            let mut m: SceneModel<f32> = SceneModel::init(&config.model, 2);
            let mut opt = Adam::new(config.adam.clone(), m.num_params());
            (0..5)
                .map(|i| train_step(&mut m, &mut opt, &s, &config, i).unwrap().total)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let n = Vec3::new(0.3, -0.5, 0.9);
        let d = Vec3::new(1.0, 0.2, -0.4);
        let g = normalize_backward(&n, &d);
        for k in 0..3 {
            let (mut a, mut b) = (n, n);
            a[k] += 1e-7;
            b[k] -= 1e-7;
            let fd = (a.normalize().dot(&d) - b.normalize().dot(&d)) / 2e-7;
            assert!((fd - g[k]).abs() < 1e-7);
        }
    }

    fn check_fd(config: &TrainConfig, m: &SceneModel<f64>, plan: &StepPlan) -> (usize, usize, f64) {
        let g = evaluate_plan(m, plan, config, true).unwrap().grads.unwrap();
        let h = 1e-5;
        let eval = |m: &SceneModel<f64>| evaluate_plan(m, plan, config, false).unwrap().total;
        let (mut checked, mut bad, mut worst) = (0, 0, 0.0f64);
        let mut test = |analytic: f64, fd: f64| {
            if analytic.abs() > 1e-6 {
                checked += 1;
                let rel = (fd - analytic).abs() / analytic.abs();
                worst = worst.max(rel);
                if rel >= 1e-3 {
                    bad += 1;
                }
            }
        };
        for i in 0..m.geometry.num_params() {
            let mut a = m.clone();
            a.geometry.mlp.params_mut()[i] += h;
            let mut b = m.clone();
            b.geometry.mlp.params_mut()[i] -= h;
            test(g.geometry[i], (eval(&a) - eval(&b)) / (2.0 * h));
        }
        for i in 0..m.radiance.num_params() {
            let mut a = m.clone();
            a.radiance.mlp.params_mut()[i] += h;
            let mut b = m.clone();
            b.radiance.mlp.params_mut()[i] -= h;
            test(g.radiance[i], (eval(&a) - eval(&b)) / (2.0 * h));
        }
        let mut a = m.clone();
        a.geometry.log_sharpness += h;
        let mut b = m.clone();
        b.geometry.log_sharpness -= h;
        test(g.log_sharpness, (eval(&a) - eval(&b)) / (2.0 * h));
        (checked, bad, worst)
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let s = scene(true);
        let mut config = mini_config();
        config.weights.gamma = 0.7;
        config.weights.delta = 0.5;
        config.weights.epsilon = 0.3;
        let m = model(&config);
        let mut plan = plan_step(&m, &s, &config, 0);
        plan.frozen_depth = Some(evaluate_plan(&m, &plan, &config, false).unwrap().depth);
        let (checked, bad, worst) = check_fd(&config, &m, &plan);
        assert!(checked > 100, "{checked}");
        assert_eq!(bad, 0, "worst relative error {worst}");
    }
}
