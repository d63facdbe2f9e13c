//! Optimization objectives and their gradients with respect to the rendered
//! quantities they consume.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_io::{CameraView, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Normal prior weight.
    pub gamma: f64,
    /// Perturbed-depth smoothness weight.
    pub delta: f64,
    /// Perturbed-normal consistency weight.
    pub epsilon: f64,
    pub eikonal_weight: f64,
    /// Perturbation amplitude in pixels.
    pub perturb_w: f64,
    pub beta_dist: f64,
    pub beta_norm: f64,
    pub beta_res: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 0.001,
            delta: 0.001,
            epsilon: 0.001,
            eikonal_weight: 0.1,
            perturb_w: 2.4,
            beta_dist: 0.1,
            beta_norm: 0.2,
            beta_res: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("epsilon", self.epsilon),
            ("eikonal_weight", self.eikonal_weight),
            ("perturb_w", self.perturb_w),
            ("beta_dist", self.beta_dist),
            ("beta_norm", self.beta_norm),
            ("beta_res", self.beta_res),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be nonnegative, got {v}")));
            }
        }
        for (name, v) in [("beta_dist", self.beta_dist), ("beta_norm", self.beta_norm), ("beta_res", self.beta_res)] {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Smooth L1 on the Euclidean norm of `diff`, with its gradient.
pub fn smooth_l1_diff(diff: &[f64], beta: f64) -> (f64, Vec<f64>) {
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    if norm <= beta {
        (0.5 * norm * norm / beta, diff.iter().map(|d| d / beta).collect())
    } else {
        (norm - 0.5 * beta, diff.iter().map(|d| d / norm).collect())
    }
}

/// `0.5 |a-b|^2 / beta` below `beta`, `|a-b| - 0.5 beta` above.
pub fn smooth_l1(a: &[f64], b: &[f64], beta: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!("smooth L1 on vectors of size {} and {}", a.len(), b.len())));
    }
    if beta <= 0.0 {
        return Err(Error::Argument(format!("smooth L1 beta must be positive, got {beta}")));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(smooth_l1_diff(&diff, beta).0)
}

fn smooth_l1_vec3(a: &Vec3, b: &Vec3, beta: f64) -> (f64, Vec3) {
    let d = a - b;
    let (v, g) = smooth_l1_diff(d.as_slice(), beta);
    (v, Vec3::new(g[0], g[1], g[2]))
}

/// Mean over rays of the summed per-channel absolute difference.
pub fn color_loss_and_grad(rendered: &[Vec3], truth: &[Vec3]) -> (f64, Vec<Vec3>) {
    let k = rendered.len().max(1) as f64;
    let mut total = 0.0;
    let grads = rendered
        .iter()
        .zip(truth)
        .map(|(r, t)| {
            let d = r - t;
            total += d.abs().sum();
            d.map(|x| if x > 0.0 { 1.0 / k } else if x < 0.0 { -1.0 / k } else { 0.0 })
        })
        .collect();
    (total / k, grads)
}

pub fn color_loss(rendered: &[Vec3], truth: &[Vec3]) -> f64 {
    color_loss_and_grad(rendered, truth).0
}

/// Mean smooth L1 over masked rays; 0 when the mask is empty.
pub fn distance_prior_loss_and_grad(d_hat: &[f64], prior: &[f64], mask: &[bool], beta: f64) -> (f64, Vec<f64>) {
    let n = mask.iter().filter(|m| **m).count();
    let mut grads = vec![0.0; d_hat.len()];
    if n == 0 {
        return (0.0, grads);
    }
    let mut total = 0.0;
    for i in 0..d_hat.len() {
        if mask[i] {
            let (v, g) = smooth_l1_diff(&[d_hat[i] - prior[i]], beta);
            total += v;
            grads[i] = g[0] / n as f64;
        }
    }
    (total / n as f64, grads)
}

pub fn distance_prior_loss(d_hat: &[f64], prior: &[f64], mask: &[bool]) -> f64 {
    distance_prior_loss_and_grad(d_hat, prior, mask, 0.1).0
}

/// Mean smooth L1 of normal differences over masked rays.
pub fn normal_prior_loss_and_grad(n_hat: &[Vec3], prior: &[Vec3], mask: &[bool], beta: f64) -> (f64, Vec<Vec3>) {
    let n = mask.iter().filter(|m| **m).count();
    let mut grads = vec![Vec3::zeros(); n_hat.len()];
    if n == 0 {
        return (0.0, grads);
    }
    let mut total = 0.0;
    for i in 0..n_hat.len() {
        if mask[i] {
            let (v, g) = smooth_l1_vec3(&n_hat[i], &prior[i], beta);
            total += v;
            grads[i] = g / n as f64;
        }
    }
    (total / n as f64, grads)
}

pub fn normal_prior_loss(n_hat: &[Vec3], prior: &[Vec3], mask: &[bool]) -> f64 {
    normal_prior_loss_and_grad(n_hat, prior, mask, 0.2).0
}

/// Direction through the pixel offset by `((a - 0.5) w, (b - 0.5) w)`.
pub fn perturb_direction_with(view: &CameraView, u: f64, v_px: f64, w: f64, a: f64, b: f64) -> Vec3 {
    view.direction_through(u + (a - 0.5) * w, v_px + (b - 0.5) * w)
}

/// Randomly perturbed ray direction near pixel `(u, v_px)`.
pub fn perturb_direction<R: Rng + ?Sized>(view: &CameraView, u: f64, v_px: f64, w: f64, rng: &mut R) -> Vec3 {
    let a = rng.random::<f64>();
    let b = rng.random::<f64>();
    perturb_direction_with(view, u, v_px, w, a, b)
}

/// Value and gradients of the perturbation residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLoss {
    /// Weighted sum `delta * smooth + epsilon * consist`.
    pub value: f64,
    /// Unweighted mean depth smoothness over all rays.
    pub smooth: f64,
    /// Unweighted consistency, summed over prior-bearing rays and divided by their count.
    pub consist: f64,
    /// Gradient on the first-stage depths; all zero when detached.
    pub d_depth: Vec<f64>,
    pub d_depth_pert: Vec<f64>,
    pub d_normal_pert: Vec<Vec3>,
}

/// Residual between the first-stage outputs and the perturbed second stage.
/// `normal_mask` marks rays whose normal prior is present.
pub fn residual_loss(
    d_hat: &[f64],
    d_pert: &[f64],
    n_prior: &[Vec3],
    n_pert: &[Vec3],
    normal_mask: &[bool],
    weights: &LossWeights,
    detach_first_stage: bool,
) -> ResidualLoss {
    let k = d_hat.len();
    let mut out = ResidualLoss {
        value: 0.0,
        smooth: 0.0,
        consist: 0.0,
        d_depth: vec![0.0; k],
        d_depth_pert: vec![0.0; k],
        d_normal_pert: vec![Vec3::zeros(); k],
    };
    if k == 0 {
        return out;
    }
    for i in 0..k {
        let (v, g) = smooth_l1_diff(&[d_hat[i] - d_pert[i]], weights.beta_res);
        out.smooth += v / k as f64;
        let g = weights.delta * g[0] / k as f64;
        out.d_depth_pert[i] = -g;
        if !detach_first_stage {
            out.d_depth[i] = g;
        }
    }
    let n = normal_mask.iter().filter(|m| **m).count();
    if n > 0 {
        for i in 0..k {
            if normal_mask[i] {
                let (v, g) = smooth_l1_vec3(&n_prior[i], &n_pert[i], weights.beta_res);
                out.consist += v / n as f64;
                out.d_normal_pert[i] = -g * (weights.epsilon / n as f64);
            }
        }
    }
    out.value = weights.delta * out.smooth + weights.epsilon * out.consist;
    out
}

/// Mean squared deviation of gradient norms from one, with gradients.
pub fn eikonal_loss_and_grad(gradients: &[Vec3]) -> (f64, Vec<Vec3>) {
    let m = gradients.len().max(1) as f64;
    let mut total = 0.0;
    let grads = gradients
        .iter()
        .map(|g| {
            let n = g.norm();
            total += (n - 1.0) * (n - 1.0);
            if n > 0.0 {
                g * (2.0 * (n - 1.0) / (n * m))
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    (total / m, grads)
}

pub fn eikonal_loss(gradients: &[Vec3]) -> f64 {
    eikonal_loss_and_grad(gradients).0
}

/// Unweighted loss terms of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub color: f64,
    pub prior_d: f64,
    pub prior_n: f64,
    pub smooth_d: f64,
    pub consist_n: f64,
    pub eikonal: f64,
}

impl LossParts {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("L_color", self.color),
            ("L_prior_D", self.prior_d),
            ("L_prior_N", self.prior_n),
            ("L_smooth_D", self.smooth_d),
            ("L_consist_N", self.consist_n),
            ("L_Eik", self.eikonal),
        ]
    }
}

/// `color + (prior_D + gamma prior_N) + (delta smooth_D + epsilon consist_N) + e Eik`.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> f64 {
    parts.color
        + (parts.prior_d + weights.gamma * parts.prior_n)
        + (weights.delta * parts.smooth_d + weights.epsilon * parts.consist_n)
        + weights.eikonal_weight * parts.eikonal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::{look_at, pinhole_intrinsics, PixelMap};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(&[1.0, 2.0], &[1.0, 2.0], 0.1).unwrap(), 0.0);
        assert!(close(smooth_l1(&[0.05], &[0.0], 0.1).unwrap(), 0.0125));
        assert!(close(smooth_l1(&[0.3, 0.4], &[0.0, 0.0], 0.1).unwrap(), 0.45));
        assert!(matches!(smooth_l1(&[1.0], &[1.0, 2.0], 0.1), Err(Error::Argument(_))));
    }

    #[test]
    fn smooth_l1_is_c1_at_beta() {
        let beta = 0.1;
        let below = 0.5 * beta * beta / beta;
        let above = beta - 0.5 * beta;
        assert!(close(below, above));
        let (_, g_q) = smooth_l1_diff(&[beta], beta);
        let (_, g_l) = smooth_l1_diff(&[beta * (1.0 + 1e-12)], beta);
        assert!((g_q[0] - 1.0).abs() < 1e-12 && (g_l[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn color_examples() {
        let a = [Vec3::new(0.2, 0.3, 0.4), Vec3::new(0.5, 0.5, 0.5)];
        assert_eq!(color_loss(&a, &a), 0.0);
        let b = [Vec3::new(0.3, 0.3, 0.4), Vec3::new(0.5, 0.5, 0.5)];
        assert!(close(color_loss(&b, &a), 0.05));
        let (ra, rb) = ([b[1], b[0]], [a[1], a[0]]);
        assert!(close(color_loss(&ra, &rb), color_loss(&b, &a)));
    }

    #[test]
    fn prior_examples() {
        assert_eq!(distance_prior_loss(&[1.0], &[2.0], &[false]), 0.0);
        assert_eq!(distance_prior_loss(&[1.0, 2.0], &[1.0, 2.0], &[true, true]), 0.0);
        assert!(close(distance_prior_loss(&[1.2, 7.0], &[1.0, 0.0], &[true, false]), 0.15));
        let n = [Vec3::z()];
        assert_eq!(normal_prior_loss(&n, &n, &[true]), 0.0);
        let off = [Vec3::new(0.0, 0.1, 1.0)];
        assert!(close(normal_prior_loss(&off, &n, &[true]), 0.025));
        assert_eq!(normal_prior_loss(&off, &n, &[false]), 0.0);
    }

    fn view() -> CameraView {
        let (r, t) = look_at(&Vec3::zeros(), &Vec3::new(0.3, 0.2, 1.0), &Vec3::y());
        CameraView::new(
            "v0",
            pinhole_intrinsics(50.0, 32.0, 24.0),
            r,
            t,
            PixelMap::filled(64, 48, Vec3::zeros()),
        )
    }

    #[test]
    fn centered_perturbation_is_identity() {
        let v = view();
        let d = perturb_direction_with(&v, 10.5, 7.5, 2.4, 0.5, 0.5);
        assert!((d - v.direction_through(10.5, 7.5)).norm() < 1e-15);
    }

    #[test]
    fn perturbation_angle_is_bounded() {
        let v = view();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = 2.4;
        let bound = (w * 2f64.sqrt() / 2.0 / 50.0).atan();
        for _ in 0..2000 {
            let (u, px) = (rng.random_range(0.0..64.0), rng.random_range(0.0..48.0));
            let d = perturb_direction(&v, u, px, w, &mut rng);
            assert!((d.norm() - 1.0).abs() < 1e-12);
            assert!(d.angle(&v.direction_through(u, px)) <= bound + 1e-12);
        }
    }

    fn w() -> LossWeights {
        LossWeights::default()
    }

    #[test]
    fn residual_fixed_point_is_zero() {
        let n = [Vec3::z(), Vec3::x()];
        let r = residual_loss(&[1.0, 2.0], &[1.0, 2.0], &n, &n, &[true, true], &w(), true);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn residual_depth_gap_case() {
        let n = [Vec3::z()];
        let r = residual_loss(&[1.0], &[1.3], &n, &n, &[true], &w(), true);
        assert_eq!(r.consist, 0.0);
        assert!(close(r.value, w().delta * 0.25));
    }

    #[test]
    fn residual_normal_gap_case() {
        let prior = [Vec3::z(), Vec3::z(), Vec3::z()];
        let pert = [Vec3::new(0.4, 0.0, 1.0), Vec3::z(), Vec3::z()];
        let mask = [true, true, false];
        let r = residual_loss(&[1.0; 3], &[1.0; 3], &prior, &pert, &mask, &w(), true);
        assert_eq!(r.smooth, 0.0);
        assert!(close(r.value, w().epsilon * 0.35 / 2.0));
    }

    #[test]
    fn residual_stop_gradient() {
        let n = [Vec3::z(), Vec3::y()];
        let r = residual_loss(&[1.0, 0.4], &[1.3, 0.45], &n, &n, &[true, true], &w(), true);
        assert!(r.d_depth.iter().all(|g| *g == 0.0));
        assert!(r.d_depth_pert.iter().all(|g| *g != 0.0));
        let r = residual_loss(&[1.0, 0.4], &[1.3, 0.45], &n, &n, &[true, true], &w(), false);
        assert!(r.d_depth.iter().zip(&r.d_depth_pert).all(|(a, b)| *a == -*b));
    }

    #[test]
    fn eikonal_examples() {
        assert_eq!(eikonal_loss(&[Vec3::x(), Vec3::y()]), 0.0);
        assert_eq!(eikonal_loss(&[Vec3::zeros(); 3]), 1.0);
        assert!(close(eikonal_loss(&[Vec3::new(0.0, 2.0, 0.0), Vec3::new(2.0, 0.0, 0.0)]), 1.0));
    }

    #[test]
    fn total_combines_parts() {
        assert_eq!(total_loss(&LossParts::default(), &w()), 0.0);
        let p = LossParts {
            color: 0.3,
            prior_d: 0.2,
            prior_n: 0.5,
            smooth_d: 0.7,
            consist_n: 0.11,
            eikonal: 0.04,
        };
        let by_hand = 0.3 + 0.2 + 0.001 * 0.5 + 0.001 * 0.7 + 0.001 * 0.11 + 0.1 * 0.04;
        assert!(close(total_loss(&p, &w()), by_hand));
        let mut q = p;
        q.color += 1.0;
        assert!(close(total_loss(&q, &w()) - total_loss(&p, &w()), 1.0));
        let mut q = p;
        q.eikonal += 1.0;
        assert!(close(total_loss(&q, &w()) - total_loss(&p, &w()), 0.1));
    }

    fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64]) {
        let h = 1e-7;
        for i in 0..x.len() {
            let mut a = x.to_vec();
            a[i] += h;
            let mut b = x.to_vec();
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6, "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let prior = [1.0, 2.0, 0.5];
        let mask = [true, false, true];
        let x = [1.04, 1.0, 0.9];
        let (_, g) = distance_prior_loss_and_grad(&x, &prior, &mask, 0.1);
        fd_check(|d| distance_prior_loss_and_grad(d, &prior, &mask, 0.1).0, &x, &g);

        let flat = [0.3, 0.9, -0.2, 0.01, 0.02, 1.1];
        let to_v = |d: &[f64]| vec![Vec3::new(d[0], d[1], d[2]), Vec3::new(d[3], d[4], d[5])];
        let (_, g) = eikonal_loss_and_grad(&to_v(&flat));
        let g: Vec<f64> = g.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect();
        fd_check(|d| eikonal_loss(&to_v(d)), &flat, &g);

        let np = [Vec3::z(), Vec3::x()];
        let (_, g) = normal_prior_loss_and_grad(&to_v(&flat), &np, &[true, true], 0.2);
        let g: Vec<f64> = g.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect();
        fd_check(|d| normal_prior_loss_and_grad(&to_v(d), &np, &[true, true], 0.2).0, &flat, &g);

        let c = [Vec3::new(0.1, 0.5, 0.9), Vec3::new(0.3, 0.2, 0.8)];
        let (_, g) = color_loss_and_grad(&to_v(&flat), &c);
        let g: Vec<f64> = g.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect();
        fd_check(|d| color_loss(&to_v(d), &c), &flat, &g);
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative(
            a in prop::collection::vec(-3.0f64..3.0, 6),
            b in prop::collection::vec(-3.0f64..3.0, 6),
            beta in 0.01f64..1.0,
        ) {
            prop_assert!(smooth_l1(&a, &b, beta).unwrap() >= 0.0);
            let va = vec![Vec3::new(a[0], a[1], a[2]), Vec3::new(a[3], a[4], a[5])];
            let vb = vec![Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5])];
            prop_assert!(color_loss(&va, &vb) >= 0.0);
            prop_assert!(eikonal_loss(&va) >= 0.0);
            let r = residual_loss(&a[..2], &b[..2], &va, &vb, &[true, false], &LossWeights::default(), true);
            prop_assert!(r.value >= 0.0);
        }
    }
}
