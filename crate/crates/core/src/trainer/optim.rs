use serde::{Deserialize, Serialize};

use crate::fields::AdamState;

/// Linear warmup followed by cosine decay to `floor * learning_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub floor: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            warmup_steps: 1000,
            floor: 0.05,
        }
    }
}

impl Schedule {
    /// Learning rate for the zero-based `step` of a run of `total` steps.
    pub fn rate(&self, step: u64, total: u64) -> f64 {
        if step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * (self.floor + (1.0 - self.floor) * cosine)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning-rate multiplier for the log-sharpness, equivalent to
    /// parametrizing `s = exp(scale * v)`.
    pub sharpness_lr_scale: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            sharpness_lr_scale: 10.0,
        }
    }
}

/// Adam over the flat f32 network parameters plus the f64 log-sharpness.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            state: AdamState {
                m: vec![0.0; num_params],
                v: vec![0.0; num_params],
                sharpness_m: 0.0,
                sharpness_v: 0.0,
            },
        }
    }

    /// Applies update number `t` (one-based). `segments` pairs parameter
    /// slices with their gradients; together they cover the moment vectors
    /// in order.
    pub fn update(&mut self, t: u64, lr: f64, segments: &mut [(&mut [f32], &[f32])], log_s: &mut f64, grad_log_s: f64) {
        let AdamConfig {
            beta1,
            beta2,
            eps,
            sharpness_lr_scale,
        } = self.config;
        let c1 = 1.0 - beta1.powi(t as i32);
        let c2 = 1.0 - beta2.powi(t as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let (b1, b2, e) = (beta1 as f32, beta2 as f32, (eps * c2.sqrt()) as f32);
        let mut at = 0;
        for (params, grads) in segments.iter_mut() {
            let n = params.len();
            assert_eq!(grads.len(), n, "gradient size mismatch");
            let m = &mut self.state.m[at..at + n];
            let v = &mut self.state.v[at..at + n];
            for (((p, g), m), v) in params.iter_mut().zip(grads.iter()).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() + e);
            }
            at += n;
        }
        assert_eq!(at, self.state.m.len(), "segments must cover every parameter");
        let s = &mut self.state;
        s.sharpness_m = beta1 * s.sharpness_m + (1.0 - beta1) * grad_log_s;
        s.sharpness_v = beta2 * s.sharpness_v + (1.0 - beta2) * grad_log_s * grad_log_s;
        *log_s -= sharpness_lr_scale * lr * (s.sharpness_m / c1) / ((s.sharpness_v / c2).sqrt() + eps);
    }
}
