use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::encoding::{encode_with_jacobian, encoded_len};
use super::mlp::{Activation, Mlp, MlpCache, MlpShape};
use super::real::Real;
use crate::scene_io::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub feature_dim: usize,
    pub encoding_freqs: usize,
    /// Hidden layer that also receives the encoded input.
    pub skip_layer: Option<usize>,
    pub softplus_beta: f64,
    pub init_radius: f64,
    /// Initialize as `radius - |x|` (free space inside) instead of `|x| - radius`.
    pub init_inside_out: bool,
    pub initial_sharpness: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 8,
            hidden_width: 256,
            feature_dim: 256,
            encoding_freqs: 6,
            skip_layer: Some(4),
            softplus_beta: 100.0,
            init_radius: 0.5,
            init_inside_out: false,
            initial_sharpness: 20.0,
        }
    }
}

impl GeometryConfig {
    pub fn shape(&self) -> MlpShape {
        let mut dims = vec![encoded_len(self.encoding_freqs)];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        dims.push(1 + self.feature_dim);
        MlpShape {
            dims,
            skip: self.skip_layer.filter(|&s| s > 0 && s < self.hidden_layers),
            activation: Activation::Softplus { beta: self.softplus_beta },
        }
    }
}

/// Signed distance network: encoded position to `(sdf, feature)`, plus
/// the learnable sharpness of the logistic density.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryField<T> {
    pub config: GeometryConfig,
    pub mlp: Mlp<T>,
    /// Sharpness is `exp(log_sharpness)`, positive for any parameter value.
    pub log_sharpness: f64,
}

/// Batched forward pass retained for the reverse pass.
#[derive(Debug, Clone)]
pub struct GeometryEval<T> {
    pub sdf: Vec<f64>,
    /// Spatial gradients when evaluated with tangents.
    pub gradient: Option<Vec<Vec3>>,
    /// `n x feature_dim` row-major.
    pub features: Vec<T>,
    cache: MlpCache<T>,
}

impl<T: Real> GeometryEval<T> {
    pub fn len(&self) -> usize {
        self.sdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sdf.is_empty()
    }
}

impl<T: Real> GeometryField<T> {
    /// Sphere-like initialization: the initial field approximates
    /// `|x| - init_radius` (or its negation when `init_inside_out`).
    pub fn geometric_init(config: GeometryConfig, seed: u64) -> Self {
        let shape = config.shape();
        let mut mlp = Mlp::<T>::zeros(shape.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = shape.num_layers();
        for l in 0..layers {
            let d_in = shape.layer_in(l);
            let d_out = shape.layer_out(l);
            let w = mlp.weight_mut(l);
            if l + 1 == layers {
                let sign = if config.init_inside_out { -1.0 } else { 1.0 };
                let dist = Normal::new(sign * std::f64::consts::PI.sqrt() / (shape.dims[l] as f64).sqrt(), 1e-4)
                    .expect("valid normal");
                for v in w.iter_mut() {
                    *v = T::of(dist.sample(&mut rng));
                }
                let b = mlp.bias_mut(l);
                b[0] = T::of(-sign * config.init_radius);
                continue;
            }
            let dist = Normal::new(0.0, 2f64.sqrt() / (d_out as f64).sqrt()).expect("valid normal");
            for row in 0..d_out {
                for col in 0..d_in {
                    let keep = if l == 0 && config.encoding_freqs > 0 {
                        col < 3
                    } else if shape.skip == Some(l) {
                        // Only the raw xyz part of the re-injected encoding.
                        col < shape.dims[l] + 3
                    } else {
                        true
                    };
                    let sample = dist.sample(&mut rng);
                    w[row * d_in + col] = if keep { T::of(sample) } else { T::zero() };
                }
            }
        }
        Self {
            log_sharpness: config.initial_sharpness.ln(),
            config,
            mlp,
        }
    }

    pub fn sharpness(&self) -> f64 {
        self.log_sharpness.exp()
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn output_dim(&self) -> usize {
        1 + self.config.feature_dim
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    pub fn forward(&self, points: &[Vec3], with_gradient: bool) -> GeometryEval<T> {
        let n = points.len();
        let channels = if with_gradient { 4 } else { 1 };
        let d = self.mlp.shape().input_dim();
        let freqs = self.config.encoding_freqs;
        let mut input = vec![T::zero(); channels * n * d];
        let mut value = vec![0.0; d];
        let (mut dx, mut dy, mut dz) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for (r, p) in points.iter().enumerate() {
            encode_with_jacobian(p, freqs, &mut value, &mut [&mut dx, &mut dy, &mut dz]);
            for (dst, src) in input[r * d..(r + 1) * d].iter_mut().zip(&value) {
                *dst = T::of(*src);
            }
            if with_gradient {
                for (c, tangent) in [&dx, &dy, &dz].into_iter().enumerate() {
                    let at = ((c + 1) * n + r) * d;
                    for (dst, src) in input[at..at + d].iter_mut().zip(tangent) {
                        *dst = T::of(*src);
                    }
                }
            }
        }
        let cache = self.mlp.forward(&input, n, channels);
        let out = cache.output();
        let od = self.output_dim();
        let sdf = (0..n).map(|r| out[r * od].f64()).collect();
        let mut features = Vec::with_capacity(n * self.config.feature_dim);
        for r in 0..n {
            features.extend_from_slice(&out[r * od + 1..(r + 1) * od]);
        }
        let gradient = with_gradient.then(|| {
            (0..n)
                .map(|r| {
                    Vec3::new(
                        out[(n + r) * od].f64(),
                        out[(2 * n + r) * od].f64(),
                        out[(3 * n + r) * od].f64(),
                    )
                })
                .collect()
        });
        GeometryEval {
            sdf,
            gradient,
            features,
            cache,
        }
    }

    /// Accumulates parameter gradients for upstream gradients on the sdf
    /// values, spatial gradients and features of `eval`.
    pub fn backward(
        &self,
        eval: &GeometryEval<T>,
        d_sdf: &[f64],
        d_gradient: Option<&[Vec3]>,
        d_features: Option<&[T]>,
        grads: &mut [T],
    ) {
        let n = eval.len();
        let channels = eval.cache.channels;
        let od = self.output_dim();
        let fd = self.config.feature_dim;
        let mut g = vec![T::zero(); channels * n * od];
        for r in 0..n {
            g[r * od] = T::of(d_sdf[r]);
            if let Some(df) = d_features {
                g[r * od + 1..(r + 1) * od].copy_from_slice(&df[r * fd..(r + 1) * fd]);
            }
        }
        if let Some(dg) = d_gradient {
            assert_eq!(channels, 4, "spatial-gradient upstream needs a tangent evaluation");
            for r in 0..n {
                for c in 0..3 {
                    g[((c + 1) * n + r) * od] = T::of(dg[r][c]);
                }
            }
        }
        self.mlp.backward(&eval.cache, &g, grads, false);
    }

    /// SDF values only, evaluated in chunks.
    pub fn sdf_values(&self, points: &[Vec3]) -> Vec<f64> {
        points
            .chunks(4096)
            .flat_map(|chunk| self.forward(chunk, false).sdf)
            .collect()
    }

    /// Value and geometry feature at one point.
    pub fn sdf(&self, x: &Vec3) -> (f64, Vec<f64>) {
        let eval = self.forward(std::slice::from_ref(x), false);
        (eval.sdf[0], eval.features.iter().map(|f| f.f64()).collect())
    }

    /// Exact spatial gradient of the sdf at one point.
    pub fn sdf_gradient(&self, x: &Vec3) -> Vec3 {
        self.forward(std::slice::from_ref(x), true).gradient.expect("tangent evaluation")[0]
    }

    /// Values and gradients for a batch.
    pub fn sdf_with_gradient(&self, points: &[Vec3]) -> (Vec<f64>, Vec<Vec3>) {
        let mut values = Vec::with_capacity(points.len());
        let mut grads = Vec::with_capacity(points.len());
        for chunk in points.chunks(2048) {
            let e = self.forward(chunk, true);
            values.extend(e.sdf);
            grads.extend(e.gradient.expect("tangent evaluation"));
        }
        (values, grads)
    }
}
