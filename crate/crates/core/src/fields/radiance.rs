use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::encoded_len;
use super::mlp::{Activation, Mlp, MlpCache, MlpShape};
use super::real::Real;
use crate::error::{Error, Result};
use crate::fields::encoding::encode;
use crate::scene_io::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ColorInputs {
    /// Position and view direction only.
    Xv,
    /// Position, view direction, sdf gradient and geometry feature.
    #[default]
    XvGradFeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadianceConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub encoding_freqs_dir: usize,
    pub inputs: ColorInputs,
}

impl Default for RadianceConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            hidden_width: 256,
            encoding_freqs_dir: 4,
            inputs: ColorInputs::XvGradFeat,
        }
    }
}

impl RadianceConfig {
    pub fn input_dim(&self, feature_dim: usize) -> usize {
        let base = 3 + encoded_len(self.encoding_freqs_dir);
        match self.inputs {
            ColorInputs::Xv => base,
            ColorInputs::XvGradFeat => base + 3 + feature_dim,
        }
    }

    pub fn shape(&self, feature_dim: usize) -> MlpShape {
        let mut dims = vec![self.input_dim(feature_dim)];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        dims.push(3);
        MlpShape {
            dims,
            skip: None,
            activation: Activation::Relu,
        }
    }
}

/// Color network with a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField<T> {
    pub config: RadianceConfig,
    pub feature_dim: usize,
    pub mlp: Mlp<T>,
}

#[derive(Debug, Clone)]
pub struct RadianceEval<T> {
    pub colors: Vec<Vec3>,
    cache: MlpCache<T>,
}

/// Input gradients of a color evaluation.
#[derive(Debug, Clone)]
pub struct RadianceInputGrad<T> {
    pub gradient: Vec<Vec3>,
    /// `n x feature_dim` row-major.
    pub features: Vec<T>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl<T: Real> RadianceField<T> {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases.
    pub fn init(config: RadianceConfig, feature_dim: usize, seed: u64) -> Self {
        let shape = config.shape(feature_dim);
        let mut mlp = Mlp::<T>::zeros(shape.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..shape.num_layers() {
            let bound = 1.0 / (shape.layer_in(l) as f64).sqrt();
            for w in mlp.weight_mut(l) {
                *w = T::of(rng.random_range(-bound..bound));
            }
            for b in mlp.bias_mut(l) {
                *b = T::of(rng.random_range(-bound..bound));
            }
        }
        Self {
            config,
            feature_dim,
            mlp,
        }
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    /// Batched evaluation. `features` is `n x feature_dim` and both it and
    /// `gradients` are ignored for [`ColorInputs::Xv`]. Directions are
    /// assumed unit length.
    pub fn forward(&self, points: &[Vec3], dirs: &[Vec3], gradients: &[Vec3], features: &[T]) -> RadianceEval<T> {
        let n = points.len();
        assert_eq!(dirs.len(), n, "direction count mismatch");
        let rich = self.config.inputs == ColorInputs::XvGradFeat;
        if rich {
            assert_eq!(gradients.len(), n, "gradient count mismatch");
            assert_eq!(features.len(), n * self.feature_dim, "feature size mismatch");
        }
        let d = self.config.input_dim(self.feature_dim);
        let mut input = Vec::with_capacity(n * d);
        for r in 0..n {
            input.extend(points[r].iter().map(|v| T::of(*v)));
            input.extend(encode(&dirs[r], self.config.encoding_freqs_dir).into_iter().map(T::of));
            if rich {
                input.extend(gradients[r].iter().map(|v| T::of(*v)));
                input.extend_from_slice(&features[r * self.feature_dim..(r + 1) * self.feature_dim]);
            }
        }
        let cache = self.mlp.forward(&input, n, 1);
        let colors = cache
            .output()
            .chunks_exact(3)
            .map(|c| Vec3::new(sigmoid(c[0].f64()), sigmoid(c[1].f64()), sigmoid(c[2].f64())))
            .collect();
        RadianceEval { colors, cache }
    }

    /// Accumulates parameter gradients for color upstream gradients and
    /// returns the gradients on the sdf gradient and feature inputs (empty
    /// for [`ColorInputs::Xv`]).
    pub fn backward(&self, eval: &RadianceEval<T>, d_color: &[Vec3], grads: &mut [T]) -> RadianceInputGrad<T> {
        let n = eval.colors.len();
        let mut g = Vec::with_capacity(3 * n);
        for (c, dc) in eval.colors.iter().zip(d_color) {
            for k in 0..3 {
                g.push(T::of(dc[k] * c[k] * (1.0 - c[k])));
            }
        }
        let rich = self.config.inputs == ColorInputs::XvGradFeat;
        let gx = self.mlp.backward(&eval.cache, &g, grads, rich);
        let mut out = RadianceInputGrad {
            gradient: Vec::new(),
            features: Vec::new(),
        };
        if let Some(gx) = gx {
            let d = self.config.input_dim(self.feature_dim);
            let at = 3 + encoded_len(self.config.encoding_freqs_dir);
            out.gradient.reserve(n);
            out.features.reserve(n * self.feature_dim);
            for row in gx.chunks_exact(d) {
                out.gradient.push(Vec3::new(row[at].f64(), row[at + 1].f64(), row[at + 2].f64()));
                out.features.extend_from_slice(&row[at + 3..]);
            }
        }
        out
    }

    /// Color of a single sample.
    pub fn color(&self, x: &Vec3, v: &Vec3, grad: &Vec3, feat: &[f64]) -> Result<Vec3> {
        if ((v.norm() - 1.0).abs()) > 1e-5 {
            return Err(Error::Argument(format!("view direction must be unit length, got norm {}", v.norm())));
        }
        let feats: Vec<T> = if self.config.inputs == ColorInputs::XvGradFeat {
            if feat.len() != self.feature_dim {
                return Err(Error::Argument(format!(
                    "expected {} feature values, got {}",
                    self.feature_dim,
                    feat.len()
                )));
            }
            feat.iter().map(|f| T::of(*f)).collect()
        } else {
            Vec::new()
        };
        Ok(self
            .forward(std::slice::from_ref(x), std::slice::from_ref(v), std::slice::from_ref(grad), &feats)
            .colors[0])
    }
}
