//! Neural scene representation: a signed distance network with a learnable
//! density sharpness and a color network, both differentiable with respect
//! to their parameters and to position.

pub mod checkpoint;
pub mod encoding;
pub mod geometry;
pub mod mlp;
pub mod radiance;
pub mod real;

pub use checkpoint::{AdamState, Checkpoint};
pub use encoding::{encode, encoded_len};
pub use geometry::{GeometryConfig, GeometryEval, GeometryField};
pub use mlp::{Activation, Mlp, MlpCache, MlpShape};
pub use radiance::{ColorInputs, RadianceConfig, RadianceEval, RadianceField, RadianceInputGrad};
pub use real::Real;

use serde::{Deserialize, Serialize};

/// Network sizes and encodings for both fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub geometry: GeometryConfig,
    pub radiance: RadianceConfig,
}

/// Geometry and color networks trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel<T> {
    pub geometry: GeometryField<T>,
    pub radiance: RadianceField<T>,
}

impl<T: Real> SceneModel<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let geometry = GeometryField::geometric_init(config.geometry.clone(), seed);
        let radiance = RadianceField::init(
            config.radiance.clone(),
            config.geometry.feature_dim,
            seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        );
        Self { geometry, radiance }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            geometry: self.geometry.config.clone(),
            radiance: self.radiance.config.clone(),
        }
    }

    /// Network parameter count, excluding the sharpness scalar.
    pub fn num_params(&self) -> usize {
        self.geometry.num_params() + self.radiance.num_params()
    }

    /// Converts the parameters to another precision.
    pub fn cast<U: Real>(&self) -> SceneModel<U> {
        let config = self.config();
        let conv = |p: &[T]| p.iter().map(|v| U::of(v.f64())).collect::<Vec<U>>();
        let geometry = GeometryField {
            mlp: Mlp::from_params(config.geometry.shape(), conv(self.geometry.mlp.params())).expect("same shape"),
            config: config.geometry,
            log_sharpness: self.geometry.log_sharpness,
        };
        let radiance = RadianceField {
            mlp: Mlp::from_params(
                config.radiance.shape(self.radiance.feature_dim),
                conv(self.radiance.mlp.params()),
            )
            .expect("same shape"),
            config: config.radiance,
            feature_dim: self.radiance.feature_dim,
        };
        SceneModel { geometry, radiance }
    }
}
