//! Optimization of the scene model from a normalized scene bundle.

mod fit;
mod optim;
mod step;

pub use fit::{fit, latest_checkpoint, FitOutcome, LOSS_CSV_HEADER};
pub use optim::{Adam, AdamConfig, Schedule};
pub use step::{
    evaluate_plan, plan_step, sample_batch, step_rng, train_step, BatchRay, ModelGrads, PlannedRay, RayBatch, RaySampleOrigin,
    StepOutcome, StepPlan,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{GeometryConfig, ModelConfig, RadianceConfig};
use crate::losses::LossWeights;

/// Which loss terms take part in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossTerms {
    pub color: bool,
    pub prior_d: bool,
    pub prior_n: bool,
    pub smooth_d: bool,
    pub consist_n: bool,
    pub eikonal: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self::full()
    }
}

impl LossTerms {
    pub fn full() -> Self {
        Self {
            color: true,
            prior_d: true,
            prior_n: true,
            smooth_d: true,
            consist_n: true,
            eikonal: true,
        }
    }

    pub fn base() -> Self {
        Self {
            color: true,
            prior_d: false,
            prior_n: false,
            smooth_d: false,
            consist_n: false,
            eikonal: true,
        }
    }

    /// Whether the perturbed second stage must be rendered.
    pub fn needs_second_stage(&self) -> bool {
        self.smooth_d || self.consist_n
    }
}

/// Ablation presets, from color-only training to the full objective.
pub const PRESETS: [(&str, &str); 8] = [
    ("base", "color + Eikonal"),
    ("base_dist", "base + distance prior"),
    ("base_normal", "base + normal prior"),
    ("base_prior", "base + both priors"),
    ("base_prior_smooth", "base + priors + perturbed depth smoothness"),
    ("base_prior_consist", "base + priors + perturbed normal consistency"),
    ("full", "all terms"),
    ("full_strong_eikonal", "all terms with Eikonal weight 1.3"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub rays_per_batch: usize,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub iterations: u64,
    pub seed: u64,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub terms: LossTerms,
    pub model: ModelConfig,
    /// Stop gradients through the first-stage depth in the residual.
    pub detach_first_stage: bool,
    /// Normalize the rendered normal before comparing it with priors.
    pub normalize_rendered_normal: bool,
    pub checkpoint_every: u64,
    pub keep_checkpoints: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rays_per_batch: 512,
            n_coarse: 64,
            n_fine: 64,
            iterations: 5000,
            seed: 0,
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            terms: LossTerms::full(),
            model: ModelConfig::default(),
            detach_first_stage: true,
            normalize_rendered_normal: false,
            checkpoint_every: 1000,
            keep_checkpoints: 3,
        }
    }
}

impl TrainConfig {
    /// Small networks and sample counts for single-machine runs on indoor
    /// scenes: the field starts as free space around the cameras, and the
    /// prior and residual weights are raised so they act within a few
    /// thousand steps.
    pub fn desk() -> Self {
        Self {
            rays_per_batch: 64,
            n_coarse: 24,
            n_fine: 16,
            schedule: Schedule {
                warmup_steps: 200,
                ..Schedule::default()
            },
            weights: LossWeights {
                gamma: 0.05,
                delta: 0.01,
                epsilon: 0.05,
                ..LossWeights::default()
            },
            model: ModelConfig {
                geometry: GeometryConfig {
                    hidden_layers: 4,
                    hidden_width: 64,
                    feature_dim: 16,
                    skip_layer: Some(2),
                    init_radius: 0.8,
                    init_inside_out: true,
                    ..GeometryConfig::default()
                },
                radiance: RadianceConfig {
                    hidden_layers: 2,
                    hidden_width: 64,
                    ..RadianceConfig::default()
                },
            },
            ..Self::default()
        }
    }

    /// Applies an ablation preset to the loss switches (and weights for `full_strong_eikonal`).
    pub fn with_preset(mut self, name: &str) -> Result<Self> {
        let mut t = LossTerms::base();
        match name {
            "base" => {}
            "base_dist" => t.prior_d = true,
            "base_normal" => t.prior_n = true,
            "base_prior" => (t.prior_d, t.prior_n) = (true, true),
            "base_prior_smooth" => (t.prior_d, t.prior_n, t.smooth_d) = (true, true, true),
            "base_prior_consist" => (t.prior_d, t.prior_n, t.consist_n) = (true, true, true),
            "full" => t = LossTerms::full(),
            "full_strong_eikonal" => {
                t = LossTerms::full();
                self.weights.eikonal_weight = 1.3;
            }
            other => {
                let known: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                return Err(Error::Config(format!("unknown preset {other:?}; expected one of {known:?}")));
            }
        }
        self.terms = t;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch == 0 {
            return Err(Error::Config("rays_per_batch must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.n_coarse < 2 {
            return Err(Error::Config("n_coarse must be at least 2".into()));
        }
        if self.checkpoint_every == 0 || self.keep_checkpoints == 0 {
            return Err(Error::Config("checkpoint cadence and retention must be positive".into()));
        }
        if !(self.schedule.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.schedule.floor) {
            return Err(Error::Config("learning rate must be positive and floor within [0, 1]".into()));
        }
        self.weights.validate()
    }

    /// Reads a TOML or JSON file (by extension; TOML otherwise).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_toggle_terms() {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
        let mut seen = Vec::new();
        for name in names {
            let c = TrainConfig::default().with_preset(name).unwrap();
            assert!(c.terms.eikonal);
            seen.push(c.terms);
        }
        assert_eq!(seen[0], LossTerms::base());
        assert_eq!(seen[6], LossTerms::full());
        assert!(!seen[3].needs_second_stage() && seen[4].smooth_d && !seen[4].consist_n);
        let e = TrainConfig::default().with_preset("full_strong_eikonal").unwrap();
        assert_eq!(e.weights.eikonal_weight, 1.3);
        assert!(TrainConfig::default().with_preset("nope").is_err());
    }

    #[test]
    fn toml_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = TrainConfig::desk().with_preset("base_prior").unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, c.to_toml()).unwrap();
        assert_eq!(TrainConfig::from_file(&p).unwrap(), c);
        let p = dir.path().join("c.json");
        std::fs::write(&p, serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(TrainConfig::from_file(&p).unwrap(), c);
        let p = dir.path().join("partial.toml");
        std::fs::write(&p, "iterations = 7\n[weights]\ngamma = 0.5\n").unwrap();
        let c = TrainConfig::from_file(&p).unwrap();
        assert_eq!((c.iterations, c.weights.gamma, c.rays_per_batch), (7, 0.5, 512));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = TrainConfig::default();
        c.rays_per_batch = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.weights.delta = -1.0;
        assert!(c.validate().is_err());
    }
}
