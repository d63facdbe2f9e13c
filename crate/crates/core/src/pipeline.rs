//! End-to-end runs: synthetic scene, training, extraction and evaluation
//! wired together with their on-disk artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{mesh_to_points, recon_metrics, ReconMetrics};
use crate::extraction::{extract_mesh, fuse_views, read_ply, write_ply, ExtractOptions, TriangleMesh};
use crate::fields::{Checkpoint, SceneModel};
use crate::preprocess::{preprocess_views, PreprocessOptions};
use crate::scene_io::{load_scene, LoadOptions, SceneBundle};
use crate::synth::{generate, write_synth, SynthConfig};
use crate::trainer::{fit, latest_checkpoint, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Surface sampling voxel, meters.
    pub voxel: f64,
    /// Match distance for precision and recall, meters.
    pub threshold: f64,
    /// Re-fuse both meshes from the scene cameras so that only observed
    /// surfaces are compared.
    pub trim: bool,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            voxel: 0.005,
            threshold: 0.05,
            trim: true,
            seed: 0,
        }
    }
}

/// Scores `pred` against `gt` (both world frame). With `scene` and
/// `opts.trim`, both meshes are first re-fused from the scene cameras.
pub fn evaluate_meshes(
    pred: &TriangleMesh,
    gt: &TriangleMesh,
    scene: Option<&SceneBundle>,
    opts: &EvalOptions,
    fusion: &ExtractOptions,
) -> Result<ReconMetrics> {
    let (pred, gt) = match (scene, opts.trim) {
        (Some(scene), true) => (fuse_views(pred, scene, fusion)?, fuse_views(gt, scene, fusion)?),
        _ => (pred.clone(), gt.clone()),
    };
    let p = mesh_to_points(&pred, opts.voxel, opts.seed);
    let g = mesh_to_points(&gt, opts.voxel, opts.seed);
    recon_metrics(&p, &g, opts.threshold)
}

/// Record written next to the training artifacts so later stages can find
/// the scene without extra flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub scene_dir: PathBuf,
}

const RUN_INFO: &str = "run.json";

pub fn write_run_info(run_dir: &Path, info: &RunInfo) -> Result<()> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let path = run_dir.join(RUN_INFO);
    let text = serde_json::to_string_pretty(info).expect("run info serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_run_info(run_dir: &Path) -> Result<RunInfo> {
    let path = run_dir.join(RUN_INFO);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Loads a scene directory and applies preprocessing with `opts`.
pub fn load_preprocessed(dir: &Path, opts: PreprocessOptions) -> Result<SceneBundle> {
    let raw = load_scene(dir, LoadOptions { normalize: false })?;
    let meta_path = dir.join("scene.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: crate::scene_io::SceneMeta =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    if meta.frame == crate::scene_io::SceneFrame::Optimization {
        return load_scene(dir, LoadOptions::default());
    }
    let mut bundle = preprocess_views(raw.views, opts)?;
    if let (Some(t), Some(s)) = (meta.t_opt, meta.s_scale) {
        // A recorded normalization wins over the prior bounding box.
        let world = bundle.world_views();
        bundle = SceneBundle::from_world(world, t.into(), s)?;
    }
    Ok(bundle)
}

/// Most recent model of a run directory.
pub fn load_model(run_dir: &Path) -> Result<SceneModel<f32>> {
    let path = latest_checkpoint(run_dir)?
        .ok_or_else(|| Error::Checkpoint(format!("no checkpoint in {}", run_dir.display())))?;
    Ok(Checkpoint::load(&path)?.model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub extract: ExtractOptions,
    pub eval: EvalOptions,
    /// Lattice resolution of the ground-truth mesh.
    pub gt_resolution: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            train: TrainConfig::desk(),
            extract: ExtractOptions {
                resolution: 128,
                ..ExtractOptions::default()
            },
            eval: EvalOptions::default(),
            gt_resolution: 256,
        }
    }
}

impl PipelineConfig {
    /// Applies one seed to every stochastic stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub metrics: ReconMetrics,
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
    /// Wall-clock timings; left out of the JSON so reruns compare equal.
    #[serde(skip)]
    pub train_seconds: f64,
    #[serde(skip)]
    pub total_seconds: f64,
}

/// Runs synth, training, extraction and evaluation under `out`:
/// `scene/`, `run/`, `mesh.ply`, `raw_mesh.ply` and `metrics.json`.
pub fn run_pipeline(config: &PipelineConfig, out: &Path) -> Result<PipelineReport> {
    let started = Instant::now();
    let scene_dir = out.join("scene");
    let run_dir = out.join("run");
    log::info!("generating `{}` scene with {} views", config.synth.preset, config.synth.views);
    let synth = generate(&config.synth)?;
    write_synth(&scene_dir, &synth, config.gt_resolution)?;
    let scene = load_preprocessed(&scene_dir, PreprocessOptions::default())?;
    write_run_info(&run_dir, &RunInfo { scene_dir: scene_dir.clone() })?;

    let train_started = Instant::now();
    let outcome = fit(&scene, &config.train, &run_dir, false, None)?;
    let train_seconds = train_started.elapsed().as_secs_f64();

    let extraction = extract_mesh(&outcome.model, &scene, &config.extract)?;
    write_ply(&extraction.raw, &out.join("raw_mesh.ply"), true)?;
    write_ply(&extraction.fused, &out.join("mesh.ply"), true)?;
    let gt = read_ply(&scene_dir.join("gt").join("mesh.ply"))?;
    let metrics = evaluate_meshes(&extraction.fused, &gt, Some(&scene), &config.eval, &config.extract)?;
    let report = PipelineReport {
        metrics,
        steps: outcome.steps,
        final_loss: outcome.last_total,
        mesh_vertices: extraction.fused.vertices.len(),
        mesh_triangles: extraction.fused.triangles.len(),
        train_seconds,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    let path = out.join("metrics.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
