//! Trains a small model on the synthetic sphere, then extracts and scores
//! the surface.
//!
//! ```text
//! cargo run --release --example train_sphere -- [iterations]
//! ```

use roomsdf::evaluation::{mesh_to_points, recon_metrics};
use roomsdf::extraction::{extract_mesh, ExtractOptions};
use roomsdf::pipeline::{load_preprocessed, PipelineConfig};
use roomsdf::preprocess::PreprocessOptions;
use roomsdf::synth::{generate, ground_truth_mesh, write_synth, SynthConfig};
use roomsdf::trainer::fit;

fn main() -> roomsdf::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1500);
    let dir = std::env::temp_dir().join("train_sphere");
    let synth = generate(&SynthConfig {
        preset: "sphere".into(),
        views: 16,
        width: 64,
        height: 48,
        ..SynthConfig::default()
    })?;
    write_synth(&dir.join("scene"), &synth, 64)?;
    let scene = load_preprocessed(&dir.join("scene"), PreprocessOptions::default())?;

    let mut config = PipelineConfig::default().train;
    config.iterations = iterations;
    config.schedule.warmup_steps = iterations / 10;
    let outcome = fit(&scene, &config, &dir.join("run"), false, None)?;

    let opts = ExtractOptions {
        resolution: 96,
        voxel_size: 0.02,
        truncation: 0.08,
    };
    let mesh = extract_mesh(&outcome.model, &scene, &opts)?;
    let gt = ground_truth_mesh(&synth, 96);
    let m = recon_metrics(&mesh_to_points(&mesh.raw, 0.01, 0), &mesh_to_points(&gt, 0.01, 1), 0.05)?;
    println!(
        "raw mesh vs analytic sphere: acc {:.4} comp {:.4} F {:.1} (s = {:.1})",
        m.accuracy,
        m.completeness,
        m.fscore,
        outcome.model.geometry.sharpness()
    );
    Ok(())
}
