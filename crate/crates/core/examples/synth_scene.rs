//! Generates the synthetic room and writes it as a scene directory.
//!
//! ```text
//! cargo run --release --example synth_scene -- [out-dir] [views]
//! ```

use std::path::PathBuf;

use roomsdf::synth::{generate, write_synth, SynthConfig};

fn main() -> roomsdf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("synth_room"));
    let views = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(24);
    let config = SynthConfig { views, ..SynthConfig::default() };
    let scene = generate(&config)?;
    for (view, gt) in scene.views.iter().zip(&scene.ground_truth).take(4) {
        let dist = view.distance_prior.as_ref().unwrap();
        let with_depth = dist.as_slice().iter().filter(|d| **d > 0.0).count();
        let textured = gt.textured.as_slice().iter().filter(|t| **t).count();
        println!(
            "{}: {} textured pixels, {} with a distance prior ({:.0}%)",
            view.id,
            textured,
            with_depth,
            100.0 * with_depth as f64 / dist.len() as f64
        );
    }
    write_synth(&out, &scene, 128)?;
    println!("wrote {} views and ground truth to {}", scene.views.len(), out.display());
    Ok(())
}
