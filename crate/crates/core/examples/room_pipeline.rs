//! Synthetic room end to end: generate, train, extract, evaluate.
//!
//! ```text
//! cargo run --release --example room_pipeline -- [iterations] [seed] [out-dir]
//! ```

use std::path::PathBuf;

use roomsdf::pipeline::{run_pipeline, PipelineConfig};

fn main() -> roomsdf::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iterations = args.first().and_then(|a| a.parse().ok()).unwrap_or(1000);
    let seed = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let out = args.get(2).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("room_pipeline"));

    let mut config = PipelineConfig::default().with_seed(seed);
    config.train.iterations = iterations;
    let report = run_pipeline(&config, &out)?;
    let m = &report.metrics;
    println!("output: {}", out.display());
    println!(
        "acc {:.4}  comp {:.4}  overall {:.4}  precision {:.1}  recall {:.1}  F {:.1}",
        m.accuracy, m.completeness, m.overall, m.precision, m.recall, m.fscore
    );
    println!("{} steps in {:.0}s", report.steps, report.train_seconds);
    Ok(())
}
