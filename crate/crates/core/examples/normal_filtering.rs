//! Uncertainty filtering of corrupted normal priors on the synthetic room.

use roomsdf::evaluation::normal_metrics;
use roomsdf::preprocess::filter_normals;
use roomsdf::synth::{generate, SynthConfig};

fn main() -> roomsdf::Result<()> {
    println!("{:>4} {:>10} {:>10} {:>8}", "seed", "raw mean", "kept mean", "kept %");
    for seed in 0..5 {
        let synth = generate(&SynthConfig { views: 6, seed, ..SynthConfig::default() })?;
        let (mut raw_sum, mut kept_sum, mut kept, mut total) = (0.0, 0.0, 0, 0);
        for (view, gt) in synth.views.iter().zip(&synth.ground_truth) {
            let raw = view.normal_prior.as_ref().unwrap();
            let filtered = filter_normals(raw, view.uncertainty.as_ref().unwrap())?;
            let a = normal_metrics(raw, &gt.normal, None)?;
            let b = normal_metrics(&filtered, &gt.normal, None)?;
            raw_sum += a.mean;
            kept_sum += b.mean;
            kept += b.pixels;
            total += a.pixels;
        }
        let n = synth.views.len() as f64;
        println!(
            "{seed:>4} {:>10.3} {:>10.3} {:>8.1}",
            raw_sum / n,
            kept_sum / n,
            100.0 * kept as f64 / total as f64
        );
    }
    Ok(())
}
