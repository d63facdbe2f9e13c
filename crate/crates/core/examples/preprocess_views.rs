//! Keyframe selection by blur score and scene normalization from the
//! distance priors.

use roomsdf::preprocess::{blur_score, compute_normalization, fused_prior_points, select_keyframes};
use roomsdf::scene_io::{PixelMap, Vec3};
use roomsdf::synth::{generate, SynthConfig};

/// 3x3 box blur, applied `passes` times.
fn blur(img: &PixelMap<Vec3>, passes: usize) -> PixelMap<Vec3> {
    let mut cur = img.clone();
    for _ in 0..passes {
        let (w, h) = (cur.width(), cur.height());
        cur = PixelMap::from_fn(w, h, |c, r| {
            let mut acc = Vec3::zeros();
            let mut n = 0.0;
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    acc += cur.get(cc, rr);
                    n += 1.0;
                }
            }
            acc / n
        });
    }
    cur
}

fn main() -> roomsdf::Result<()> {
    let synth = generate(&SynthConfig { views: 20, ..SynthConfig::default() })?;
    // Blur every view except one per group of ten by a varying amount.
    let images: Vec<PixelMap<Vec3>> = synth
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| if i % 10 == 7 { v.image.clone() } else { blur(&v.image, 1 + i % 3) })
        .collect();
    for (i, img) in images.iter().enumerate().take(10) {
        println!("view {i:>2}: blur score {:.5}", blur_score(img)?);
    }
    let refs: Vec<&PixelMap<Vec3>> = images.iter().collect();
    println!("keyframes: {:?}", select_keyframes(&refs)?);

    let points = fused_prior_points(&synth.views);
    let (t, s) = compute_normalization(&synth.views)?;
    println!(
        "{} prior points, bounding-box center ({:.3}, {:.3}, {:.3}), scale {:.3}",
        points.len(),
        t.x,
        t.y,
        t.z,
        s
    );
    Ok(())
}
