//! Compares analytic training gradients of a tiny model with central
//! finite differences, per loss term.

use roomsdf::fields::{GeometryConfig, ModelConfig, RadianceConfig, SceneModel};
use roomsdf::scene_io::SceneBundle;
use roomsdf::synth::{generate, SynthConfig};
use roomsdf::trainer::{evaluate_plan, plan_step, LossTerms, TrainConfig};

fn tiny() -> TrainConfig {
    TrainConfig {
        rays_per_batch: 8,
        n_coarse: 4,
        n_fine: 0,
        model: ModelConfig {
            geometry: GeometryConfig {
                hidden_layers: 2,
                hidden_width: 8,
                feature_dim: 4,
                encoding_freqs: 2,
                skip_layer: None,
                ..GeometryConfig::default()
            },
            radiance: RadianceConfig {
                hidden_layers: 2,
                hidden_width: 8,
                encoding_freqs_dir: 1,
                ..RadianceConfig::default()
            },
        },
        ..TrainConfig::default()
    }
}

fn main() -> roomsdf::Result<()> {
    let synth = generate(&SynthConfig { preset: "sphere".into(), views: 3, width: 16, height: 12, ..SynthConfig::default() })?;
    let scene = SceneBundle::from_world(synth.views, synth.t_opt, 1.25)?;
    let base = tiny();
    let model: SceneModel<f64> = SceneModel::init(&base.model, 5);
    let mut plan = plan_step(&model, &scene, &base, 0);
    plan.frozen_depth = Some(evaluate_plan(&model, &plan, &base, false)?.depth);

    let only = |pick: fn(&mut LossTerms)| {
        let mut t = LossTerms { color: false, prior_d: false, prior_n: false, smooth_d: false, consist_n: false, eikonal: false };
        pick(&mut t);
        t
    };
    let cases: [(&str, LossTerms); 7] = [
        ("color", only(|t| t.color = true)),
        ("prior_D", only(|t| t.prior_d = true)),
        ("prior_N", only(|t| t.prior_n = true)),
        ("smooth_D", only(|t| t.smooth_d = true)),
        ("consist_N", only(|t| t.consist_n = true)),
        ("eikonal", only(|t| t.eikonal = true)),
        ("total", LossTerms::full()),
    ];
    let h = 1e-5;
    for (name, terms) in cases {
        let config = TrainConfig { terms, ..base.clone() };
        let grads = evaluate_plan(&model, &plan, &config, true)?.grads.expect("requested");
        let eval = |m: &SceneModel<f64>| evaluate_plan(m, &plan, &config, false).map(|o| o.total);
        let (mut checked, mut worst) = (0, 0.0f64);
        for i in 0..model.geometry.num_params() {
            let (mut a, mut b) = (model.clone(), model.clone());
            a.geometry.mlp.params_mut()[i] += h;
            b.geometry.mlp.params_mut()[i] -= h;
            let fd = (eval(&a)? - eval(&b)?) / (2.0 * h);
            if grads.geometry[i].abs() > 1e-6 {
                checked += 1;
                worst = worst.max((fd - grads.geometry[i]).abs() / grads.geometry[i].abs());
            }
        }
        println!("{name:>10}: {checked:>4} geometry parameters checked, worst relative error {worst:.2e}");
    }
    Ok(())
}
