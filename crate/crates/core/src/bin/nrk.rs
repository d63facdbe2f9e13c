use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use roomsdf::evaluation::ReconMetrics;
use roomsdf::extraction::{extract_mesh, read_ply, write_ply, ExtractOptions};
use roomsdf::pipeline::{
    evaluate_meshes, load_model, load_preprocessed, read_run_info, run_pipeline, write_run_info, EvalOptions,
    PipelineConfig, RunInfo,
};
use roomsdf::preprocess::PreprocessOptions;
use roomsdf::renderer::{render_view, RenderOptions};
use roomsdf::scene_io::{load_scene, save_scene, LoadOptions, PixelMap, SceneBundle, SceneFrame, SceneMeta, Vec3};
use roomsdf::synth::{generate, write_synth, SynthConfig};
use roomsdf::trainer::{fit, TrainConfig};
use roomsdf::{Error, Result};

#[derive(Parser)]
#[command(name = "nrk", version, about = "Indoor neural SDF reconstruction")]
struct Cli {
    /// Worker threads (falls back to NRK_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory with ground truth.
    Synth(SynthArgs),
    /// Validate a scene directory and print a summary.
    Ingest { dir: PathBuf },
    /// Normalize a scene and filter its priors.
    Preprocess(PreprocessArgs),
    /// Train a model on a scene.
    Train(TrainArgs),
    /// Render color, depth and normals of one view.
    Render(RenderArgs),
    /// Extract the fused mesh of a trained run.
    Extract(ExtractArgs),
    /// Compare two meshes.
    Eval(EvalArgs),
    /// Synthetic scene through training, extraction and evaluation.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "room")]
    preset: String,
    #[arg(long, default_value_t = 24)]
    views: usize,
    #[arg(long, default_value_t = 96)]
    width: usize,
    #[arg(long, default_value_t = 72)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lattice resolution of the ground-truth mesh.
    #[arg(long, default_value_t = 256)]
    gt_res: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep the sharpest image of every group of ten.
    #[arg(long)]
    keyframes: bool,
    /// Erode undefined distance-prior regions by this many pixels.
    #[arg(long)]
    erode: Option<usize>,
    /// Keep every normal prior regardless of uncertainty.
    #[arg(long)]
    no_filter: bool,
}

#[derive(Args)]
struct TrainArgs {
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML or JSON training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Loss-term preset (base, base_prior, full, ...).
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the full-size networks and batch instead of the desk defaults.
    #[arg(long)]
    full_size: bool,
    /// Continue from the newest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct RenderArgs {
    run: PathBuf,
    /// View id; defaults to the first view.
    #[arg(long)]
    view: Option<String>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    coarse: usize,
    #[arg(long, default_value_t = 64)]
    fine: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    run: PathBuf,
    #[arg(long, default_value_t = 256)]
    res: usize,
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Also write the raw marching-cubes mesh here.
    #[arg(long)]
    raw_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Re-fuse both meshes from this scene's cameras before comparing.
    #[arg(long)]
    trim_by_views: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    #[arg(long, default_value_t = 0.005)]
    voxel: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, default_value = "room")]
    preset: String,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    ablation: Option<String>,
    /// TOML or JSON pipeline config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "pipeline_out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let threads = cli
        .threads
        .or_else(|| std::env::var("NRK_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Ingest { dir } => ingest(&dir),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Extract(a) => extract(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        preset: a.preset,
        views: a.views,
        width: a.width,
        height: a.height,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let scene = generate(&config)?;
    write_synth(&a.out, &scene, a.gt_res)?;
    println!("wrote {} views to {}", scene.views.len(), a.out.display());
    Ok(())
}

fn coverage<T>(map: Option<&PixelMap<T>>, defined: impl Fn(&T) -> bool) -> String {
    match map {
        Some(m) => format!("{:5.1}%", 100.0 * m.as_slice().iter().filter(|v| defined(v)).count() as f64 / m.len() as f64),
        None => "    -".into(),
    }
}

fn ingest(dir: &Path) -> Result<()> {
    let scene = load_scene(dir, LoadOptions::default())?;
    println!("scene {}", dir.display());
    println!("  views       {}", scene.views.len());
    if let Some(v) = scene.views.first() {
        println!("  resolution  {}x{}", v.width(), v.height());
    }
    let t = scene.t_opt;
    println!("  t_opt       ({:.4}, {:.4}, {:.4})", t.x, t.y, t.z);
    println!("  s_scale     {:.4}", scene.s_scale);
    println!("  {:<16} {:>6} {:>6}", "view", "dist", "normal");
    for v in &scene.views {
        println!(
            "  {:<16} {} {}",
            v.id,
            coverage(v.distance_prior.as_ref(), |d| *d > 0.0),
            coverage(v.normal_prior.as_ref(), |n: &Vec3| n.norm() > 0.0)
        );
    }
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let opts = PreprocessOptions {
        select_keyframes: a.keyframes,
        erode_radius: a.erode,
        filter_normals: !a.no_filter,
    };
    let scene = load_preprocessed(&a.dir, opts)?;
    let meta = SceneMeta {
        height: 0,
        width: 0,
        views: vec![],
        frame: SceneFrame::Optimization,
        t_opt: Some([scene.t_opt.x, scene.t_opt.y, scene.t_opt.z]),
        s_scale: Some(scene.s_scale),
    };
    save_scene(&a.out, &scene.views, &meta)?;
    println!("wrote {} normalized views to {} (s = {:.4})", scene.views.len(), a.out.display(), scene.s_scale);
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &a.config {
        Some(path) => TrainConfig::from_file(path)?,
        None if a.full_size => TrainConfig::default(),
        None => TrainConfig::desk(),
    };
    if let Some(name) = &a.ablation {
        config = config.with_preset(name)?;
    }
    if let Some(n) = a.iters {
        config.iterations = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn train(a: TrainArgs) -> Result<()> {
    let config = train_config(&a)?;
    let scene = load_preprocessed(&a.scene, PreprocessOptions::default())?;
    write_run_info(&a.out, &RunInfo { scene_dir: a.scene.clone() })?;
    let outcome = fit(&scene, &config, &a.out, a.resume, None)?;
    println!(
        "trained {} steps, final loss {}, checkpoint {}",
        outcome.steps,
        outcome.last_total.map_or("-".into(), |l| format!("{l:.5}")),
        outcome.checkpoint.display()
    );
    Ok(())
}

fn run_scene(run: &Path, scene: Option<&PathBuf>) -> Result<SceneBundle> {
    let dir = match scene {
        Some(d) => d.clone(),
        None => read_run_info(run)?.scene_dir,
    };
    load_preprocessed(&dir, PreprocessOptions::default())
}

fn save_png(map: &PixelMap<Vec3>, path: &Path) -> Result<()> {
    let mut img = image::RgbImage::new(map.width() as u32, map.height() as u32);
    for (c, r, v) in map.indexed() {
        let q = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
        img.put_pixel(c as u32, r as u32, image::Rgb([q(v.x), q(v.y), q(v.z)]));
    }
    img.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn render(a: RenderArgs) -> Result<()> {
    let scene = run_scene(&a.run, a.scene.as_ref())?;
    let model = load_model(&a.run)?;
    let view = match &a.view {
        Some(id) => scene
            .view(id)
            .ok_or_else(|| Error::Argument(format!("no view `{id}` in the scene")))?,
        None => scene.views.first().ok_or_else(|| Error::Argument("scene has no views".into()))?,
    };
    let opts = RenderOptions {
        n_coarse: a.coarse,
        n_fine: a.fine,
        cube_half_extent: scene.cube_half_extent,
    };
    let out = render_view(&model, view, &opts);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    let max_depth = out.depth.as_slice().iter().cloned().fold(1e-9, f64::max);
    save_png(&out.color, &a.out.join(format!("{}_color.png", view.id)))?;
    save_png(&out.depth.map(|d| Vec3::repeat(d / max_depth)), &a.out.join(format!("{}_depth.png", view.id)))?;
    let normals = out.normal.map(|n| {
        let len = n.norm();
        if len > 0.0 {
            (n / len + Vec3::repeat(1.0)) * 0.5
        } else {
            Vec3::zeros()
        }
    });
    save_png(&normals, &a.out.join(format!("{}_normal.png", view.id)))?;
    println!("rendered view {} to {}", view.id, a.out.display());
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let scene = run_scene(&a.run, a.scene.as_ref())?;
    let model = load_model(&a.run)?;
    let opts = ExtractOptions {
        resolution: a.res,
        ..ExtractOptions::default()
    };
    let out = extract_mesh(&model, &scene, &opts)?;
    if let Some(raw) = &a.raw_out {
        write_ply(&out.raw, raw, true)?;
    }
    write_ply(&out.fused, &a.out, true)?;
    println!(
        "wrote {} ({} vertices, {} triangles)",
        a.out.display(),
        out.fused.vertices.len(),
        out.fused.triangles.len()
    );
    Ok(())
}

fn print_metrics(m: &ReconMetrics) {
    println!("{:>10} {:>8} {:>8} {:>8} {:>8} {:>8}", "precision", "recall", "F", "acc", "comp", "overall");
    println!(
        "{:>10.2} {:>8.2} {:>8.2} {:>8.4} {:>8.4} {:>8.4}",
        m.precision, m.recall, m.fscore, m.accuracy, m.completeness, m.overall
    );
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("metrics serialize");
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = read_ply(&a.pred)?;
    let gt = read_ply(&a.gt)?;
    let scene = a
        .trim_by_views
        .as_ref()
        .map(|d| load_preprocessed(d, PreprocessOptions::default()))
        .transpose()?;
    let opts = EvalOptions {
        voxel: a.voxel,
        threshold: a.threshold,
        trim: scene.is_some(),
        seed: a.seed,
    };
    let m = evaluate_meshes(&pred, &gt, scene.as_ref(), &opts, &ExtractOptions::default())?;
    print_metrics(&m);
    let out = a.out.unwrap_or_else(|| PathBuf::from("metrics.json"));
    write_json(&m, &out)
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            } else {
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
        }
        None => PipelineConfig::default(),
    }
    .with_seed(a.seed);
    config.synth.preset = a.preset;
    if let Some(v) = a.views {
        config.synth.views = v;
    }
    if let Some(n) = a.iters {
        config.train.iterations = n;
    }
    if let Some(name) = &a.ablation {
        config.train = config.train.with_preset(name)?;
    }
    let report = run_pipeline(&config, &a.out)?;
    print_metrics(&report.metrics);
    println!(
        "{} steps, train {:.0}s, total {:.0}s, metrics in {}",
        report.steps,
        report.train_seconds,
        report.total_seconds,
        a.out.join("metrics.json").display()
    );
    Ok(())
}
